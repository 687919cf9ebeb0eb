//! Training procedures that orchestrate the main objective `L_f` and a side
//! objective `L_z` over a [`ModelStack`].
//!
//! * `simultaneous` descends `ω_main·L_f + ω_side·L_z` on every block.
//! * `decoupled` trains (φ, β) on `L_z`, then ψ alone on `L_f`.
//! * `pretrain-finetune` runs `decoupled`, then adapts (φ, ψ) on `L_f`.
//!
//! Procedures implement [`Procedure`] and are looked up by name in
//! [`ProcedureRegistry`].

mod optimizer;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SideBatch, SideInfo};
use crate::error::{Error, Result};
use crate::models::{Block, Map, ModelStack};
use crate::patterns::{loss_supervised, Grads, ObjectiveWeights, SideObjective, SideUnit};
use crate::rng::Rng;

pub use optimizer::{nesterov_step, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcedureKind {
    Decoupled,
    Simultaneous,
    PretrainFinetune,
}

impl ProcedureKind {
    pub const ALL: [ProcedureKind; 3] = [
        ProcedureKind::Decoupled,
        ProcedureKind::Simultaneous,
        ProcedureKind::PretrainFinetune,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProcedureKind::Decoupled => "decoupled",
            ProcedureKind::Simultaneous => "simultaneous",
            ProcedureKind::PretrainFinetune => "pretrain-finetune",
        }
    }
}

impl fmt::Display for ProcedureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProcedureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ProcedureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "procedure",
                name: s.into(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub procedure: ProcedureKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Record full-data losses after every epoch.
    pub trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            procedure: ProcedureKind::Simultaneous,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 100,
            finetune_epochs: 10,
            finetune_lr: 0.001,
            batch_size: 20,
            seed: 0,
            trace: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.finetune_lr > 0.0 && self.finetune_lr.is_finite()) {
            return bad(format!(
                "finetune learning rate must be positive, got {}",
                self.finetune_lr
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        Ok(())
    }
}

/// Full-data losses after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub main_loss: f64,
    pub side_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Final `L_f` over the whole training set.
    pub main_loss: f64,
    /// Final `L_z` over all side units (NaN without a side objective).
    pub side_loss: f64,
    pub trace: Vec<TraceRow>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    /// Trace as CSV with header `epoch,main_loss,side_loss`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,main_loss,side_loss\n");
        for r in &self.trace {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.main_loss, r.side_loss));
        }
        out
    }
}

/// One way of ordering `L_f` and `L_z` during training.
pub trait Procedure: Send + Sync {
    fn kind(&self) -> ProcedureKind;

    fn train(
        &self,
        stack: &mut ModelStack,
        side: &dyn SideObjective,
        weights: ObjectiveWeights,
        data: &Dataset,
        config: &TrainConfig,
    ) -> Result<TrainReport>;
}

/// Weighted objective over one step's batches.
struct StepObjective<'a> {
    side: Option<&'a dyn SideObjective>,
    main_weight: f64,
    side_weight: f64,
}

impl StepObjective<'_> {
    fn gradient(
        &self,
        stack: &ModelStack,
        blocks: &[Block],
        data: &Dataset,
        main_idx: &[usize],
        side_idx: &[usize],
    ) -> Result<Vec<f64>> {
        let mut total = Grads::default();
        if self.main_weight != 0.0 && !main_idx.is_empty() {
            let (x, y) = gather_labeled(data, main_idx)?;
            let g = loss_supervised(&stack.psi, &stack.phi, &x, &y)?;
            total.add_scaled(&g.grads, self.main_weight);
        }
        if let Some(side) = self.side {
            if self.side_weight != 0.0 && !side_idx.is_empty() {
                let batch = SideBatch::gather(data, side_idx)?;
                let g = side.loss(stack, &batch)?;
                total.add_scaled(&g.grads, self.side_weight);
            }
        }
        Ok(total.flatten(stack, blocks))
    }
}

fn gather_labeled<'a>(data: &'a Dataset, idx: &[usize]) -> Result<(Vec<&'a [f64]>, Vec<f64>)> {
    let y = data.labels()?;
    Ok((
        idx.iter().map(|&i| data.x[i].as_slice()).collect(),
        idx.iter().map(|&i| y[i]).collect(),
    ))
}

/// Full-data main loss.
pub fn evaluate_main(stack: &ModelStack, data: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (x, y) = gather_labeled(data, &all)?;
    Ok(loss_supervised(&stack.psi, &stack.phi, &x, &y)?.value)
}

/// Full-data side loss.
pub fn evaluate_side(stack: &ModelStack, side: &dyn SideObjective, data: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.side_units()).collect();
    let batch = SideBatch::gather(data, &all)?;
    Ok(side.loss(stack, &batch)?.value)
}

fn check_side_data(side: &dyn SideObjective, data: &Dataset) -> Result<()> {
    let ok = matches!(
        (side.unit(), &data.side),
        (SideUnit::Samples, SideInfo::PerSample(_))
            | (SideUnit::Transitions, SideInfo::Relative(_))
            | (SideUnit::Pairs, SideInfo::Pairwise(_))
    );
    if !ok {
        return Err(Error::Inapplicable {
            pattern: side.name().to_string(),
            side: data.side.kind_name().to_string(),
        });
    }
    if side.needs_labels() && data.y.is_none() {
        return Err(Error::InvalidInput(format!("pattern `{}` needs labels", side.name())));
    }
    Ok(())
}

/// How side units are batched alongside the main batches.
enum SideSchedule {
    None,
    /// Per-sample side information reuses the main batch indices.
    Aligned,
    /// Side units shuffled separately and split into as many batches.
    Separate(Box<Rng>),
}

/// Runs `epochs` of minibatch Nesterov descent on `blocks`.
struct Phase<'a> {
    objective: StepObjective<'a>,
    blocks: &'a [Block],
    lr: f64,
    epochs: usize,
    /// Batches are drawn over labeled samples when true, over side units otherwise.
    main_batches: bool,
}

impl Phase<'_> {
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        stack: &mut ModelStack,
        data: &Dataset,
        config: &TrainConfig,
        shuffle: &mut Rng,
        mut schedule: SideSchedule,
        trace: &mut Option<TraceCtx<'_>>,
    ) -> Result<()> {
        let mut params = stack.flatten(self.blocks);
        let mut state = OptimizerState::new(params.len());
        let units = if self.main_batches {
            data.len()
        } else {
            data.side_units()
        };
        if units == 0 {
            return Err(Error::InvalidInput("no training units".into()));
        }
        let b = config.batch_size;
        let n_batches = units.div_ceil(b);
        let mut scratch = stack.clone();
        for _ in 0..self.epochs {
            let perm = shuffle.permutation(units);
            let side_perm = match &mut schedule {
                SideSchedule::Separate(rng) => Some(rng.permutation(data.side_units())),
                _ => None,
            };
            let side_chunk = side_perm.as_ref().map(|p| p.len().div_ceil(n_batches).max(1));
            for k in 0..n_batches {
                let batch = &perm[k * b..((k + 1) * b).min(units)];
                let (main_idx, side_idx): (&[usize], &[usize]) = if self.main_batches {
                    let side_idx: &[usize] = match (&schedule, &side_perm, side_chunk) {
                        (SideSchedule::Aligned, _, _) => batch,
                        (SideSchedule::Separate(_), Some(p), Some(c)) => {
                            let lo = (k * c).min(p.len());
                            &p[lo..((k + 1) * c).min(p.len())]
                        }
                        _ => &[],
                    };
                    (batch, side_idx)
                } else {
                    (&[], batch)
                };
                nesterov_step(
                    &mut params,
                    &mut state,
                    |theta| {
                        scratch.restore(self.blocks, theta)?;
                        self.objective.gradient(&scratch, self.blocks, data, main_idx, side_idx)
                    },
                    self.lr,
                    config.momentum,
                )?;
            }
            stack.restore(self.blocks, &params)?;
            if let Some(t) = trace {
                t.record(stack, data)?;
            }
        }
        stack.restore(self.blocks, &params)
    }
}

struct TraceCtx<'a> {
    side: Option<&'a dyn SideObjective>,
    rows: Vec<TraceRow>,
}

impl TraceCtx<'_> {
    fn record(&mut self, stack: &ModelStack, data: &Dataset) -> Result<()> {
        let main_loss = evaluate_main(stack, data)?;
        let side_loss = match self.side {
            Some(s) => evaluate_side(stack, s, data)?,
            None => f64::NAN,
        };
        self.rows.push(TraceRow {
            epoch: self.rows.len() + 1,
            main_loss,
            side_loss,
        });
        Ok(())
    }
}

fn finish(
    stack: &ModelStack,
    side: Option<&dyn SideObjective>,
    data: &Dataset,
    trace: Option<TraceCtx<'_>>,
    warnings: Vec<String>,
) -> Result<TrainReport> {
    let main_loss = evaluate_main(stack, data)?;
    let side_loss = match side {
        Some(s) => evaluate_side(stack, s, data)?,
        None => f64::NAN,
    };
    Ok(TrainReport {
        main_loss,
        side_loss,
        trace: trace.map(|t| t.rows).unwrap_or_default(),
        warnings,
    })
}

fn trace_ctx<'a>(config: &TrainConfig, side: Option<&'a dyn SideObjective>) -> Option<TraceCtx<'a>> {
    config.trace.then(|| TraceCtx { side, rows: Vec::new() })
}

fn all_blocks(stack: &ModelStack) -> Vec<Block> {
    let mut blocks = vec![Block::Phi, Block::Psi];
    if stack.beta.is_some() {
        blocks.push(Block::Beta);
    }
    blocks
}

/// Supervised training of (φ, ψ) on `L_f` alone.
pub fn train_supervised(stack: &mut ModelStack, data: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    data.labels()?;
    let root = Rng::new(config.seed);
    let mut trace = trace_ctx(config, None);
    let phase = Phase {
        objective: StepObjective {
            side: None,
            main_weight: 1.0,
            side_weight: 0.0,
        },
        blocks: &[Block::Phi, Block::Psi],
        lr: config.learning_rate,
        epochs: config.epochs,
        main_batches: true,
    };
    phase.run(
        stack,
        data,
        config,
        &mut root.fork("shuffle"),
        SideSchedule::None,
        &mut trace,
    )?;
    finish(stack, None, data, trace, Vec::new())
}

pub struct Simultaneous;

impl Procedure for Simultaneous {
    fn kind(&self) -> ProcedureKind {
        ProcedureKind::Simultaneous
    }

    fn train(
        &self,
        stack: &mut ModelStack,
        side: &dyn SideObjective,
        weights: ObjectiveWeights,
        data: &Dataset,
        config: &TrainConfig,
    ) -> Result<TrainReport> {
        config.validate()?;
        weights.validate()?;
        check_side_data(side, data)?;
        data.labels()?;
        let root = Rng::new(config.seed);
        let schedule = match &data.side {
            SideInfo::PerSample(z) if z.len() == data.len() => SideSchedule::Aligned,
            _ => SideSchedule::Separate(Box::new(root.fork("shuffle-side"))),
        };
        let blocks = all_blocks(stack);
        let mut trace = trace_ctx(config, Some(side));
        let phase = Phase {
            objective: StepObjective {
                side: Some(side),
                main_weight: weights.main,
                side_weight: weights.side,
            },
            blocks: &blocks,
            lr: config.learning_rate,
            epochs: config.epochs,
            main_batches: true,
        };
        phase.run(stack, data, config, &mut root.fork("shuffle"), schedule, &mut trace)?;
        finish(stack, Some(side), data, trace, Vec::new())
    }
}

pub struct Decoupled;

impl Decoupled {
    fn phases(
        stack: &mut ModelStack,
        side: &dyn SideObjective,
        data: &Dataset,
        config: &TrainConfig,
        trace: &mut Option<TraceCtx<'_>>,
    ) -> Result<()> {
        config.validate()?;
        check_side_data(side, data)?;
        data.labels()?;
        let side_blocks: Vec<Block> = side
            .side_blocks()
            .iter()
            .copied()
            .filter(|b| *b != Block::Beta || stack.beta.is_some())
            .collect();
        if side_blocks.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "pattern `{}` cannot be trained with the decoupled procedure",
                side.name()
            )));
        }
        let root = Rng::new(config.seed);
        let pretrain = Phase {
            objective: StepObjective {
                side: Some(side),
                main_weight: 0.0,
                side_weight: 1.0,
            },
            blocks: &side_blocks,
            lr: config.learning_rate,
            epochs: config.epochs,
            main_batches: false,
        };
        pretrain.run(
            stack,
            data,
            config,
            &mut root.fork("shuffle-side"),
            SideSchedule::None,
            trace,
        )?;
        let head = Phase {
            objective: StepObjective {
                side: None,
                main_weight: 1.0,
                side_weight: 0.0,
            },
            blocks: &[Block::Psi],
            lr: config.learning_rate,
            epochs: config.epochs,
            main_batches: true,
        };
        head.run(
            stack,
            data,
            config,
            &mut root.fork("shuffle"),
            SideSchedule::None,
            trace,
        )
    }
}

impl Procedure for Decoupled {
    fn kind(&self) -> ProcedureKind {
        ProcedureKind::Decoupled
    }

    fn train(
        &self,
        stack: &mut ModelStack,
        side: &dyn SideObjective,
        _weights: ObjectiveWeights,
        data: &Dataset,
        config: &TrainConfig,
    ) -> Result<TrainReport> {
        let mut trace = trace_ctx(config, Some(side));
        Self::phases(stack, side, data, config, &mut trace)?;
        finish(stack, Some(side), data, trace, Vec::new())
    }
}

pub struct PretrainFinetune;

impl Procedure for PretrainFinetune {
    fn kind(&self) -> ProcedureKind {
        ProcedureKind::PretrainFinetune
    }

    fn train(
        &self,
        stack: &mut ModelStack,
        side: &dyn SideObjective,
        _weights: ObjectiveWeights,
        data: &Dataset,
        config: &TrainConfig,
    ) -> Result<TrainReport> {
        let mut warnings = Vec::new();
        if matches!(stack.phi, Map::Linear(_)) {
            warnings.push(
                "pretrain-finetune with a linear phi: the supervised objective is convex, \
                 so finetuning cannot escape the decoupled solution's basin"
                    .to_string(),
            );
        }
        let mut trace = trace_ctx(config, Some(side));
        Decoupled::phases(stack, side, data, config, &mut trace)?;
        if config.finetune_epochs > 0 {
            let root = Rng::new(config.seed);
            let finetune = Phase {
                objective: StepObjective {
                    side: None,
                    main_weight: 1.0,
                    side_weight: 0.0,
                },
                blocks: &[Block::Phi, Block::Psi],
                lr: config.finetune_lr,
                epochs: config.finetune_epochs,
                main_batches: true,
            };
            finetune.run(
                stack,
                data,
                config,
                &mut root.fork("shuffle-finetune"),
                SideSchedule::None,
                &mut trace,
            )?;
        }
        finish(stack, Some(side), data, trace, warnings)
    }
}

pub type ProcedureFactory = fn() -> Box<dyn Procedure>;

/// Training procedures by name.
pub struct ProcedureRegistry {
    entries: BTreeMap<&'static str, ProcedureFactory>,
}

impl ProcedureRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: ProcedureFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<Box<dyn Procedure>> {
        self.entries.get(name).map(|f| f()).ok_or_else(|| Error::UnknownName {
            kind: "procedure",
            name: name.to_string(),
        })
    }
}

impl Default for ProcedureRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("simultaneous", || Box::new(Simultaneous));
        r.register("decoupled", || Box::new(Decoupled));
        r.register("pretrain-finetune", || Box::new(PretrainFinetune));
        r
    }
}

/// Train with the procedure named in `config`.
pub fn train(
    stack: &mut ModelStack,
    side: &dyn SideObjective,
    weights: ObjectiveWeights,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    ProcedureRegistry::default()
        .get(config.procedure.name())?
        .train(stack, side, weights, data, config)
}

#[cfg(test)]
mod tests;
