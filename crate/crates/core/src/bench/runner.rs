//! Benchmark cells: one (side information, method, labeled-set size, seed)
//! combination trained and scored on an independent test trajectory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineRegistry, BaselineSettings, LinearProjector, Penalty, Preprocess, Split};
use crate::data::{pairs_from_sequence, Dataset, SideInfo};
use crate::error::{Error, Result};
use crate::models::{InitScheme, LinearMap, LogisticHead, Map, MlpStack, ModelStack};
use crate::patterns::{
    BetaShape, ObjectiveWeights, PatternKind, PatternRegistry, PatternSpec, SideObjective, SideUnit, Sigma,
    TransformMode, DEFAULT_VARIANCE_PENALTY,
};
use crate::rng::Rng;
use crate::training::{ProcedureKind, ProcedureRegistry, TrainConfig};

use super::generator::{GeneratorConfig, Observations, Task, Trajectory};

/// Which side-information channel a cell trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideKind {
    /// Noisy copy of the state.
    Direct,
    /// Noisy state rotated together with distractors into a second view.
    Embedded,
    /// Noisy state increments.
    Relative,
}

impl SideKind {
    pub const ALL: [SideKind; 3] = [SideKind::Direct, SideKind::Embedded, SideKind::Relative];

    pub fn name(&self) -> &'static str {
        match self {
            SideKind::Direct => "direct",
            SideKind::Embedded => "embedded",
            SideKind::Relative => "relative",
        }
    }
}

impl fmt::Display for SideKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SideKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SideKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "side information",
                name: s.to_string(),
            })
    }
}

/// Which patterns may be trained with which side channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Applicability {
    allowed: BTreeMap<SideKind, BTreeSet<PatternKind>>,
}

impl Default for Applicability {
    fn default() -> Self {
        use PatternKind::*;
        let mut allowed = BTreeMap::new();
        allowed.insert(
            SideKind::Direct,
            [Direct, MultiTask, MultiViewCorr, PairwiseTransform]
                .into_iter()
                .collect(),
        );
        allowed.insert(
            SideKind::Embedded,
            [Direct, MultiTask, MultiViewCorr, MultiViewPred].into_iter().collect(),
        );
        allowed.insert(SideKind::Relative, [PairwiseTransform].into_iter().collect());
        Self { allowed }
    }
}

impl Applicability {
    pub fn allows(&self, side: SideKind, pattern: PatternKind) -> bool {
        self.allowed.get(&side).is_some_and(|s| s.contains(&pattern))
    }

    pub fn allow(&mut self, side: SideKind, pattern: PatternKind) {
        self.allowed.entry(side).or_default().insert(pattern);
    }

    pub fn patterns(&self, side: SideKind) -> Vec<PatternKind> {
        self.allowed
            .get(&side)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }
}

/// How a cell learns: a side-information pattern under a training
/// procedure, or a baseline that ignores side information.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Pattern {
        pattern: PatternKind,
        procedure: ProcedureKind,
    },
    Baseline(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub side: SideKind,
    pub method: Method,
}

/// Procedure column value for baseline rows.
pub const NO_PROCEDURE: &str = "none";

impl Cell {
    pub fn pattern(side: SideKind, pattern: PatternKind, procedure: ProcedureKind) -> Self {
        Self {
            side,
            method: Method::Pattern { pattern, procedure },
        }
    }

    pub fn baseline(side: SideKind, name: &str) -> Self {
        Self {
            side,
            method: Method::Baseline(name.to_string()),
        }
    }

    /// Value of the `pattern` CSV column.
    pub fn method_label(&self) -> String {
        match &self.method {
            Method::Pattern { pattern, .. } => pattern.name().to_string(),
            Method::Baseline(name) => name.clone(),
        }
    }

    /// Value of the `procedure` CSV column.
    pub fn procedure_label(&self) -> &'static str {
        match &self.method {
            Method::Pattern { procedure, .. } => procedure.name(),
            Method::Baseline(_) => NO_PROCEDURE,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.side, self.method_label(), self.procedure_label())
    }
}

/// Architecture of the representation map φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PhiFamily {
    Linear,
    /// Rectified hidden layers of the given widths.
    Mlp {
        hidden: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub phi: PhiFamily,
    /// Representation dim when the pattern does not force one.
    pub representation_dim: usize,
    /// Bias in a linear φ (an MLP φ always has biases).
    pub phi_bias: bool,
    /// Bias in the head ψ. Off by default: with a bias, the supervised term
    /// can be satisfied by the offset alone while the correlation pattern
    /// shrinks the representation towards zero.
    pub psi_bias: bool,
    pub beta_bias: bool,
    /// Initialization of φ. Starting a linear φ and ψ at zero leaves φ to
    /// the side objective until ψ has picked a sign; from a random start the
    /// head can settle on the wrong sign, after which the supervised term
    /// fights a side objective that fixes the sign of φ. An MLP φ needs a
    /// random start.
    pub phi_init: InitScheme,
    pub psi_init: InitScheme,
    pub beta_init: InitScheme,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            phi: PhiFamily::Linear,
            representation_dim: 1,
            phi_bias: false,
            psi_bias: false,
            beta_bias: false,
            phi_init: InitScheme::Zeros,
            psi_init: InitScheme::Zeros,
            beta_init: InitScheme::ScaledUniform,
        }
    }
}

impl StackConfig {
    /// Initialize each block of `stack` with its scheme.
    pub fn init(&self, stack: &mut ModelStack, rng: &Rng) {
        stack.phi.init(&mut rng.fork("phi"), self.phi_init);
        stack.psi.init(&mut rng.fork("psi"), self.psi_init);
        if let Some(b) = &mut stack.beta {
            b.init(&mut rng.fork("beta"), self.beta_init);
        }
    }
}

/// Default `(ω_main, ω_side)` of benchmark cells.
pub const BENCH_WEIGHTS: ObjectiveWeights = ObjectiveWeights { main: 0.01, side: 0.99 };

/// Epochs per benchmark cell. With the side objective on a unit scale the
/// correlation pattern needs well over 100 passes to recover the state
/// direction from the embedded view.
pub const BENCH_EPOCHS: usize = 300;

/// Everything a cell needs besides its key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// `length` and `seed` are ignored: cells set both.
    pub generator: GeneratorConfig,
    pub test_length: usize,
    pub train: TrainConfig,
    /// Conditioning of the inputs of φ. Fitted on the training inputs, or on
    /// their increments for transition-based patterns.
    pub preprocess: Preprocess,
    /// Conditioning of the side vectors, fitted on the training channel.
    /// φ can absorb any invertible change of coordinates, so this only
    /// fixes the scale of the side objective.
    pub side_preprocess: Preprocess,
    pub stack: StackConfig,
    /// Overrides the pattern's default σ.
    pub sigma: Option<Sigma>,
    /// γ of the correlation pattern. Only procedures that train the side
    /// objective on its own use it; under simultaneous training the
    /// supervised term already rules out the collapsed solution.
    pub variance_penalty: f64,
    pub transform_mode: TransformMode,
    pub orthogonality_weight: f64,
    /// Overrides every pattern's default objective weights. With both the
    /// inputs and the side vectors conditioned, the side objectives are of
    /// the same order as the supervised one and only dominate it when
    /// weighted heavily.
    pub weights: Option<ObjectiveWeights>,
    /// Overrides the correlation pattern's default weights only.
    pub multiview_corr_weights: Option<ObjectiveWeights>,
    pub grid: Vec<Penalty>,
    /// Neighbourhood for label-derived dissimilar pairs.
    pub pair_window: usize,
    pub applicability: Applicability,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            test_length: 50_000,
            train: TrainConfig {
                epochs: BENCH_EPOCHS,
                ..TrainConfig::default()
            },
            preprocess: Preprocess::default(),
            side_preprocess: Preprocess::Whiten,
            stack: StackConfig::default(),
            sigma: None,
            variance_penalty: DEFAULT_VARIANCE_PENALTY,
            transform_mode: TransformMode::Fixed,
            orthogonality_weight: 1.0,
            weights: Some(BENCH_WEIGHTS),
            multiview_corr_weights: None,
            grid: Penalty::default_grid(),
            pair_window: 5,
            applicability: Applicability::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.test_length == 0 {
            return Err(Error::InvalidConfig("test_length must be >= 1".into()));
        }
        if self.stack.representation_dim == 0 {
            return Err(Error::InvalidConfig("representation_dim must be >= 1".into()));
        }
        if let PhiFamily::Mlp { hidden } = &self.stack.phi {
            if hidden.is_empty() || hidden.contains(&0) {
                return Err(Error::InvalidConfig(
                    "MLP hidden widths must be nonempty and positive".into(),
                ));
            }
            if self.stack.phi_init == InitScheme::Zeros {
                return Err(Error::InvalidConfig("an MLP phi cannot start from zero weights".into()));
            }
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("empty regularization grid".into()));
        }
        for w in [self.weights, self.multiview_corr_weights].into_iter().flatten() {
            w.validate()?;
        }
        self.pattern_spec(PatternKind::Direct).validate()
    }

    pub fn pattern_spec(&self, kind: PatternKind) -> PatternSpec {
        let mut spec = PatternSpec::new(kind);
        if let Some(s) = self.sigma {
            spec.sigma = s;
        }
        spec.variance_penalty = self.variance_penalty;
        spec.transform_mode = self.transform_mode;
        spec.orthogonality_weight = self.orthogonality_weight;
        if let Some(w) = self.weights {
            spec.weights = w;
        }
        if kind == PatternKind::MultiViewCorr {
            if let Some(w) = self.multiview_corr_weights {
                spec.weights = w;
            }
        }
        spec
    }

    /// [`Self::pattern_spec`] as trained by `procedure`.
    pub fn pattern_spec_for(&self, kind: PatternKind, procedure: ProcedureKind) -> PatternSpec {
        let mut spec = self.pattern_spec(kind);
        if procedure == ProcedureKind::Simultaneous {
            spec.variance_penalty = 0.0;
        }
        spec
    }

    /// Every applicable pattern under each procedure it supports, followed
    /// by every registered baseline.
    pub fn default_cells(&self, side: SideKind, procedures: &[ProcedureKind]) -> Vec<Cell> {
        let registry = PatternRegistry::default();
        let mut cells = Vec::new();
        for pattern in self.applicability.patterns(side) {
            let Ok(objective) = registry.build(&self.pattern_spec(pattern)) else {
                continue;
            };
            for &procedure in procedures {
                if procedure != ProcedureKind::Simultaneous && objective.side_blocks().is_empty() {
                    continue;
                }
                cells.push(Cell::pattern(side, pattern, procedure));
            }
        }
        for name in BaselineRegistry::default().names() {
            cells.push(Cell::baseline(side, name));
        }
        cells
    }
}

/// One row of the raw results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub side_info: String,
    pub pattern: String,
    pub procedure: String,
    pub n_train: usize,
    pub seed: u64,
    pub test_accuracy: f64,
    pub main_loss: f64,
    pub side_loss: f64,
    pub wall_ms: u64,
    pub failed: bool,
}

/// Task rotations and test trajectory shared by all cells of one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub task: Task,
    pub test: Observations,
}

impl SeedData {
    pub fn new(seed: u64, config: &BenchConfig) -> Result<Self> {
        let root = Rng::new(seed);
        let task = Task::sample(&config.generator, &mut root.fork("task"))?;
        let test = task.observations(&config.generator, config.test_length, &root.fork("test"))?;
        Ok(Self { seed, task, test })
    }

    pub fn train_trajectory(&self, config: &BenchConfig, n_train: usize) -> Result<Trajectory> {
        self.task
            .trajectory(&config.generator, n_train, &Rng::new(self.seed).fork("train"))
    }

    /// Bayes-rate oracle on this seed's test states.
    pub fn bayes_rate(&self, noise_std: f64) -> f64 {
        super::generator::bayes_rate(&self.test.s, noise_std, &mut Rng::new(self.seed).fork("bayes"))
    }
}

/// Rejects inapplicable (side, pattern) combinations and unknown baselines.
pub fn check_cell(cell: &Cell, config: &BenchConfig) -> Result<()> {
    match &cell.method {
        Method::Pattern { pattern, procedure } => {
            if !config.applicability.allows(cell.side, *pattern) {
                return Err(Error::Inapplicable {
                    pattern: pattern.name().to_string(),
                    side: cell.side.name().to_string(),
                });
            }
            let objective = PatternRegistry::default().build(&config.pattern_spec(*pattern))?;
            if *procedure != ProcedureKind::Simultaneous && objective.side_blocks().is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "pattern `{pattern}` cannot be trained with the {procedure} procedure"
                )));
            }
            Ok(())
        }
        Method::Baseline(name) => BaselineRegistry::default().get(name).map(|_| ()),
    }
}

/// Train and score one cell. Inapplicable cells are rejected up front;
/// failures during training are recorded in the row instead.
pub fn run_cell(cell: &Cell, n_train: usize, seed: u64, config: &BenchConfig) -> Result<ResultRecord> {
    config.validate()?;
    check_cell(cell, config)?;
    let data = SeedData::new(seed, config)?;
    run_cell_with(cell, n_train, &data, config)
}

/// [`run_cell`] with precomputed per-seed data.
pub fn run_cell_with(cell: &Cell, n_train: usize, data: &SeedData, config: &BenchConfig) -> Result<ResultRecord> {
    check_cell(cell, config)?;
    if n_train < 2 {
        return Err(Error::InvalidConfig(format!("n_train must be >= 2, got {n_train}")));
    }
    let start = Instant::now();
    let outcome = match &cell.method {
        Method::Pattern { pattern, procedure } => run_pattern(cell.side, *pattern, *procedure, n_train, data, config),
        Method::Baseline(name) => run_baseline(name, n_train, data, config),
    };
    let wall_ms = start.elapsed().as_millis() as u64;
    let (test_accuracy, main_loss, side_loss, failed) = match outcome {
        Ok(o) => (o.0, o.1, o.2, false),
        Err(e) => {
            log::warn!("cell {cell} n={n_train} seed={} failed: {e}", data.seed);
            (f64::NAN, f64::NAN, f64::NAN, true)
        }
    };
    Ok(ResultRecord {
        side_info: cell.side.name().to_string(),
        pattern: cell.method_label(),
        procedure: cell.procedure_label().to_string(),
        n_train,
        seed: data.seed,
        test_accuracy,
        main_loss,
        side_loss,
        wall_ms,
        failed,
    })
}

fn rows(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|v| vec![*v]).collect()
}

fn differences(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect()
}

fn condition(pre: Preprocess, z: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    pre.fit(&z)?.apply_all(&z)
}

/// Side information of kind `side` in the layout `unit` expects.
fn side_info(
    side: SideKind,
    objective: &dyn SideObjective,
    traj: &Trajectory,
    config: &BenchConfig,
) -> Result<SideInfo> {
    let unit = objective.unit();
    let pre = config.side_preprocess;
    if unit == SideUnit::Pairs {
        return Ok(SideInfo::Pairwise(pairs_from_sequence(&traj.y, config.pair_window)));
    }
    let per_sample = match side {
        SideKind::Direct => Some(rows(&traj.z_direct)),
        SideKind::Embedded => Some(traj.z_embedded.clone()),
        SideKind::Relative => None,
    };
    match (unit, per_sample) {
        (SideUnit::Samples, Some(z)) => Ok(SideInfo::PerSample(condition(pre, z)?)),
        // transformation targets from a per-sample channel are its increments
        (SideUnit::Transitions, Some(z)) => Ok(SideInfo::Relative(differences(&condition(pre, z)?))),
        (SideUnit::Transitions, None) => Ok(SideInfo::Relative(condition(pre, rows(&traj.z_relative))?)),
        _ => Err(Error::Inapplicable {
            pattern: format!("{unit:?}").to_lowercase(),
            side: side.name().to_string(),
        }),
    }
}

/// Build the stack a pattern needs for inputs of dim `in_dim`.
pub fn build_stack(
    objective: &dyn SideObjective,
    in_dim: usize,
    side_dim: usize,
    stack: &StackConfig,
) -> Result<ModelStack> {
    let k = objective
        .required_representation_dim(side_dim)
        .unwrap_or(stack.representation_dim);
    let phi = match &stack.phi {
        PhiFamily::Linear => Map::Linear(LinearMap::new(in_dim, k, stack.phi_bias)),
        PhiFamily::Mlp { hidden } => {
            let mut dims = vec![in_dim];
            dims.extend_from_slice(hidden);
            dims.push(k);
            Map::Mlp(MlpStack::new(&dims)?)
        }
    };
    let beta = match objective.beta_shape() {
        BetaShape::None => None,
        BetaShape::FromRepresentation => Some(Map::Linear(LinearMap::new(k, side_dim, stack.beta_bias))),
        BetaShape::FromSide => Some(Map::Linear(LinearMap::new(side_dim, k, stack.beta_bias))),
    };
    ModelStack::new(phi, LogisticHead::new(k, stack.psi_bias), beta)
}

fn stack_accuracy(stack: &ModelStack, pre: &LinearProjector, test: &Observations) -> Result<f64> {
    let mut hits = 0usize;
    for (x, y) in test.x.iter().zip(&test.y) {
        let p = stack.predict(&pre.apply(x)?)?;
        let guess = if p >= 0.5 { 1.0 } else { 0.0 };
        if guess == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.x.len() as f64)
}

fn run_pattern(
    side: SideKind,
    pattern: PatternKind,
    procedure: ProcedureKind,
    n_train: usize,
    data: &SeedData,
    config: &BenchConfig,
) -> Result<(f64, f64, f64)> {
    let spec = config.pattern_spec_for(pattern, procedure);
    let objective = PatternRegistry::default().build(&spec)?;
    let traj = data.train_trajectory(config, n_train)?;
    let pre = match objective.unit() {
        SideUnit::Transitions => config.preprocess.fit(&differences(&traj.x))?,
        _ => config.preprocess.fit(&traj.x)?,
    };
    let x = pre.apply_all(&traj.x)?;
    let side_data = side_info(side, objective.as_ref(), &traj, config)?;
    let side_dim = side_data.dim();
    let dataset = Dataset::new(x, Some(traj.y.clone()), side_data)?;

    let root = Rng::new(data.seed);
    let mut stack = build_stack(objective.as_ref(), dataset.input_dim(), side_dim, &config.stack)?;
    config.stack.init(&mut stack, &root.fork("init"));
    let train = TrainConfig {
        procedure,
        seed: root.fork("optimizer").seed(),
        ..config.train.clone()
    };
    let report = ProcedureRegistry::default().get(procedure.name())?.train(
        &mut stack,
        objective.as_ref(),
        spec.weights,
        &dataset,
        &train,
    )?;
    for w in &report.warnings {
        log::debug!("{side}/{pattern}/{procedure} n={n_train} seed={}: {w}", data.seed);
    }
    let acc = stack_accuracy(&stack, &pre, &data.test)?;
    Ok((acc, report.main_loss, report.side_loss))
}

fn run_baseline(name: &str, n_train: usize, data: &SeedData, config: &BenchConfig) -> Result<(f64, f64, f64)> {
    let baseline = BaselineRegistry::default().get(name)?;
    let traj = data.train_trajectory(config, n_train)?;
    let settings = BaselineSettings {
        train: TrainConfig {
            seed: Rng::new(data.seed).fork("optimizer").seed(),
            ..config.train.clone()
        },
        grid: config.grid.clone(),
        preprocess: config.preprocess,
    };
    let split = Split {
        train_x: &traj.x,
        train_y: &traj.y,
        test_x: &data.test.x,
        test_y: &data.test.y,
    };
    let out = baseline.evaluate(split, &settings)?;
    Ok((out.test_accuracy, out.train_loss, f64::NAN))
}

/// Cartesian product of cells, labeled-set sizes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub cells: Vec<Cell>,
    pub n_train: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Sweep {
    pub fn len(&self) -> usize {
        self.cells.len() * self.n_train.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Default labeled-set sizes.
pub const DEFAULT_N_TRAIN: [usize; 6] = [25, 50, 100, 200, 400, 800];

/// Run every (cell, n, seed) job on up to `workers` threads. Rows come back
/// ordered by cell, then n, then seed, whatever the worker count.
pub fn run_sweep(sweep: &Sweep, config: &BenchConfig, workers: usize) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    if sweep.is_empty() {
        return Err(Error::InvalidConfig("empty sweep".into()));
    }
    for cell in &sweep.cells {
        check_cell(cell, config)?;
    }
    if let Some(n) = sweep.n_train.iter().find(|n| **n < 2) {
        return Err(Error::InvalidConfig(format!("n_train must be >= 2, got {n}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        let seed_data: Vec<Arc<SeedData>> = sweep
            .seeds
            .par_iter()
            .map(|&s| SeedData::new(s, config).map(Arc::new))
            .collect::<Result<_>>()?;
        let mut jobs: Vec<(&Cell, usize, &Arc<SeedData>)> = Vec::with_capacity(sweep.len());
        for cell in &sweep.cells {
            for &n in &sweep.n_train {
                jobs.extend(seed_data.iter().map(|d| (cell, n, d)));
            }
        }
        jobs.par_iter()
            .map(|(cell, n, data)| run_cell_with(cell, *n, data, config))
            .collect()
    })
}

/// One row of the aggregated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub side_info: String,
    pub pattern: String,
    pub procedure: String,
    pub n_train: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation over seeds divided by √n_seeds; NaN for a
    /// single seed.
    pub stderr: f64,
    /// Seeds that completed without failure.
    pub n_seeds: usize,
}

/// Mean and standard error of test accuracy per (side, pattern, procedure,
/// n), in order of first appearance. Failed rows are left out.
pub fn aggregate(records: &[ResultRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String, String, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = (r.side_info.clone(), r.pattern.clone(), r.procedure.clone(), r.n_train);
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if !r.failed {
            entry.push(r.test_accuracy);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let acc = &groups[&key];
            let n = acc.len();
            let mean = if n == 0 {
                f64::NAN
            } else {
                acc.iter().sum::<f64>() / n as f64
            };
            let stderr = if n < 2 {
                f64::NAN
            } else {
                let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            };
            AggregateRow {
                side_info: key.0,
                pattern: key.1,
                procedure: key.2,
                n_train: key.3,
                mean_accuracy: mean,
                stderr,
                n_seeds: n,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        BenchConfig {
            generator: GeneratorConfig {
                d: 6,
                e: 4,
                ..GeneratorConfig::default()
            },
            test_length: 500,
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn default_applicability_matches_the_legends() {
        let a = Applicability::default();
        use PatternKind::*;
        assert_eq!(
            a.patterns(SideKind::Direct),
            vec![Direct, MultiTask, MultiViewCorr, PairwiseTransform]
        );
        assert_eq!(
            a.patterns(SideKind::Embedded),
            vec![Direct, MultiTask, MultiViewCorr, MultiViewPred]
        );
        assert_eq!(a.patterns(SideKind::Relative), vec![PairwiseTransform]);
        assert!(!a.allows(SideKind::Relative, Direct));
    }

    #[test]
    fn inapplicable_cell_is_rejected_before_compute() {
        let cell = Cell::pattern(SideKind::Relative, PatternKind::Direct, ProcedureKind::Decoupled);
        let err = run_cell(&cell, 10, 0, &tiny()).unwrap_err();
        assert!(matches!(err, Error::Inapplicable { .. }), "{err}");
        let cell = Cell::pattern(SideKind::Embedded, PatternKind::MultiViewPred, ProcedureKind::Decoupled);
        assert!(run_cell(&cell, 10, 0, &tiny()).is_err());
        assert!(run_cell(&Cell::baseline(SideKind::Direct, "svm"), 10, 0, &tiny()).is_err());
    }

    #[test]
    fn default_cells_skip_undecouplable_patterns() {
        let cells = tiny().default_cells(
            SideKind::Embedded,
            &[ProcedureKind::Decoupled, ProcedureKind::Simultaneous],
        );
        let labels: Vec<String> = cells
            .iter()
            .map(|c| format!("{}:{}", c.method_label(), c.procedure_label()))
            .collect();
        assert!(labels.contains(&"multi-view-pred:simultaneous".to_string()));
        assert!(!labels.contains(&"multi-view-pred:decoupled".to_string()));
        assert_eq!(cells.len(), 3 * 2 + 1 + 3);
    }

    #[test]
    fn every_default_cell_runs() {
        let config = tiny();
        for side in SideKind::ALL {
            for cell in config.default_cells(side, &ProcedureKind::ALL) {
                let r = run_cell(&cell, 30, 3, &config).unwrap();
                assert!(!r.failed, "{cell} failed");
                assert!((0.0..=1.0).contains(&r.test_accuracy));
                assert_eq!(r.side_info, side.name());
            }
        }
    }

    #[test]
    fn cells_are_deterministic() {
        let config = tiny();
        let cell = Cell::pattern(SideKind::Direct, PatternKind::MultiTask, ProcedureKind::Simultaneous);
        let a = run_cell(&cell, 40, 9, &config).unwrap();
        let b = run_cell(&cell, 40, 9, &config).unwrap();
        assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
        assert_eq!(a.main_loss.to_bits(), b.main_loss.to_bits());
        let c = run_cell(&cell, 40, 10, &config).unwrap();
        assert_ne!(a.main_loss.to_bits(), c.main_loss.to_bits());
    }

    #[test]
    fn sweep_order_ignores_worker_count() {
        let config = tiny();
        let sweep = Sweep {
            cells: vec![
                Cell::pattern(
                    SideKind::Relative,
                    PatternKind::PairwiseTransform,
                    ProcedureKind::Decoupled,
                ),
                Cell::baseline(SideKind::Relative, "logreg"),
            ],
            n_train: vec![10, 20],
            seeds: vec![1, 2, 3],
        };
        let one = run_sweep(&sweep, &config, 1).unwrap();
        let four = run_sweep(&sweep, &config, 4).unwrap();
        assert_eq!(one.len(), 12);
        for (a, b) in one.iter().zip(&four) {
            assert_eq!((a.n_train, a.seed, &a.pattern), (b.n_train, b.seed, &b.pattern));
            assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
        }
        assert_eq!((one[0].n_train, one[0].seed), (10, 1));
        assert_eq!((one[3].n_train, one[3].seed), (20, 1));
    }

    #[test]
    fn aggregate_matches_recomputation() {
        let mk = |seed, acc, failed| ResultRecord {
            side_info: "direct".into(),
            pattern: "direct".into(),
            procedure: "decoupled".into(),
            n_train: 50,
            seed,
            test_accuracy: acc,
            main_loss: 0.0,
            side_loss: 0.0,
            wall_ms: 0,
            failed,
        };
        let rows = vec![
            mk(0, 0.9, false),
            mk(1, 0.8, false),
            mk(2, f64::NAN, true),
            mk(3, 0.7, false),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].n_seeds, 3);
        assert!((agg[0].mean_accuracy - 0.8).abs() < 1e-12);
        let sd = ((0.01 + 0.0 + 0.01) / 2.0_f64).sqrt();
        assert!((agg[0].stderr - sd / 3f64.sqrt()).abs() < 1e-12);
    }
}
