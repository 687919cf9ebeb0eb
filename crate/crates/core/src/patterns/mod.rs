//! Side objectives.
//!
//! Each pattern couples a prior about how the side information relates to
//! the task with a concrete loss on the intermediate representation. Patterns
//! implement [`SideObjective`] and are looked up by name through
//! [`PatternRegistry`]; the trainer only sees the trait.

mod losses;
mod strategies;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SideBatch;
use crate::error::{Error, Result};
use crate::models::{Block, Map, ModelStack};

pub use losses::{
    irrelevance_penalty, loss_direct, loss_multitask, loss_multiview_corr, loss_multiview_pred, loss_pairwise,
    loss_supervised, loss_transform_fixed, loss_transform_pairs, PROB_CLAMP,
};
pub use strategies::{
    Direct, Irrelevance, MultiTask, MultiViewCorrelation, MultiViewPrediction, PairwiseSimilarity, PairwiseTransform,
};

/// Gradients of an objective w.r.t. the three parameter blocks of a stack.
/// An empty vector means "does not depend on this block".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Grads {
    pub fn phi_only(phi: Vec<f64>) -> Self {
        Self { phi, ..Self::default() }
    }

    pub fn zeros(stack: &ModelStack) -> Self {
        Self {
            phi: vec![0.0; stack.block_len(Block::Phi)],
            psi: vec![0.0; stack.block_len(Block::Psi)],
            beta: vec![0.0; stack.block_len(Block::Beta)],
        }
    }

    pub fn block(&self, block: Block) -> &[f64] {
        match block {
            Block::Phi => &self.phi,
            Block::Psi => &self.psi,
            Block::Beta => &self.beta,
        }
    }

    /// `self += w * other`, treating empty vectors as zeros.
    pub fn add_scaled(&mut self, other: &Grads, w: f64) {
        fn acc(dst: &mut Vec<f64>, src: &[f64], w: f64) {
            if src.is_empty() {
                return;
            }
            if dst.is_empty() {
                dst.resize(src.len(), 0.0);
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        acc(&mut self.phi, &other.phi, w);
        acc(&mut self.psi, &other.psi, w);
        acc(&mut self.beta, &other.beta, w);
    }

    /// Concatenate the requested blocks, zero-filling absent ones.
    pub fn flatten(&self, stack: &ModelStack, blocks: &[Block]) -> Vec<f64> {
        let mut out = Vec::new();
        for b in blocks {
            let g = self.block(*b);
            if g.is_empty() {
                out.extend(std::iter::repeat_n(0.0, stack.block_len(*b)));
            } else {
                out.extend_from_slice(g);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grads: Grads,
    /// Set when the loss degenerated (e.g. no matching pairs).
    pub warning: Option<String>,
}

impl LossGrad {
    pub fn new(value: f64, grads: Grads) -> Self {
        Self {
            value,
            grads,
            warning: None,
        }
    }
}

/// Proximity function for dissimilar pairs, as a function of distance `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sigma", rename_all = "kebab-case")]
pub enum Sigma {
    /// `max(0, m − d²)`
    Margin { m: f64 },
    /// `e^{−d}`
    ExpNegDist,
    /// `e^{−d²}`
    Gaussian,
}

impl Sigma {
    /// `(σ(d), dσ/d(d²))` given the squared distance.
    ///
    /// The margin variant has slope 0 at `d² = m` (the flat side); the
    /// exponential variant has slope 0 at `d = 0`.
    pub fn eval_sq(&self, d2: f64) -> (f64, f64) {
        match *self {
            Sigma::Margin { m } => {
                if m - d2 > 0.0 {
                    (m - d2, -1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Sigma::ExpNegDist => {
                let d = d2.sqrt();
                let v = (-d).exp();
                if d == 0.0 {
                    (v, 0.0)
                } else {
                    (v, -v / (2.0 * d))
                }
            }
            Sigma::Gaussian => {
                let v = (-d2).exp();
                (v, -v)
            }
        }
    }

    pub fn eval(&self, d: f64) -> f64 {
        self.eval_sq(d * d).0
    }

    pub fn name(&self) -> &'static str {
        match self {
            Sigma::Margin { .. } => "margin",
            Sigma::ExpNegDist => "exp-neg-dist",
            Sigma::Gaussian => "gaussian",
        }
    }

    /// Parse `margin`, `margin:<m>`, `exp-neg-dist` or `gaussian`.
    pub fn parse(text: &str, default_margin: f64) -> Result<Self> {
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (text, None),
        };
        match name {
            "margin" => {
                let m = match arg {
                    Some(a) => a
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidConfig(format!("bad margin `{a}`")))?,
                    None => default_margin,
                };
                Ok(Sigma::Margin { m })
            }
            "exp-neg-dist" => Ok(Sigma::ExpNegDist),
            "gaussian" => Ok(Sigma::Gaussian),
            other => Err(Error::UnknownName {
                kind: "sigma",
                name: other.to_string(),
            }),
        }
    }
}

/// How the pairwise transformation pattern compares transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformMode {
    /// Fixed auxiliary map `β(s_i, s_j) = s_j − s_i` regressed onto `z`.
    Fixed,
    /// Pairs of transitions with identical `z`.
    Discrete,
    /// All pairs of transitions weighted by `σ(‖z_i − z_j‖)`.
    Continuous,
}

impl FromStr for TransformMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "discrete" => Ok(Self::Discrete),
            "continuous" => Ok(Self::Continuous),
            other => Err(Error::UnknownName {
                kind: "transform mode",
                name: other.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    Direct,
    MultiTask,
    MultiViewCorr,
    MultiViewPred,
    PairwiseSim,
    PairwiseTransform,
    Irrelevance,
}

impl PatternKind {
    pub const ALL: [PatternKind; 7] = [
        PatternKind::Direct,
        PatternKind::MultiTask,
        PatternKind::MultiViewCorr,
        PatternKind::MultiViewPred,
        PatternKind::PairwiseSim,
        PatternKind::PairwiseTransform,
        PatternKind::Irrelevance,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PatternKind::Direct => "direct",
            PatternKind::MultiTask => "multi-task",
            PatternKind::MultiViewCorr => "multi-view-corr",
            PatternKind::MultiViewPred => "multi-view-pred",
            PatternKind::PairwiseSim => "pairwise-sim",
            PatternKind::PairwiseTransform => "pairwise-transform",
            PatternKind::Irrelevance => "irrelevance",
        }
    }

    /// Default `(ω_main, ω_side)`.
    ///
    /// The correlation pattern's squared-error term dwarfs the supervised
    /// gradient on raw data, so it gets 0.99 / 0.01; everything else is
    /// weighted equally.
    pub fn default_weights(&self) -> ObjectiveWeights {
        match self {
            PatternKind::MultiViewCorr => ObjectiveWeights { main: 0.99, side: 0.01 },
            _ => ObjectiveWeights { main: 0.5, side: 0.5 },
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "pattern",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub main: f64,
    pub side: f64,
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.main >= 0.0 && self.side >= 0.0) || (self.main + self.side - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "objective weights must be nonnegative and sum to 1, got ({}, {})",
                self.main, self.side
            )));
        }
        Ok(())
    }
}

/// Default γ. Larger values let the noise of minibatch variance estimates
/// swamp the alignment term.
pub const DEFAULT_VARIANCE_PENALTY: f64 = 0.01;

/// Which side objective to use and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub sigma: Sigma,
    pub weights: ObjectiveWeights,
    /// γ: unit-variance penalty for the correlation pattern.
    pub variance_penalty: f64,
    pub transform_mode: TransformMode,
    /// Weight of the orthogonality penalty in the irrelevance pattern.
    pub orthogonality_weight: f64,
}

impl PatternSpec {
    pub fn new(kind: PatternKind) -> Self {
        let sigma = match kind {
            PatternKind::PairwiseTransform => Sigma::Gaussian,
            _ => Sigma::Margin { m: 1.0 },
        };
        Self {
            kind,
            sigma,
            weights: kind.default_weights(),
            variance_penalty: DEFAULT_VARIANCE_PENALTY,
            transform_mode: TransformMode::Fixed,
            orthogonality_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if let Sigma::Margin { m } = self.sigma {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "margin must be finite and positive, got {m}"
                )));
            }
        }
        if !(self.variance_penalty >= 0.0 && self.variance_penalty.is_finite()) {
            return Err(Error::InvalidConfig("variance penalty must be >= 0".into()));
        }
        if !(self.orthogonality_weight >= 0.0 && self.orthogonality_weight.is_finite()) {
            return Err(Error::InvalidConfig("orthogonality weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Unit over which a side objective is batched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideUnit {
    Samples,
    Transitions,
    Pairs,
}

/// Shape of the auxiliary map β a pattern needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaShape {
    None,
    /// representation -> side information
    FromRepresentation,
    /// side information -> representation
    FromSide,
}

/// A side objective `L_z` over a [`ModelStack`].
pub trait SideObjective: Send + Sync {
    fn kind(&self) -> PatternKind;

    fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn unit(&self) -> SideUnit;

    fn beta_shape(&self) -> BetaShape;

    /// Representation dim forced by the pattern for side vectors of dim `side_dim`.
    fn required_representation_dim(&self, _side_dim: usize) -> Option<usize> {
        None
    }

    /// Blocks the side objective trains on its own (the first phase of the
    /// decoupled procedure). Empty when the objective cannot be decoupled.
    fn side_blocks(&self) -> &'static [Block];

    fn needs_labels(&self) -> bool {
        false
    }

    /// Value and gradients w.r.t. every block of `stack`.
    fn loss(&self, stack: &ModelStack, batch: &SideBatch<'_>) -> Result<LossGrad>;
}

pub(crate) fn beta_of<'a>(stack: &'a ModelStack, pattern: &'static str) -> Result<&'a Map> {
    stack
        .beta
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("pattern `{pattern}` needs an auxiliary map")))
}

pub type PatternFactory = fn(&PatternSpec) -> Box<dyn SideObjective>;

/// Side objectives by name.
pub struct PatternRegistry {
    entries: BTreeMap<&'static str, PatternFactory>,
}

impl PatternRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: PatternFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, spec: &PatternSpec) -> Result<Box<dyn SideObjective>> {
        spec.validate()?;
        let factory = self.entries.get(spec.kind.name()).ok_or_else(|| Error::UnknownName {
            kind: "pattern",
            name: spec.kind.name().to_string(),
        })?;
        Ok(factory(spec))
    }
}

impl Default for PatternRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("direct", |_| Box::new(Direct));
        r.register("multi-task", |_| Box::new(MultiTask));
        r.register("multi-view-corr", |s| {
            Box::new(MultiViewCorrelation {
                gamma: s.variance_penalty,
            })
        });
        r.register("multi-view-pred", |_| Box::new(MultiViewPrediction));
        r.register("pairwise-sim", |s| Box::new(PairwiseSimilarity { sigma: s.sigma }));
        r.register("pairwise-transform", |s| {
            Box::new(PairwiseTransform {
                mode: s.transform_mode,
                sigma: s.sigma,
            })
        });
        r.register("irrelevance", |s| {
            Box::new(Irrelevance {
                weight: s.orthogonality_weight,
            })
        });
        r
    }
}
