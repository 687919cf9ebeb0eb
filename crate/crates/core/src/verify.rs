//! Self-checks: central finite differences for every side objective, and
//! the closed-form oracles the gradient-trained patterns are held against.

use std::fmt;
use std::str::FromStr;

use crate::baselines::{fit_cca, fit_pca, fit_sfa};
use crate::data::{Dataset, PairIndex, PairTag, SideBatch, SideInfo};
use crate::error::{Error, Result};
use crate::linalg::{abs_cosine, dot, random_rotation, sq_dist, Matrix};
use crate::models::{InitScheme, LinearMap, LogisticHead, Map, MlpStack, ModelStack};
use crate::patterns::{
    irrelevance_penalty, loss_supervised, LossGrad, PatternKind, PatternRegistry, PatternSpec, Sigma, TransformMode,
};
use crate::rng::Rng;
use crate::training::{ProcedureKind, ProcedureRegistry, TrainConfig};

/// Largest accepted relative error between analytic and numeric gradients.
pub const GRADCHECK_TOL: f64 = 1e-5;
pub const GRADCHECK_DRAWS: usize = 20;
const FD_STEP: f64 = 1e-6;

const IN_DIM: usize = 4;
const SIDE_DIM: usize = 3;
const REP_DIM: usize = 2;
const BATCH: usize = 6;

/// Architecture of φ in a gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Linear,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::Linear, Family::Mlp];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "map family",
                name: s.to_string(),
            })
    }
}

/// One objective configuration under test.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// `None` is the supervised objective.
    pub pattern: Option<PatternKind>,
    pub sigma: Option<Sigma>,
    pub mode: Option<TransformMode>,
    pub gamma: Option<f64>,
}

impl Objective {
    fn supervised() -> Self {
        Self {
            pattern: None,
            sigma: None,
            mode: None,
            gamma: None,
        }
    }

    fn pattern(kind: PatternKind) -> Self {
        Self {
            pattern: Some(kind),
            ..Self::supervised()
        }
    }

    pub fn label(&self) -> String {
        let mut out = self.pattern.map_or("supervised", |p| p.name()).to_string();
        if let Some(m) = self.mode {
            out.push_str(match m {
                TransformMode::Fixed => "/fixed",
                TransformMode::Discrete => "/discrete",
                TransformMode::Continuous => "/continuous",
            });
        }
        if let Some(s) = self.sigma {
            out.push('/');
            out.push_str(s.name());
        }
        if let Some(g) = self.gamma {
            out.push_str(&format!("/gamma={g}"));
        }
        out
    }

    /// Every objective in the catalogue, with every σ and transform mode.
    pub fn catalogue() -> Vec<Objective> {
        let sigmas = [Sigma::Margin { m: 1.0 }, Sigma::ExpNegDist, Sigma::Gaussian];
        let mut out = vec![
            Objective::supervised(),
            Objective::pattern(PatternKind::Direct),
            Objective::pattern(PatternKind::MultiTask),
        ];
        for gamma in [0.0, 1.0] {
            out.push(Objective {
                gamma: Some(gamma),
                ..Objective::pattern(PatternKind::MultiViewCorr)
            });
        }
        out.push(Objective::pattern(PatternKind::MultiViewPred));
        for s in sigmas {
            out.push(Objective {
                sigma: Some(s),
                ..Objective::pattern(PatternKind::PairwiseSim)
            });
        }
        out.push(Objective {
            mode: Some(TransformMode::Fixed),
            ..Objective::pattern(PatternKind::PairwiseTransform)
        });
        out.push(Objective {
            mode: Some(TransformMode::Discrete),
            ..Objective::pattern(PatternKind::PairwiseTransform)
        });
        for s in sigmas {
            out.push(Objective {
                mode: Some(TransformMode::Continuous),
                sigma: Some(s),
                ..Objective::pattern(PatternKind::PairwiseTransform)
            });
        }
        out.push(Objective::pattern(PatternKind::Irrelevance));
        out
    }

    fn spec(&self) -> Option<PatternSpec> {
        let mut spec = PatternSpec::new(self.pattern?);
        if let Some(s) = self.sigma {
            spec.sigma = s;
        }
        if let Some(m) = self.mode {
            spec.transform_mode = m;
        }
        if let Some(g) = self.gamma {
            spec.variance_penalty = g;
        }
        Some(spec)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub draws: usize,
    /// Restrict to one pattern (`supervised` selects the main objective).
    pub only: Option<String>,
    /// Restrict to one σ.
    pub sigma: Option<String>,
    pub family: Option<Family>,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            draws: GRADCHECK_DRAWS,
            only: None,
            sigma: None,
            family: None,
            tolerance: GRADCHECK_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub family: Family,
    pub objective: String,
    pub draws: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// `‖a − n‖ / max(‖a‖ + ‖n‖, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = sq_dist(analytic, numeric).sqrt();
    let scale = dot(analytic, analytic).sqrt() + dot(numeric, numeric).sqrt();
    diff / scale.max(1e-10)
}

fn random_rows(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.normal(0.0, 1.0)).collect())
        .collect()
}

fn random_labels(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 }).collect()
}

fn build_phi(family: Family, out_dim: usize, rng: &mut Rng) -> Result<Map> {
    let mut phi = match family {
        Family::Linear => Map::Linear(LinearMap::new(IN_DIM, out_dim, true)),
        Family::Mlp => Map::Mlp(MlpStack::new(&[IN_DIM, 5, out_dim])?),
    };
    phi.init(rng, InitScheme::ScaledUniform);
    // nonzero biases so no unit sits exactly at a rectifier kink
    let mut p = phi.params();
    for v in p.iter_mut() {
        *v += rng.normal(0.0, 0.1);
    }
    phi.set_params(&p)?;
    Ok(phi)
}

/// Random stack and batch for `objective`, and a closure-free evaluator.
struct Case {
    stack: ModelStack,
    x: Vec<Vec<f64>>,
    x_next: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    y: Vec<f64>,
    pairs: Vec<PairIndex>,
}

impl Case {
    fn draw(objective: &Objective, family: Family, rng: &mut Rng) -> Result<Self> {
        let transform_fixed = objective.mode == Some(TransformMode::Fixed);
        let k = if matches!(objective.pattern, Some(PatternKind::Direct)) || transform_fixed {
            SIDE_DIM
        } else {
            REP_DIM
        };
        let phi = build_phi(family, k, rng)?;
        let mut psi = LogisticHead::new(k, true);
        psi.init(rng, InitScheme::ScaledUniform);
        let beta = match objective.pattern {
            Some(PatternKind::MultiTask | PatternKind::Irrelevance) => {
                let mut b = Map::Linear(LinearMap::new(k, SIDE_DIM, true));
                b.init(rng, InitScheme::ScaledUniform);
                Some(b)
            }
            Some(PatternKind::MultiViewCorr | PatternKind::MultiViewPred) => {
                let mut b = Map::Linear(LinearMap::new(SIDE_DIM, k, true));
                b.init(rng, InitScheme::ScaledUniform);
                Some(b)
            }
            _ => None,
        };
        let stack = ModelStack::new(phi, psi, beta)?;
        let x = random_rows(rng, BATCH, IN_DIM);
        let x_next = random_rows(rng, BATCH, IN_DIM);
        let z = if objective.mode == Some(TransformMode::Discrete) {
            // few distinct values so some transitions match
            (0..BATCH).map(|i| vec![(i % 3) as f64 - 1.0; SIDE_DIM]).collect()
        } else {
            random_rows(rng, BATCH, SIDE_DIM)
        };
        let y = random_labels(rng, BATCH);
        let mut pairs = Vec::new();
        while pairs.len() < BATCH {
            let i = rng.index(BATCH);
            let j = rng.index(BATCH);
            if i != j {
                let tag = if pairs.len() % 2 == 0 {
                    PairTag::Similar
                } else {
                    PairTag::Dissimilar
                };
                pairs.push(PairIndex::new(i, j, tag)?);
            }
        }
        Ok(Self {
            stack,
            x,
            x_next,
            z,
            y,
            pairs,
        })
    }

    fn eval(&self, objective: &Objective, stack: &ModelStack) -> Result<LossGrad> {
        let x: Vec<&[f64]> = self.x.iter().map(Vec::as_slice).collect();
        let z: Vec<&[f64]> = self.z.iter().map(Vec::as_slice).collect();
        let Some(spec) = objective.spec() else {
            return loss_supervised(&stack.psi, &stack.phi, &x, &self.y);
        };
        let side = PatternRegistry::default().build(&spec)?;
        let batch = match spec.kind {
            PatternKind::PairwiseSim => SideBatch::Pairs {
                x,
                pairs: self.pairs.clone(),
            },
            PatternKind::PairwiseTransform => SideBatch::Transitions {
                from: x,
                to: self.x_next.iter().map(Vec::as_slice).collect(),
                z,
            },
            _ => SideBatch::Samples {
                x,
                z,
                y: Some(self.y.clone()),
            },
        };
        side.loss(stack, &batch)
    }
}

fn all_blocks(stack: &ModelStack) -> Vec<crate::models::Block> {
    use crate::models::Block;
    let mut blocks = vec![Block::Phi, Block::Psi];
    if stack.beta.is_some() {
        blocks.push(Block::Beta);
    }
    blocks
}

/// Relative error of the analytic gradient of one random draw.
fn check_draw(objective: &Objective, family: Family, rng: &mut Rng) -> Result<f64> {
    let case = Case::draw(objective, family, rng)?;
    let blocks = all_blocks(&case.stack);
    let analytic = case.eval(objective, &case.stack)?.grads.flatten(&case.stack, &blocks);
    let theta = case.stack.flatten(&blocks);
    let mut probe = case.stack.clone();
    let mut numeric = vec![0.0; theta.len()];
    let mut shifted = theta.clone();
    for i in 0..theta.len() {
        shifted[i] = theta[i] + FD_STEP;
        probe.restore(&blocks, &shifted)?;
        let up = case.eval(objective, &probe)?.value;
        shifted[i] = theta[i] - FD_STEP;
        probe.restore(&blocks, &shifted)?;
        let down = case.eval(objective, &probe)?.value;
        shifted[i] = theta[i];
        numeric[i] = (up - down) / (2.0 * FD_STEP);
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Finite-difference check of every (map family, objective) combination
/// selected by `options`.
pub fn gradcheck(options: &GradCheckOptions) -> Result<Vec<GradCheckRow>> {
    if options.draws == 0 {
        return Err(Error::InvalidConfig("gradcheck needs at least one draw".into()));
    }
    if !(options.tolerance > 0.0 && options.tolerance.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {}",
            options.tolerance
        )));
    }
    if let Some(only) = &options.only {
        if only != "supervised" {
            only.parse::<PatternKind>()?;
        }
    }
    if let Some(s) = &options.sigma {
        Sigma::parse(s, 1.0)?;
    }
    let objectives: Vec<Objective> = Objective::catalogue()
        .into_iter()
        .filter(|o| {
            options
                .only
                .as_deref()
                .is_none_or(|name| o.pattern.map_or("supervised", |p| p.name()) == name)
        })
        .filter(|o| {
            options.sigma.as_deref().is_none_or(|s| {
                o.sigma
                    .is_some_and(|sig| sig.name() == s.split(':').next().unwrap_or(s))
            })
        })
        .collect();
    if objectives.is_empty() {
        return Err(Error::InvalidConfig("no objective matches the filters".into()));
    }
    let root = Rng::new(options.seed);
    let mut rows = Vec::new();
    for family in Family::ALL {
        if options.family.is_some_and(|f| f != family) {
            continue;
        }
        for objective in &objectives {
            let label = objective.label();
            let mut rng = root.fork(family.name()).fork(&label);
            let mut worst: f64 = 0.0;
            for _ in 0..options.draws {
                let err = check_draw(objective, family, &mut rng)?;
                worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
            }
            rows.push(GradCheckRow {
                family,
                objective: label,
                draws: options.draws,
                max_rel_err: worst,
                passed: worst <= options.tolerance,
            });
        }
    }
    Ok(rows)
}

/// Named group of oracle checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OracleSuite {
    Cca,
    Sfa,
    Pca,
    Losses,
}

impl OracleSuite {
    pub const ALL: [OracleSuite; 4] = [
        OracleSuite::Cca,
        OracleSuite::Sfa,
        OracleSuite::Pca,
        OracleSuite::Losses,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OracleSuite::Cca => "cca",
            OracleSuite::Sfa => "sfa",
            OracleSuite::Pca => "pca",
            OracleSuite::Losses => "losses",
        }
    }
}

impl fmt::Display for OracleSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OracleSuite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OracleSuite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "oracle suite",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone)]
pub struct OracleOptions {
    pub seed: u64,
    /// Largest accepted gap between a loss and its naive-loop recomputation.
    pub loss_tolerance: f64,
    /// Smallest accepted |cos| between the trained correlation pattern and
    /// closed-form CCA.
    pub min_alignment: f64,
    /// Smallest accepted |ρ| between the SFA output and the planted signal.
    pub min_slow_correlation: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            loss_tolerance: 1e-12,
            min_alignment: 0.99,
            min_slow_correlation: 0.99,
        }
    }
}

impl OracleOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
        if !(self.loss_tolerance > 0.0 && self.loss_tolerance.is_finite()) {
            return bad("loss tolerance", self.loss_tolerance);
        }
        for (name, v) in [
            ("alignment threshold", self.min_alignment),
            ("slow-signal threshold", self.min_slow_correlation),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub suite: OracleSuite,
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn at_least(name: &str, value: f64, threshold: f64) -> OracleCheck {
    OracleCheck {
        name: name.to_string(),
        value,
        threshold,
        passed: value >= threshold,
    }
}

fn at_most(name: &str, value: f64, threshold: f64) -> OracleCheck {
    OracleCheck {
        name: name.to_string(),
        value,
        threshold,
        passed: value <= threshold,
    }
}

pub fn run_oracles(suites: &[OracleSuite], options: &OracleOptions) -> Result<Vec<OracleReport>> {
    options.validate()?;
    suites
        .iter()
        .map(|&suite| {
            let mut rng = Rng::new(options.seed).fork(suite.name());
            let checks = match suite {
                OracleSuite::Cca => cca_suite(options, &mut rng)?,
                OracleSuite::Sfa => sfa_suite(options, &mut rng)?,
                OracleSuite::Pca => pca_suite(&mut rng)?,
                OracleSuite::Losses => loss_suite(options, &mut rng)?,
            };
            Ok(OracleReport { suite, checks })
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut c, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        c += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    c / (va * vb).sqrt()
}

/// Samples of two views and the latent they share.
pub struct TwoViews {
    pub x: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub latent: Vec<f64>,
}

/// Two views sharing one latent: `x = A [l, noise]`, `z = B [l + ε, noise]`.
pub fn planted_two_view(n: usize, rng: &mut Rng) -> Result<TwoViews> {
    let a = random_rotation(4, &mut rng.fork("mix-x"))?;
    let b = random_rotation(3, &mut rng.fork("mix-z"))?;
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let l = rng.normal(0.0, 1.0);
        let xs = [l, rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)];
        let zs = [l + rng.normal(0.0, 0.1), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)];
        x.push(a.matvec(&xs)?);
        z.push(b.matvec(&zs)?);
        latent.push(l);
    }
    Ok(TwoViews { x, z, latent })
}

/// |cos| between the φ direction learned by the decoupled correlation
/// pattern and the top closed-form CCA direction on planted two-view data.
pub fn multiview_cca_alignment(seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed).fork("planted");
    let TwoViews { x, z, latent } = planted_two_view(2000, &mut rng)?;
    let cca = fit_cca(&x, &z, 1)?;
    let y: Vec<f64> = latent.iter().map(|l| if *l > 0.0 { 0.0 } else { 1.0 }).collect();
    let data = Dataset::new(x, Some(y), SideInfo::PerSample(z))?;
    let spec = PatternSpec {
        variance_penalty: 1.0,
        ..PatternSpec::new(PatternKind::MultiViewCorr)
    };
    let side = PatternRegistry::default().build(&spec)?;
    let mut stack = ModelStack::new(
        Map::Linear(LinearMap::new(4, 1, false)),
        LogisticHead::new(1, false),
        Some(Map::Linear(LinearMap::new(3, 1, false))),
    )?;
    stack.init(&mut rng.fork("init"), InitScheme::ScaledUniform);
    let config = TrainConfig {
        procedure: ProcedureKind::Decoupled,
        epochs: 30,
        seed: rng.fork("optimizer").seed(),
        ..TrainConfig::default()
    };
    ProcedureRegistry::default().get(config.procedure.name())?.train(
        &mut stack,
        side.as_ref(),
        spec.weights,
        &data,
        &config,
    )?;
    let w = stack.phi.linear_weight().expect("linear phi");
    Ok(abs_cosine(w.row(0), cca.x.direction(0)))
}

fn cca_suite(options: &OracleOptions, rng: &mut Rng) -> Result<Vec<OracleCheck>> {
    let x = random_rows(rng, 500, 3);
    let same = fit_cca(&x, &x, 1)?;
    let gap = (same.correlations[0] - 1.0).abs();
    Ok(vec![
        at_most("identical views: |top correlation - 1|", gap, 1e-8),
        at_least(
            "decoupled correlation pattern vs CCA: |cos|",
            multiview_cca_alignment(options.seed)?,
            options.min_alignment,
        ),
    ])
}

/// A slow sinusoid and three white-noise channels mixed by a rotation.
pub fn planted_slow_signal(n: usize, rng: &mut Rng) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mix = random_rotation(4, &mut rng.fork("mix"))?;
    let slow: Vec<f64> = (0..n)
        .map(|t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / n as f64).sin())
        .collect();
    let x = slow
        .iter()
        .map(|s| {
            let v = [*s, rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)];
            mix.matvec(&v)
        })
        .collect::<Result<_>>()?;
    Ok((x, slow))
}

fn sfa_suite(options: &OracleOptions, rng: &mut Rng) -> Result<Vec<OracleCheck>> {
    let (x, slow) = planted_slow_signal(2000, rng)?;
    let (sfa, _) = fit_sfa(&x, 1)?;
    let out: Vec<f64> = sfa.apply_all(&x)?.into_iter().map(|r| r[0]).collect();
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(vec![
        at_least(
            "planted slow signal: |rho|",
            pearson(&out, &slow).abs(),
            options.min_slow_correlation,
        ),
        at_most("output variance: |var - 1|", (var - 1.0).abs(), 1e-6),
    ])
}

fn pca_suite(rng: &mut Rng) -> Result<Vec<OracleCheck>> {
    let line: Vec<f64> = (0..3).map(|_| rng.normal(0.0, 1.0)).collect();
    let x: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let t = rng.normal(0.0, 2.0);
            line.iter().map(|v| v * t).collect()
        })
        .collect();
    let (pca, _) = fit_pca(&x, 1)?;
    let cos = abs_cosine(pca.direction(0), &line);
    let cloud = random_rows(rng, 300, 4);
    let (full, _) = fit_pca(&cloud, 4)?;
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(full.direction(i), full.direction(j)) - want).abs());
        }
    }
    Ok(vec![
        at_least("rank-1 data: |cos| with the line", cos, 1.0 - 1e-9),
        at_most("orthonormal rows: max deviation", worst, 1e-9),
    ])
}

fn linear_phi(rng: &mut Rng, out_dim: usize, in_dim: usize) -> Result<(Matrix, Vec<f64>, Map)> {
    let w = Matrix::random_normal(out_dim, in_dim, rng);
    let b: Vec<f64> = (0..out_dim).map(|_| rng.normal(0.0, 1.0)).collect();
    let map = Map::Linear(LinearMap::from_weight(w.clone(), Some(b.clone()))?);
    Ok((w, b, map))
}

/// `W x + b` by explicit loops.
fn naive_affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.rows()];
    for i in 0..w.rows() {
        let mut acc = b[i];
        for j in 0..w.cols() {
            acc += w[(i, j)] * x[j];
        }
        out[i] = acc;
    }
    out
}

fn naive_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += (a[k] - b[k]) * (a[k] - b[k]);
    }
    acc
}

fn loss_suite(options: &OracleOptions, rng: &mut Rng) -> Result<Vec<OracleCheck>> {
    let tol = options.loss_tolerance;
    let mut checks = Vec::new();
    let mut gap = |name: &str, got: f64, want: f64| {
        checks.push(at_most(name, (got - want).abs() / want.abs().max(1.0), tol));
    };

    let (w, b, phi) = linear_phi(rng, 2, 4)?;
    let x = random_rows(rng, BATCH, 4);
    let xr: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let s: Vec<Vec<f64>> = x.iter().map(|xi| naive_affine(&w, &b, xi)).collect();

    // pairwise similarity: six mixed pairs under each σ
    let mut pairs = Vec::new();
    for (i, j) in [(0, 1), (2, 3), (4, 5), (0, 5), (1, 3), (2, 4)] {
        let tag = if (i + j) % 2 == 0 {
            PairTag::Similar
        } else {
            PairTag::Dissimilar
        };
        pairs.push(PairIndex::new(i, j, tag)?);
    }
    for sigma in [Sigma::Margin { m: 2.0 }, Sigma::ExpNegDist, Sigma::Gaussian] {
        let got = crate::patterns::loss_pairwise(&phi, &xr, &pairs, sigma)?.value;
        let mut want = 0.0;
        for p in &pairs {
            let d2 = naive_sq(&s[p.i], &s[p.j]);
            want += match p.tag {
                PairTag::Similar => d2,
                PairTag::Dissimilar => match sigma {
                    Sigma::Margin { m } => (m - d2).max(0.0),
                    Sigma::ExpNegDist => (-d2.sqrt()).exp(),
                    Sigma::Gaussian => (-d2).exp(),
                },
            };
        }
        gap(
            &format!("pairwise-sim/{}", sigma.name()),
            got,
            want / pairs.len() as f64,
        );
    }

    // transformations over five transitions
    let seq = random_rows(rng, 6, 4);
    let from: Vec<&[f64]> = seq[..5].iter().map(Vec::as_slice).collect();
    let to: Vec<&[f64]> = seq[1..].iter().map(Vec::as_slice).collect();
    let delta: Vec<Vec<f64>> = (0..5)
        .map(|t| {
            let a = naive_affine(&w, &b, &seq[t]);
            let c = naive_affine(&w, &b, &seq[t + 1]);
            vec![c[0] - a[0], c[1] - a[1]]
        })
        .collect();
    let z = random_rows(rng, 5, 2);
    let zr: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    let got = crate::patterns::loss_transform_fixed(&phi, &from, &to, &zr)?.value;
    let want = (0..5).map(|t| naive_sq(&delta[t], &z[t])).sum::<f64>() / 5.0;
    gap("pairwise-transform/fixed", got, want);

    let got =
        crate::patterns::loss_transform_pairs(&phi, &from, &to, &zr, TransformMode::Continuous, Sigma::Gaussian)?.value;
    let mut want = 0.0;
    let mut count = 0.0;
    for i in 0..5 {
        for j in i + 1..5 {
            want += (-naive_sq(&z[i], &z[j])).exp() * naive_sq(&delta[i], &delta[j]);
            count += 1.0;
        }
    }
    gap("pairwise-transform/continuous", got, want / count);

    let zd: Vec<Vec<f64>> = (0..5).map(|t| vec![(t % 2) as f64, 1.0]).collect();
    let zdr: Vec<&[f64]> = zd.iter().map(Vec::as_slice).collect();
    let got =
        crate::patterns::loss_transform_pairs(&phi, &from, &to, &zdr, TransformMode::Discrete, Sigma::Gaussian)?.value;
    let mut want = 0.0;
    let mut count = 0.0;
    for i in 0..5 {
        for j in i + 1..5 {
            if zd[i] == zd[j] {
                want += naive_sq(&delta[i], &delta[j]);
                count += 1.0;
            }
        }
    }
    gap("pairwise-transform/discrete", got, want / count);

    // per-sample objectives
    let zs = random_rows(rng, BATCH, 2);
    let zsr: Vec<&[f64]> = zs.iter().map(Vec::as_slice).collect();
    let got = crate::patterns::loss_direct(&phi, &xr, &zsr)?.value;
    let want = (0..BATCH).map(|i| naive_sq(&s[i], &zs[i])).sum::<f64>() / BATCH as f64;
    gap("direct", got, want);

    let (wb, bb, beta) = linear_phi(rng, 3, 2)?;
    let z3 = random_rows(rng, BATCH, 3);
    let z3r: Vec<&[f64]> = z3.iter().map(Vec::as_slice).collect();
    let got = crate::patterns::loss_multitask(&beta, &phi, &xr, &z3r)?.value;
    let want = (0..BATCH)
        .map(|i| naive_sq(&naive_affine(&wb, &bb, &s[i]), &z3[i]))
        .sum::<f64>()
        / BATCH as f64;
    gap("multi-task", got, want);

    let (wv, bv, view) = linear_phi(rng, 2, 3)?;
    let got = crate::patterns::loss_multiview_corr(&view, &phi, &xr, &z3r, 1.0)?.value;
    let c: Vec<Vec<f64>> = z3.iter().map(|zi| naive_affine(&wv, &bv, zi)).collect();
    let mut want = (0..BATCH).map(|i| naive_sq(&s[i], &c[i])).sum::<f64>() / BATCH as f64;
    for rows in [&s, &c] {
        for k in 0..2 {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / BATCH as f64;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (BATCH as f64 - 1.0);
            want += (var - 1.0).powi(2);
        }
    }
    gap("multi-view-corr/gamma=1", got, want);

    // orthogonality penalty on a random 3x2 pair
    let wp = Matrix::random_normal(3, 2, rng);
    let wq = Matrix::random_normal(3, 2, rng);
    let got = irrelevance_penalty(
        &Map::Linear(LinearMap::from_weight(wp.clone(), None)?),
        &Map::Linear(LinearMap::from_weight(wq.clone(), None)?),
    )?
    .value;
    let mut want = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let mut e = 0.0;
            for k in 0..2 {
                e += wp[(i, k)] * wq[(j, k)];
            }
            want += e * e;
        }
    }
    gap("irrelevance", got, want);
    Ok(checks)
}
