//! Comparison methods that ignore side information: logistic regression on
//! the raw input, and logistic regression on a one-dimensional PCA or SFA
//! feature.

mod logreg;
mod projection;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::training::TrainConfig;

pub use logreg::{accuracy, fit_logreg_grid, train_logreg, LogRegGridFit, Penalty};
pub use projection::{
    fit_cca, fit_pca, fit_sfa, fit_whitening, CcaFit, FloorPolicy, LinearProjector, ProjectorKind, EIG_FLOOR,
};

/// Input conditioning applied before gradient training. Every transform is
/// fitted on training data only and then applied unchanged to test data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocess {
    /// Uncentered whitening: `x ↦ Λ^{-1/2} Vᵀ x` from the training second
    /// moment, dropping directions below the eigenvalue floor.
    #[default]
    Whiten,
    /// Per-coordinate division by the training root mean square.
    Scale,
    None,
}

impl Preprocess {
    pub fn name(&self) -> &'static str {
        match self {
            Preprocess::Whiten => "whiten",
            Preprocess::Scale => "scale",
            Preprocess::None => "none",
        }
    }

    pub fn fit(&self, x: &[Vec<f64>]) -> Result<LinearProjector> {
        let d = x.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::InvalidInput("preprocessing needs nonempty data".into()));
        }
        match self {
            Preprocess::Whiten => fit_whitening(x, false, FloorPolicy::Drop),
            Preprocess::Scale => {
                let n = x.len() as f64;
                let mut diag = vec![0.0; d];
                for r in x {
                    for (a, v) in diag.iter_mut().zip(r) {
                        *a += v * v / n;
                    }
                }
                let diag: Vec<f64> = diag
                    .iter()
                    .map(|m| if *m > 0.0 { 1.0 / m.sqrt() } else { 1.0 })
                    .collect();
                Ok(LinearProjector {
                    kind: ProjectorKind::Whitening,
                    directions: Matrix::from_diag(&diag),
                    mean: vec![0.0; d],
                })
            }
            Preprocess::None => Ok(LinearProjector {
                kind: ProjectorKind::Whitening,
                directions: Matrix::identity(d),
                mean: vec![0.0; d],
            }),
        }
    }
}

impl fmt::Display for Preprocess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preprocess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whiten" => Ok(Preprocess::Whiten),
            "scale" => Ok(Preprocess::Scale),
            "none" => Ok(Preprocess::None),
            other => Err(Error::UnknownName {
                kind: "preprocess",
                name: other.to_string(),
            }),
        }
    }
}

/// Labeled train/test split handed to a baseline.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub train_x: &'a [Vec<f64>],
    pub train_y: &'a [f64],
    pub test_x: &'a [Vec<f64>],
    pub test_y: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct BaselineSettings {
    pub train: TrainConfig,
    pub grid: Vec<Penalty>,
    pub preprocess: Preprocess,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            grid: Penalty::default_grid(),
            preprocess: Preprocess::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub best_penalty: Penalty,
    pub per_penalty: Vec<(Penalty, f64)>,
    pub optimistic: bool,
}

pub trait Baseline: Send + Sync {
    fn name(&self) -> &'static str;

    /// Fit on the training split and report accuracy on the test split.
    fn evaluate(&self, split: Split<'_>, settings: &BaselineSettings) -> Result<BaselineOutcome>;
}

fn grid_on_features(
    train: &[Vec<f64>],
    test: &[Vec<f64>],
    split: Split<'_>,
    settings: &BaselineSettings,
) -> Result<BaselineOutcome> {
    let pre = settings.preprocess.fit(train)?;
    let train = pre.apply_all(train)?;
    let test = pre.apply_all(test)?;
    let fit = fit_logreg_grid(
        &train,
        split.train_y,
        &test,
        split.test_y,
        &settings.grid,
        &settings.train,
    )?;
    Ok(BaselineOutcome {
        test_accuracy: fit.best_accuracy,
        train_loss: fit.train_loss,
        best_penalty: fit.best_penalty,
        per_penalty: fit.per_penalty,
        optimistic: fit.optimistic,
    })
}

/// Logistic regression on the full input.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogReg;

impl Baseline for LogReg {
    fn name(&self) -> &'static str {
        "logreg"
    }

    fn evaluate(&self, split: Split<'_>, settings: &BaselineSettings) -> Result<BaselineOutcome> {
        grid_on_features(split.train_x, split.test_x, split, settings)
    }
}

/// Logistic regression on the leading principal component.
#[derive(Debug, Clone, Copy, Default)]
pub struct PcaLogReg;

impl Baseline for PcaLogReg {
    fn name(&self) -> &'static str {
        "pca-logreg"
    }

    fn evaluate(&self, split: Split<'_>, settings: &BaselineSettings) -> Result<BaselineOutcome> {
        let (pca, _) = fit_pca(split.train_x, 1)?;
        let train = pca.apply_all(split.train_x)?;
        let test = pca.apply_all(split.test_x)?;
        grid_on_features(&train, &test, split, settings)
    }
}

/// Logistic regression on the slowest linear feature of the training sequence.
#[derive(Debug, Clone, Copy, Default)]
pub struct SfaLogReg;

impl Baseline for SfaLogReg {
    fn name(&self) -> &'static str {
        "sfa-logreg"
    }

    fn evaluate(&self, split: Split<'_>, settings: &BaselineSettings) -> Result<BaselineOutcome> {
        let (sfa, _) = fit_sfa(split.train_x, 1)?;
        let train = sfa.apply_all(split.train_x)?;
        let test = sfa.apply_all(split.test_x)?;
        grid_on_features(&train, &test, split, settings)
    }
}

type BaselineFactory = fn() -> Box<dyn Baseline>;

pub struct BaselineRegistry {
    factories: BTreeMap<&'static str, BaselineFactory>,
}

impl BaselineRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: BaselineFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<Box<dyn Baseline>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| Error::UnknownName {
            kind: "baseline",
            name: name.to_string(),
        })
    }
}

impl Default for BaselineRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("logreg", || Box::new(LogReg));
        r.register("pca-logreg", || Box::new(PcaLogReg));
        r.register("sfa-logreg", || Box::new(SfaLogReg));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_round_trips_names() {
        for p in [Preprocess::Whiten, Preprocess::Scale, Preprocess::None] {
            assert_eq!(p.name().parse::<Preprocess>().unwrap(), p);
        }
        assert!("center".parse::<Preprocess>().is_err());
    }

    #[test]
    fn scaling_gives_unit_rms() {
        let x = vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![2.0, 0.0]];
        let pre = Preprocess::Scale.fit(&x).unwrap();
        let y = pre.apply_all(&x).unwrap();
        let rms = (y.iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        // a silent coordinate is left alone
        assert_eq!(y[0][1], 0.0);
    }

    #[test]
    fn uncentered_whitening_gives_identity_second_moment() {
        let x = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5], vec![-2.0, 1.0]];
        let pre = Preprocess::Whiten.fit(&x).unwrap();
        let y = pre.apply_all(&x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let m: f64 = y.iter().map(|r| r[i] * r[j]).sum::<f64>() / 4.0;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m - want).abs() < 1e-10, "({i},{j}) = {m}");
            }
        }
    }

    #[test]
    fn registry_knows_the_three_baselines() {
        let r = BaselineRegistry::default();
        assert_eq!(
            r.names().collect::<Vec<_>>(),
            vec!["logreg", "pca-logreg", "sfa-logreg"]
        );
        for name in ["logreg", "pca-logreg", "sfa-logreg"] {
            assert_eq!(r.get(name).unwrap().name(), name);
        }
        assert!(r.get("svm").is_err());
    }

    #[test]
    fn pca_baseline_finds_the_dominant_label_direction() {
        // label carried by the high-variance coordinate, noise in the other
        let mut rng = crate::rng::Rng::new(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let a = rng.normal(0.0, 5.0);
            x.push(vec![a, rng.normal(0.0, 0.1)]);
            y.push(if a > 0.0 { 0.0 } else { 1.0 });
        }
        let split = Split {
            train_x: &x,
            train_y: &y,
            test_x: &x,
            test_y: &y,
        };
        let settings = BaselineSettings {
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            ..BaselineSettings::default()
        };
        let out = PcaLogReg.evaluate(split, &settings).unwrap();
        assert!(out.test_accuracy > 0.97, "{}", out.test_accuracy);
        assert!(out.optimistic);
    }
}
