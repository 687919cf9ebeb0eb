//! L2-regularized logistic regression swept over a grid of `C` values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot};
use crate::models::{sigmoid, LogisticHead};
use crate::patterns::PROB_CLAMP;
use crate::rng::Rng;
use crate::training::{nesterov_step, OptimizerState, TrainConfig};

/// Inverse regularization strength. `Unpenalized` is `C = ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    C(f64),
    Unpenalized,
}

impl Penalty {
    /// `{0.001, 0.01, 0.1, 1.0, ∞}`
    pub fn default_grid() -> Vec<Penalty> {
        vec![
            Penalty::C(0.001),
            Penalty::C(0.01),
            Penalty::C(0.1),
            Penalty::C(1.0),
            Penalty::Unpenalized,
        ]
    }

    /// Coefficient `λ` of `λ/2 ‖w‖²` added to the mean cross-entropy of `n`
    /// samples. `C` multiplies the summed loss, so `λ = 1 / (C n)`.
    pub fn coefficient(&self, n: usize) -> f64 {
        match *self {
            Penalty::C(c) => 1.0 / (c * n as f64),
            Penalty::Unpenalized => 0.0,
        }
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Penalty::C(c) => write!(f, "{c}"),
            Penalty::Unpenalized => f.write_str("inf"),
        }
    }
}

/// Fraction of samples whose thresholded prediction (`p ≥ 0.5 → 1`) matches `y`.
pub fn accuracy(head: &LogisticHead, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput("accuracy needs aligned, nonempty data".into()));
    }
    let mut hits = 0usize;
    for (xi, yi) in x.iter().zip(y) {
        let pred = if head.logit(xi)? >= 0.0 { 1.0 } else { 0.0 };
        if pred == *yi {
            hits += 1;
        }
    }
    Ok(hits as f64 / x.len() as f64)
}

/// Mean cross-entropy of `head` on `(x, y)` plus `λ/2 ‖w‖²`, and its gradient
/// in the head's flat layout (weights, then bias).
fn penalized_loss(head: &LogisticHead, x: &[&[f64]], y: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let b = x.len() as f64;
    let w = head.weight();
    let mut value = 0.0;
    let mut grad = vec![0.0; head.num_params()];
    for (xi, &yi) in x.iter().zip(y) {
        let t = head.logit(xi)?;
        let p = sigmoid(t).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        value -= (yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()) / b;
        let g = (sigmoid(t) - yi) / b;
        axpy(g, xi, &mut grad[..w.len()]);
        if head.bias().is_some() {
            grad[w.len()] += g;
        }
    }
    if lambda > 0.0 {
        value += 0.5 * lambda * dot(w, w);
        axpy(lambda, w, &mut grad[..w.len()]);
    }
    Ok((value, grad))
}

/// Minibatch Nesterov training of a logistic head on raw features, started
/// from zero weights. Returns the head and its final full-batch objective.
pub fn train_logreg(x: &[Vec<f64>], y: &[f64], penalty: Penalty, config: &TrainConfig) -> Result<(LogisticHead, f64)> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyBatch("train_logreg"));
    }
    check_dim("train_logreg labels", x.len(), y.len())?;
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    let d = x[0].len();
    let lambda = penalty.coefficient(x.len());
    let mut params = vec![0.0; d + 1];
    let mut state = OptimizerState::new(params.len());
    let mut shuffle = Rng::new(config.seed).fork("shuffle");
    for _ in 0..config.epochs {
        let perm = shuffle.permutation(x.len());
        for chunk in perm.chunks(config.batch_size) {
            let xb: Vec<&[f64]> = chunk.iter().map(|&i| x[i].as_slice()).collect();
            let yb: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            nesterov_step(
                &mut params,
                &mut state,
                |theta| {
                    let h = LogisticHead::from_parts(theta[..d].to_vec(), Some(theta[d]));
                    Ok(penalized_loss(&h, &xb, &yb, lambda)?.1)
                },
                config.learning_rate,
                config.momentum,
            )?;
        }
    }
    let head = LogisticHead::from_parts(params[..d].to_vec(), Some(params[d]));
    let xs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let (loss, _) = penalized_loss(&head, &xs, y, lambda)?;
    Ok((head, loss))
}

#[derive(Debug, Clone)]
pub struct LogRegGridFit {
    pub best: LogisticHead,
    pub best_penalty: Penalty,
    pub best_accuracy: f64,
    /// Final training objective of the selected model.
    pub train_loss: f64,
    pub per_penalty: Vec<(Penalty, f64)>,
    /// The model is selected on the test split, so `best_accuracy` is an
    /// optimistic estimate.
    pub optimistic: bool,
}

/// Train one model per grid entry and keep the one with the best test accuracy.
pub fn fit_logreg_grid(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    test_x: &[Vec<f64>],
    test_y: &[f64],
    grid: &[Penalty],
    config: &TrainConfig,
) -> Result<LogRegGridFit> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty regularization grid".into()));
    }
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::InvalidInput("logistic regression needs nonempty splits".into()));
    }
    let mut best: Option<(LogisticHead, Penalty, f64, f64)> = None;
    let mut per_penalty = Vec::with_capacity(grid.len());
    for &penalty in grid {
        if let Penalty::C(c) = penalty {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig(format!("C must be positive and finite, got {c}")));
            }
        }
        // A strong penalty can make the step size unstable; such an entry is
        // reported as NaN and left out of the selection.
        let (head, loss) = match train_logreg(train_x, train_y, penalty, config) {
            Ok(fit) => fit,
            Err(Error::NonFinite(msg)) => {
                log::warn!("logistic regression with C = {penalty} diverged: {msg}");
                per_penalty.push((penalty, f64::NAN));
                continue;
            }
            Err(e) => return Err(e),
        };
        let acc = accuracy(&head, test_x, test_y)?;
        per_penalty.push((penalty, acc));
        if best.as_ref().is_none_or(|b| acc > b.2) {
            best = Some((head, penalty, acc, loss));
        }
    }
    let (best, best_penalty, best_accuracy, train_loss) =
        best.ok_or_else(|| Error::NonFinite("every grid entry diverged".into()))?;
    Ok(LogRegGridFit {
        best,
        best_penalty,
        best_accuracy,
        train_loss,
        per_penalty,
        optimistic: true,
    })
}
