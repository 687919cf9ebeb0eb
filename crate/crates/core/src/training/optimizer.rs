use crate::error::{Error, Result};

/// Momentum buffer for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            velocity: vec![0.0; n_params],
            steps: 0,
        }
    }
}

/// One step of SGD with Nesterov momentum, lookahead form:
///
/// ```text
/// g = ∇f(θ + μv)
/// v ← μv − ηg
/// θ ← θ + v
/// ```
///
/// With `μ = 0` this is plain SGD. A non-finite gradient aborts the step
/// and leaves `params` and `state` untouched.
pub fn nesterov_step<F>(
    params: &mut [f64],
    state: &mut OptimizerState,
    mut grad_fn: F,
    lr: f64,
    momentum: f64,
) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if state.velocity.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "nesterov_step velocity",
            expected: params.len(),
            actual: state.velocity.len(),
        });
    }
    let lookahead: Vec<f64> = params
        .iter()
        .zip(&state.velocity)
        .map(|(p, v)| p + momentum * v)
        .collect();
    let grad = grad_fn(&lookahead)?;
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "nesterov_step gradient",
            expected: params.len(),
            actual: grad.len(),
        });
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {g}")));
    }
    for ((p, v), g) in params.iter_mut().zip(state.velocity.iter_mut()).zip(&grad) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    state.steps += 1;
    Ok(())
}
