//! Loss functions with analytic gradients.
//!
//! All sums are normalized to means over samples (or pairs), so objective
//! weights stay comparable across batch sizes. Each function returns a
//! [`LossGrad`] whose gradient vectors follow the flat parameter layout of
//! the maps involved; maps that do not participate get an empty vector.

use crate::data::{PairIndex, PairTag};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, sq_dist, Matrix};
use crate::models::{sigmoid, LogisticHead, Map};

use super::{Grads, LossGrad, Sigma, TransformMode};

/// Probability clamp applied before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

/// Accumulates parameter gradients of `map` over a batch.
struct Acc {
    grad: Vec<f64>,
}

impl Acc {
    fn new(map_params: usize) -> Self {
        Self {
            grad: vec![0.0; map_params],
        }
    }

    fn add(&mut self, g: &[f64]) {
        axpy(1.0, g, &mut self.grad);
    }
}

fn psi_len(psi: &LogisticHead) -> usize {
    psi.num_params()
}

/// Binary cross-entropy for one prediction and `dL/dlogit`.
fn bce(logit: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let value = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    // the clamp is flat outside its range
    let g = if p == pc { p - y } else { 0.0 };
    (value, g)
}

fn check_labels(y: &[f64]) -> Result<()> {
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy of `ψ(φ(x))` against `y`.
pub fn loss_supervised(psi: &LogisticHead, phi: &Map, x: &[&[f64]], y: &[f64]) -> Result<LossGrad> {
    if x.is_empty() {
        return Err(Error::EmptyBatch("loss_supervised"));
    }
    check_dim("loss_supervised labels", x.len(), y.len())?;
    check_labels(y)?;
    let b = x.len() as f64;
    let mut value = 0.0;
    let mut g_phi = Acc::new(phi.num_params());
    let mut g_psi = Acc::new(psi_len(psi));
    for (xi, yi) in x.iter().zip(y) {
        let s = phi.forward(xi)?;
        let (l, dlogit) = bce(psi.logit(&s)?, *yi);
        value += l / b;
        let (gp, gs) = psi.backward_logit(&s, dlogit / b)?;
        g_psi.add(&gp);
        let (gf, _) = phi.backward(xi, &gs)?;
        g_phi.add(&gf);
    }
    Ok(LossGrad::new(
        value,
        Grads {
            phi: g_phi.grad,
            psi: g_psi.grad,
            beta: Vec::new(),
        },
    ))
}

/// Mean of `‖φ(x) − z‖²`.
pub fn loss_direct(phi: &Map, x: &[&[f64]], z: &[&[f64]]) -> Result<LossGrad> {
    if x.is_empty() {
        return Err(Error::EmptyBatch("loss_direct"));
    }
    check_dim("loss_direct side batch", x.len(), z.len())?;
    let b = x.len() as f64;
    let mut value = 0.0;
    let mut g_phi = Acc::new(phi.num_params());
    for (xi, zi) in x.iter().zip(z) {
        let s = phi.forward(xi)?;
        check_dim("loss_direct: dim(phi(x)) vs dim(z)", s.len(), zi.len())?;
        value += sq_dist(&s, zi) / b;
        let up: Vec<f64> = s.iter().zip(*zi).map(|(a, c)| 2.0 * (a - c) / b).collect();
        g_phi.add(&phi.backward(xi, &up)?.0);
    }
    Ok(LossGrad::new(value, Grads::phi_only(g_phi.grad)))
}

/// Mean of `‖β(φ(x)) − z‖²`.
pub fn loss_multitask(beta: &Map, phi: &Map, x: &[&[f64]], z: &[&[f64]]) -> Result<LossGrad> {
    if x.is_empty() {
        return Err(Error::EmptyBatch("loss_multitask"));
    }
    check_dim("loss_multitask side batch", x.len(), z.len())?;
    check_dim(
        "loss_multitask: beta input vs representation",
        phi.out_dim(),
        beta.in_dim(),
    )?;
    let b = x.len() as f64;
    let mut value = 0.0;
    let mut g_phi = Acc::new(phi.num_params());
    let mut g_beta = Acc::new(beta.num_params());
    for (xi, zi) in x.iter().zip(z) {
        let s = phi.forward(xi)?;
        let r = beta.forward(&s)?;
        check_dim("loss_multitask: dim(beta(s)) vs dim(z)", r.len(), zi.len())?;
        value += sq_dist(&r, zi) / b;
        let up: Vec<f64> = r.iter().zip(*zi).map(|(a, c)| 2.0 * (a - c) / b).collect();
        let (gb, gs) = beta.backward(&s, &up)?;
        g_beta.add(&gb);
        g_phi.add(&phi.backward(xi, &gs)?.0);
    }
    Ok(LossGrad::new(
        value,
        Grads {
            phi: g_phi.grad,
            psi: Vec::new(),
            beta: g_beta.grad,
        },
    ))
}

/// Per-dimension unbiased batch variance penalty `Σ_k (Var(s_k) − 1)²`
/// and its gradient w.r.t. every row of `s`.
fn variance_penalty(s: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let n = s.len() as f64;
    let k = s[0].len();
    let mut value = 0.0;
    let mut grads = vec![vec![0.0; k]; s.len()];
    for dim in 0..k {
        let mean = s.iter().map(|r| r[dim]).sum::<f64>() / n;
        let var = s.iter().map(|r| (r[dim] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        value += (var - 1.0).powi(2);
        for (row, g) in s.iter().zip(grads.iter_mut()) {
            g[dim] = 2.0 * (var - 1.0) * 2.0 * (row[dim] - mean) / (n - 1.0);
        }
    }
    (value, grads)
}

/// Mean of `‖φ(x) − β(z)‖²`, plus `γ Σ_k (Var(s_k) − 1)²` on both the
/// `φ(x)` and the `β(z)` batches when `γ > 0`.
pub fn loss_multiview_corr(beta: &Map, phi: &Map, x: &[&[f64]], z: &[&[f64]], gamma: f64) -> Result<LossGrad> {
    if x.is_empty() {
        return Err(Error::EmptyBatch("loss_multiview_corr"));
    }
    check_dim("loss_multiview_corr side batch", x.len(), z.len())?;
    check_dim(
        "loss_multiview_corr: dim(phi) vs dim(beta)",
        phi.out_dim(),
        beta.out_dim(),
    )?;
    if gamma > 0.0 && x.len() < 2 {
        return Err(Error::InvalidInput(
            "variance penalty needs a batch of at least 2 samples".into(),
        ));
    }
    let b = x.len() as f64;
    let a: Vec<Vec<f64>> = x.iter().map(|xi| phi.forward(xi)).collect::<Result<_>>()?;
    let c: Vec<Vec<f64>> = z.iter().map(|zi| beta.forward(zi)).collect::<Result<_>>()?;

    let mut value = 0.0;
    let mut up_a: Vec<Vec<f64>> = Vec::with_capacity(a.len());
    let mut up_c: Vec<Vec<f64>> = Vec::with_capacity(a.len());
    for (ai, ci) in a.iter().zip(&c) {
        value += sq_dist(ai, ci) / b;
        let d: Vec<f64> = ai.iter().zip(ci).map(|(p, q)| 2.0 * (p - q) / b).collect();
        up_c.push(d.iter().map(|v| -v).collect());
        up_a.push(d);
    }
    if gamma > 0.0 {
        let (va, ga) = variance_penalty(&a);
        let (vc, gc) = variance_penalty(&c);
        value += gamma * (va + vc);
        for (u, g) in up_a.iter_mut().zip(&ga) {
            axpy(gamma, g, u);
        }
        for (u, g) in up_c.iter_mut().zip(&gc) {
            axpy(gamma, g, u);
        }
    }

    let mut g_phi = Acc::new(phi.num_params());
    let mut g_beta = Acc::new(beta.num_params());
    for ((xi, zi), (ua, uc)) in x.iter().zip(z).zip(up_a.iter().zip(&up_c)) {
        g_phi.add(&phi.backward(xi, ua)?.0);
        g_beta.add(&beta.backward(zi, uc)?.0);
    }
    Ok(LossGrad::new(
        value,
        Grads {
            phi: g_phi.grad,
            psi: Vec::new(),
            beta: g_beta.grad,
        },
    ))
}

/// Mean binary cross-entropy of `ψ(β(z))` against `y`; ψ is the same head
/// used by the main objective.
pub fn loss_multiview_pred(psi: &LogisticHead, beta: &Map, z: &[&[f64]], y: &[f64]) -> Result<LossGrad> {
    if z.is_empty() {
        return Err(Error::EmptyBatch("loss_multiview_pred"));
    }
    check_dim("loss_multiview_pred labels", z.len(), y.len())?;
    check_labels(y)?;
    let b = z.len() as f64;
    let mut value = 0.0;
    let mut g_psi = Acc::new(psi_len(psi));
    let mut g_beta = Acc::new(beta.num_params());
    for (zi, yi) in z.iter().zip(y) {
        let s = beta.forward(zi)?;
        let (l, dlogit) = bce(psi.logit(&s)?, *yi);
        value += l / b;
        let (gp, gs) = psi.backward_logit(&s, dlogit / b)?;
        g_psi.add(&gp);
        g_beta.add(&beta.backward(zi, &gs)?.0);
    }
    Ok(LossGrad::new(
        value,
        Grads {
            phi: Vec::new(),
            psi: g_psi.grad,
            beta: g_beta.grad,
        },
    ))
}

/// `(Σ_sim ‖Δs‖² + Σ_dis σ(‖Δs‖)) / #pairs` with `Δs = φ(x_i) − φ(x_j)`.
pub fn loss_pairwise(phi: &Map, x: &[&[f64]], pairs: &[PairIndex], sigma: Sigma) -> Result<LossGrad> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("loss_pairwise"));
    }
    if let Some(p) = pairs.iter().find(|p| p.i >= x.len() || p.j >= x.len() || p.i == p.j) {
        return Err(Error::InvalidInput(format!(
            "pair ({}, {}) does not index a batch of {}",
            p.i,
            p.j,
            x.len()
        )));
    }
    let s: Vec<Vec<f64>> = x.iter().map(|xi| phi.forward(xi)).collect::<Result<_>>()?;
    let np = pairs.len() as f64;
    let mut up = vec![vec![0.0; phi.out_dim()]; x.len()];
    let mut value = 0.0;
    for p in pairs {
        let delta: Vec<f64> = s[p.i].iter().zip(&s[p.j]).map(|(a, b)| a - b).collect();
        let d2: f64 = delta.iter().map(|v| v * v).sum();
        // dL/d(d²) for this pair
        let slope = match p.tag {
            PairTag::Similar => {
                value += d2 / np;
                1.0
            }
            PairTag::Dissimilar => {
                let (v, dv) = sigma.eval_sq(d2);
                value += v / np;
                dv
            }
        };
        for (k, dk) in delta.iter().enumerate() {
            let g = slope * 2.0 * dk / np;
            up[p.i][k] += g;
            up[p.j][k] -= g;
        }
    }
    let mut g_phi = Acc::new(phi.num_params());
    for (xi, u) in x.iter().zip(&up) {
        if u.iter().any(|v| *v != 0.0) {
            g_phi.add(&phi.backward(xi, u)?.0);
        }
    }
    Ok(LossGrad::new(value, Grads::phi_only(g_phi.grad)))
}

fn transitions(
    phi: &Map,
    from: &[&[f64]],
    to: &[&[f64]],
    z: &[&[f64]],
    context: &'static str,
) -> Result<Vec<Vec<f64>>> {
    check_dim(context, from.len(), to.len())?;
    check_dim(context, from.len(), z.len())?;
    from.iter()
        .zip(to)
        .map(|(a, b)| {
            let sa = phi.forward(a)?;
            let sb = phi.forward(b)?;
            Ok(sb.iter().zip(&sa).map(|(p, q)| p - q).collect())
        })
        .collect()
}

fn backprop_transitions(phi: &Map, from: &[&[f64]], to: &[&[f64]], up: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut g_phi = Acc::new(phi.num_params());
    for ((a, b), u) in from.iter().zip(to).zip(up) {
        if u.iter().all(|v| *v == 0.0) {
            continue;
        }
        g_phi.add(&phi.backward(b, u)?.0);
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        g_phi.add(&phi.backward(a, &neg)?.0);
    }
    Ok(g_phi.grad)
}

/// Mean of `‖(φ(x_{t+1}) − φ(x_t)) − z_t‖²`: the auxiliary map is fixed to
/// the representation difference and `z_t` encodes the forward change.
pub fn loss_transform_fixed(phi: &Map, from: &[&[f64]], to: &[&[f64]], z: &[&[f64]]) -> Result<LossGrad> {
    if from.is_empty() {
        return Err(Error::EmptyBatch("loss_transform_fixed"));
    }
    let delta = transitions(phi, from, to, z, "loss_transform_fixed: aligned transitions")?;
    let b = from.len() as f64;
    let mut value = 0.0;
    let mut up = Vec::with_capacity(delta.len());
    for (d, zi) in delta.iter().zip(z) {
        check_dim("loss_transform_fixed: dim(phi) vs dim(z)", d.len(), zi.len())?;
        value += sq_dist(d, zi) / b;
        up.push(d.iter().zip(*zi).map(|(p, q)| 2.0 * (p - q) / b).collect());
    }
    let g = backprop_transitions(phi, from, to, &up)?;
    Ok(LossGrad::new(value, Grads::phi_only(g)))
}

/// Consistency of representation changes across transitions with equal (or,
/// in continuous mode, similar) transformations:
/// discrete `mean_{z_i = z_j} ‖Δφ_i − Δφ_j‖²`,
/// continuous `Σ_{i<j} σ(‖z_i − z_j‖) ‖Δφ_i − Δφ_j‖² / #pairs`.
///
/// With no matching pair in discrete mode the loss is 0 and
/// [`LossGrad::warning`] is set.
pub fn loss_transform_pairs(
    phi: &Map,
    from: &[&[f64]],
    to: &[&[f64]],
    z: &[&[f64]],
    mode: TransformMode,
    sigma: Sigma,
) -> Result<LossGrad> {
    if from.len() < 2 {
        return Err(Error::InvalidInput(
            "loss_transform_pairs needs at least 2 transitions".into(),
        ));
    }
    let delta = transitions(phi, from, to, z, "loss_transform_pairs: aligned transitions")?;
    let n = delta.len();
    let mut weighted: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = match mode {
                TransformMode::Discrete => {
                    let equal =
                        z[i].len() == z[j].len() && z[i].iter().zip(z[j]).all(|(a, b)| a.to_bits() == b.to_bits());
                    if equal {
                        1.0
                    } else {
                        0.0
                    }
                }
                TransformMode::Continuous => sigma.eval_sq(sq_dist(z[i], z[j])).0,
                TransformMode::Fixed => {
                    return Err(Error::InvalidInput(
                        "loss_transform_pairs needs discrete or continuous mode".into(),
                    ))
                }
            };
            if w != 0.0 || mode == TransformMode::Continuous {
                weighted.push((i, j, w));
            }
        }
    }
    if weighted.is_empty() {
        let mut out = LossGrad::new(0.0, Grads::phi_only(vec![0.0; phi.num_params()]));
        out.warning = Some("no transitions share a transformation; loss is 0".into());
        return Ok(out);
    }
    let np = weighted.len() as f64;
    let k = delta[0].len();
    let mut up = vec![vec![0.0; k]; n];
    let mut value = 0.0;
    for (i, j, w) in weighted {
        value += w * sq_dist(&delta[i], &delta[j]) / np;
        for c in 0..k {
            let g = 2.0 * w * (delta[i][c] - delta[j][c]) / np;
            up[i][c] += g;
            up[j][c] -= g;
        }
    }
    let g = backprop_transitions(phi, from, to, &up)?;
    Ok(LossGrad::new(value, Grads::phi_only(g)))
}

/// `‖W_ψ W_βᵀ‖²_F`: the rows of both weight matrices live in the
/// representation space and are pushed towards mutual orthogonality.
/// Biases are excluded. Only maps whose pre-activation is linear are
/// accepted.
pub fn irrelevance_penalty(psi: &Map, beta: &Map) -> Result<LossGrad> {
    let (wp, wb) = match (psi.linear_weight(), beta.linear_weight()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidInput(
                "the orthogonality penalty is only defined for linear psi and beta".into(),
            ))
        }
    };
    check_dim("irrelevance_penalty representation dim", wp.cols(), wb.cols())?;
    let p = wp.matmul(&wb.transpose())?;
    let value = p.as_slice().iter().map(|v| v * v).sum();
    let dwp = p.matmul(&wb)?.scale(2.0);
    let dwb = p.transpose().matmul(&wp)?.scale(2.0);
    Ok(LossGrad::new(
        value,
        Grads {
            phi: Vec::new(),
            psi: pad_weight_grad(psi, &dwp),
            beta: pad_weight_grad(beta, &dwb),
        },
    ))
}

/// Lay out a weight gradient in the map's flat parameter order (zero bias).
fn pad_weight_grad(map: &Map, dw: &Matrix) -> Vec<f64> {
    let mut g = dw.as_slice().to_vec();
    g.resize(map.num_params(), 0.0);
    g
}
