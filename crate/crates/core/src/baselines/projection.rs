//! Linear feature extractors: whitening, PCA, linear SFA and closed-form CCA.
//!
//! All second moments use the `1/n` estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, dot, sym_eig, Matrix};

/// Relative eigenvalue floor used when whitening.
pub const EIG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectorKind {
    Whitening,
    Pca,
    Sfa,
    CcaX,
    CcaZ,
}

/// `y = D (x − μ)` with `D` of shape `k × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProjector {
    pub kind: ProjectorKind,
    pub directions: Matrix,
    pub mean: Vec<f64>,
}

impl LinearProjector {
    pub fn output_dim(&self) -> usize {
        self.directions.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        if centered.len() != x.len() || x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "LinearProjector::apply",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        self.directions.matvec(&centered)
    }

    pub fn apply_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.apply(x)).collect()
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        self.directions.row(i)
    }
}

fn validate_rows(x: &[Vec<f64>], context: &str) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput(format!("{context}: empty or ragged data")));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{context} input")));
    }
    Ok(d)
}

fn mean_of(x: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for r in x {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = x.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// `Σ (x − μ)(x − μ)ᵀ / n`, or the raw second moment without `μ`.
fn second_moment(x: &[Vec<f64>], mean: Option<&[f64]>, d: usize) -> Matrix {
    let mut c = Matrix::zeros(d, d);
    let mut buf = vec![0.0; d];
    for r in x {
        for k in 0..d {
            buf[k] = r[k] - mean.map_or(0.0, |m| m[k]);
        }
        for i in 0..d {
            let bi = buf[i];
            if bi == 0.0 {
                continue;
            }
            let row = c.row_mut(i);
            for j in i..d {
                row[j] += bi * buf[j];
            }
        }
    }
    let n = x.len() as f64;
    for i in 0..d {
        for j in i..d {
            let v = c[(i, j)] / n;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// What to do with directions whose variance falls below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloorPolicy {
    /// Drop them; the whitened space has fewer dimensions.
    Drop,
    /// Fail with [`Error::RankDeficient`].
    Reject,
}

/// Whitening transform `Λ^{-1/2} Vᵀ` of the (optionally centered) second
/// moment. Eigenvalues at or below `EIG_FLOOR · λ_max` are handled by `policy`.
pub fn fit_whitening(x: &[Vec<f64>], center: bool, policy: FloorPolicy) -> Result<LinearProjector> {
    let d = validate_rows(x, "whitening")?;
    let mean = if center { mean_of(x, d) } else { vec![0.0; d] };
    let c = second_moment(x, center.then_some(mean.as_slice()), d);
    let eig = sym_eig(&c)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::RankDeficient("data has no variance".into()));
    }
    let keep: Vec<usize> = (0..d).filter(|&i| eig.values[i] > EIG_FLOOR * top).collect();
    if keep.len() < d && policy == FloorPolicy::Reject {
        return Err(Error::RankDeficient(format!(
            "second moment has rank {} < {d} after flooring at {EIG_FLOOR:e} x max eigenvalue",
            keep.len()
        )));
    }
    let mut directions = Matrix::zeros(keep.len(), d);
    for (r, &i) in keep.iter().enumerate() {
        let scale = 1.0 / eig.values[i].sqrt();
        let v = eig.vector(i);
        for k in 0..d {
            directions[(r, k)] = v[k] * scale;
        }
    }
    Ok(LinearProjector {
        kind: ProjectorKind::Whitening,
        directions,
        mean,
    })
}

/// Top-`k` principal directions of mean-centered data.
pub fn fit_pca(x: &[Vec<f64>], k: usize) -> Result<(LinearProjector, Vec<f64>)> {
    let d = validate_rows(x, "PCA")?;
    if x.len() < 2 {
        return Err(Error::InvalidInput("PCA needs at least 2 samples".into()));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!("PCA: k = {k} must lie in 1..={d}")));
    }
    let mean = mean_of(x, d);
    let eig = sym_eig(&second_moment(x, Some(&mean), d))?;
    let mut directions = Matrix::zeros(k, d);
    for i in 0..k {
        directions.row_mut(i).copy_from_slice(&eig.vector(i));
    }
    Ok((
        LinearProjector {
            kind: ProjectorKind::Pca,
            directions,
            mean,
        },
        eig.values[..k].to_vec(),
    ))
}

/// Linear slow feature analysis: the `k` unit-variance directions whose
/// temporal differences have the smallest second moment.
///
/// Data are centered and whitened (rank deficiency beyond the floor is an
/// error); the second moment of successive differences of the whitened
/// signal is eigendecomposed and its smallest-eigenvalue directions are
/// composed with the whitening transform.
pub fn fit_sfa(x: &[Vec<f64>], k: usize) -> Result<(LinearProjector, Vec<f64>)> {
    let d = validate_rows(x, "SFA")?;
    if x.len() < 3 {
        return Err(Error::InvalidInput("SFA needs at least 3 time-ordered samples".into()));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!("SFA: k = {k} must lie in 1..={d}")));
    }
    let white = fit_whitening(x, true, FloorPolicy::Reject)?;
    let w = white.apply_all(x)?;
    let diffs: Vec<Vec<f64>> = w
        .windows(2)
        .map(|p| p[1].iter().zip(&p[0]).map(|(a, b)| a - b).collect())
        .collect();
    let r = white.output_dim();
    let eig = sym_eig(&second_moment(&diffs, None, r))?;
    let mut directions = Matrix::zeros(k, d);
    let mut slowness = Vec::with_capacity(k);
    for i in 0..k {
        let idx = r - 1 - i;
        let v = eig.vector(idx);
        let mut dir = white.directions.matvec_t(&v)?;
        canonical_sign(&mut dir);
        directions.row_mut(i).copy_from_slice(&dir);
        slowness.push(eig.values[idx]);
    }
    Ok((
        LinearProjector {
            kind: ProjectorKind::Sfa,
            directions,
            mean: white.mean,
        },
        slowness,
    ))
}

#[derive(Debug, Clone)]
pub struct CcaFit {
    pub x: LinearProjector,
    pub z: LinearProjector,
    /// Canonical correlations, descending, in [0, 1].
    pub correlations: Vec<f64>,
}

/// Closed-form CCA: whiten both views, eigendecompose `M Mᵀ` with `M` the
/// whitened cross-covariance, and map the eigenvectors back.
///
/// x-directions follow the largest-magnitude-positive convention; each
/// z-direction is signed so that its correlation with the paired
/// x-direction is nonnegative.
pub fn fit_cca(x: &[Vec<f64>], z: &[Vec<f64>], k: usize) -> Result<CcaFit> {
    let dx = validate_rows(x, "CCA x")?;
    let dz = validate_rows(z, "CCA z")?;
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            context: "CCA views",
            expected: x.len(),
            actual: z.len(),
        });
    }
    if x.len() < dx.max(dz) + 1 {
        return Err(Error::InvalidInput(format!(
            "CCA needs more than {} samples, got {}",
            dx.max(dz),
            x.len()
        )));
    }
    if k == 0 || k > dx.min(dz) {
        return Err(Error::InvalidInput(format!(
            "CCA: k = {k} must lie in 1..={}",
            dx.min(dz)
        )));
    }
    let wx = fit_whitening(x, true, FloorPolicy::Reject)?;
    let wz = fit_whitening(z, true, FloorPolicy::Reject)?;
    let xs = wx.apply_all(x)?;
    let zs = wz.apply_all(z)?;
    let n = x.len() as f64;
    let mut m = Matrix::zeros(dx, dz);
    for (a, b) in xs.iter().zip(&zs) {
        for (i, ai) in a.iter().enumerate() {
            for (r, bj) in m.row_mut(i).iter_mut().zip(b) {
                *r += ai * bj / n;
            }
        }
    }
    let eig = sym_eig(&m.matmul(&m.transpose())?)?;
    let mut dir_x = Matrix::zeros(k, dx);
    let mut dir_z = Matrix::zeros(k, dz);
    let mut correlations = Vec::with_capacity(k);
    for i in 0..k {
        let rho = eig.values[i].max(0.0).sqrt().min(1.0);
        let u = eig.vector(i);
        let mut a = wx.directions.matvec_t(&u)?;
        let mut v = m.matvec_t(&u)?;
        let vn = dot(&v, &v).sqrt();
        if vn > 0.0 {
            v.iter_mut().for_each(|c| *c /= vn);
        }
        let mut b = wz.directions.matvec_t(&v)?;
        let before = a.clone();
        canonical_sign(&mut a);
        if a != before {
            b.iter_mut().for_each(|c| *c = -*c);
        }
        dir_x.row_mut(i).copy_from_slice(&a);
        dir_z.row_mut(i).copy_from_slice(&b);
        correlations.push(rho);
    }
    Ok(CcaFit {
        x: LinearProjector {
            kind: ProjectorKind::CcaX,
            directions: dir_x,
            mean: wx.mean,
        },
        z: LinearProjector {
            kind: ProjectorKind::CcaZ,
            directions: dir_z,
            mean: wz.mean,
        },
        correlations,
    })
}
