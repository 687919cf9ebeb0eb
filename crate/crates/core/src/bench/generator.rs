//! The random-walk task: a hidden 1-d state observed through a random
//! rotation together with `d − 1` distractor walks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{random_rotation, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Observation dimension.
    pub d: usize,
    /// Dimension of the embedded side view.
    pub e: usize,
    /// Standard deviation of the side-information noise.
    pub noise_std: f64,
    /// Trajectory length.
    pub length: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d: 50,
            e: 25,
            noise_std: 0.05,
            length: 1000,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.e < 2 {
            return Err(Error::InvalidConfig(format!(
                "need d >= 2 and e >= 2, got d = {}, e = {}",
                self.d, self.e
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if self.length == 0 {
            return Err(Error::InvalidConfig("trajectory length must be >= 1".into()));
        }
        Ok(())
    }
}

/// The two rotations shared by every trajectory of one task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// `d × d`, maps `[s, u]` to `x`.
    pub r: Matrix,
    /// `e × e`, maps `[s + ε, v]` to the embedded view.
    pub q: Matrix,
}

impl Task {
    pub fn sample(config: &GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let r = random_rotation(config.d, &mut rng.fork("rotation-x"))?;
        let q = random_rotation(config.e, &mut rng.fork("rotation-z"))?;
        Ok(Self { r, q })
    }

    /// A full trajectory of `length` steps with all side channels.
    pub fn trajectory(&self, config: &GeneratorConfig, length: usize, rng: &Rng) -> Result<Trajectory> {
        config.validate()?;
        check_task(self, config)?;
        let latent = LatentWalk::sample(config.d, length, &mut rng.fork("latent"));
        let x = rotate_all(&self.r, &latent.s, &latent.u);
        let y = labels(&latent.s);

        let mut noise = rng.fork("noise-direct");
        let z_direct: Vec<f64> = latent
            .s
            .iter()
            .map(|s| s + noise.normal(0.0, config.noise_std))
            .collect();

        let mut noise = rng.fork("noise-embedded");
        let view_s: Vec<f64> = latent
            .s
            .iter()
            .map(|s| s + noise.normal(0.0, config.noise_std))
            .collect();
        let v = walks(config.e - 1, length, &mut rng.fork("embedded-walk"));
        let z_embedded = rotate_all(&self.q, &view_s, &v);

        let mut noise = rng.fork("noise-relative");
        let z_relative: Vec<f64> = latent
            .s
            .windows(2)
            .map(|w| w[1] - w[0] + noise.normal(0.0, config.noise_std))
            .collect();

        Ok(Trajectory {
            s: latent.s,
            u: latent.u,
            v,
            x,
            y,
            z_direct,
            z_embedded,
            z_relative,
        })
    }

    /// Observations, states and labels only; identical to the corresponding
    /// fields of [`Task::trajectory`] with the same generator.
    pub fn observations(&self, config: &GeneratorConfig, length: usize, rng: &Rng) -> Result<Observations> {
        config.validate()?;
        check_task(self, config)?;
        let latent = LatentWalk::sample(config.d, length, &mut rng.fork("latent"));
        let x = rotate_all(&self.r, &latent.s, &latent.u);
        let y = labels(&latent.s);
        Ok(Observations { s: latent.s, x, y })
    }
}

fn check_task(task: &Task, config: &GeneratorConfig) -> Result<()> {
    if task.r.rows() != config.d || task.q.rows() != config.e {
        return Err(Error::InvalidConfig(
            "task rotations do not match the generator dimensions".into(),
        ));
    }
    Ok(())
}

/// One sampled sequence of the task.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub s: Vec<f64>,
    /// Distractor walks, one row of `d − 1` values per step.
    pub u: Vec<Vec<f64>>,
    /// Distractors of the embedded view, `e − 1` per step.
    pub v: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    /// 0 when `s > 0`, otherwise 1.
    pub y: Vec<f64>,
    pub z_direct: Vec<f64>,
    pub z_embedded: Vec<Vec<f64>>,
    /// Entry `k` describes the move from step `k` to `k + 1`.
    pub z_relative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub s: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// Task and trajectory of `config.length` steps, both derived from `config.seed`.
pub fn generate(config: &GeneratorConfig) -> Result<(Task, Trajectory)> {
    let root = Rng::new(config.seed);
    let task = Task::sample(config, &mut root.fork("task"))?;
    let traj = task.trajectory(config, config.length, &root.fork("train"))?;
    Ok((task, traj))
}

struct LatentWalk {
    s: Vec<f64>,
    u: Vec<Vec<f64>>,
}

impl LatentWalk {
    fn sample(d: usize, length: usize, rng: &mut Rng) -> Self {
        let s = walks(1, length, &mut rng.fork("state"))
            .into_iter()
            .map(|r| r[0])
            .collect();
        let u = walks(d - 1, length, &mut rng.fork("distractors"));
        Self { s, u }
    }
}

/// `width` independent unit-step Gaussian walks started at N(0, 1).
fn walks(width: usize, length: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(length);
    if length == 0 {
        return out;
    }
    let mut cur: Vec<f64> = (0..width).map(|_| rng.standard_normal()).collect();
    out.push(cur.clone());
    for _ in 1..length {
        for c in &mut cur {
            *c += rng.standard_normal();
        }
        out.push(cur.clone());
    }
    out
}

/// `R · [head, tail]` for every step.
fn rotate_all(r: &Matrix, head: &[f64], tail: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = r.rows();
    let mut buf = vec![0.0; d];
    head.iter()
        .zip(tail)
        .map(|(h, t)| {
            buf[0] = *h;
            buf[1..].copy_from_slice(t);
            r.matvec(&buf).expect("rotation matches latent dimension")
        })
        .collect()
}

fn labels(s: &[f64]) -> Vec<f64> {
    s.iter().map(|&v| if v > 0.0 { 0.0 } else { 1.0 }).collect()
}

/// Accuracy of thresholding `s + N(0, noise_std²)` at zero against the
/// labels: the ceiling for any classifier that recovers `s` only up to the
/// side-information noise.
pub fn bayes_rate(s: &[f64], noise_std: f64, rng: &mut Rng) -> f64 {
    if s.is_empty() {
        return f64::NAN;
    }
    let hits = s
        .iter()
        .filter(|&&v| {
            let y = if v > 0.0 { 0 } else { 1 };
            let guess = if v + rng.normal(0.0, noise_std) > 0.0 { 0 } else { 1 };
            y == guess
        })
        .count();
    hits as f64 / s.len() as f64
}
