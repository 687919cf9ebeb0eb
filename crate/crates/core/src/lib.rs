//! Learning with side information: auxiliary objectives that shape an
//! intermediate representation using data available only at training time,
//! the procedures that combine them with a supervised objective, and a
//! synthetic benchmark that compares them against side-information-free
//! baselines.

pub mod baselines;
pub mod bench;
pub mod data;
pub mod error;
pub mod linalg;
pub mod models;
pub mod patterns;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use rng::Rng;
