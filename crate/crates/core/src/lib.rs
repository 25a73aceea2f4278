//! Guided cost learning: sample-based maximum-entropy inverse optimal
//! control with a neural cost and linear-Gaussian policy optimization.

pub mod costmodel;
pub mod envs;
pub mod error;
pub mod gcl;
pub mod harness;
pub mod ioc;
pub mod linalg;
pub mod polopt;
pub mod rng;
pub mod trajmath;

pub use error::{Error, Result};
