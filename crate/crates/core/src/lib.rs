//! Recovery of private images from sign-stripped mixtures of Gaussian
//! images, with brute-force oracles for every stage and a MAX-CUT reduction
//! showing the per-pixel sign problem is hard in general.

pub mod assign;
pub mod data;
pub mod error;
pub mod graph;
pub mod gram;
pub mod hardness;
pub mod matrix;
pub mod oracle;
pub mod pipeline;
pub mod publearn;
pub mod signsolve;

pub use error::{Error, Result};
pub use matrix::Matrix;
