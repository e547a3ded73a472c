//! Learning mixtures of Gaussians with a shared covariance by Poissonizing the
//! sample count and running tensor ICA on the lifted samples.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cumulants;
pub mod distributions;
pub mod error;
pub mod hardness;
pub mod ica;
pub mod learner;
pub mod linalg;
pub mod poissonization;
pub mod rng;
pub mod smoothed;

pub use error::{Error, Result};
pub use linalg::RealMatrix;
pub use rng::SeededRng;
