//! Euler–Maruyama simulation in emulated reduced precision, approximate
//! Gaussian variables, and nested multilevel Monte Carlo estimation.

pub mod error;
pub mod mlmc;
pub mod par;
pub mod randvar;
pub mod sde;
pub mod softfloat;
pub mod stats;

pub use error::{Error, Result};
pub use softfloat::Precision;
