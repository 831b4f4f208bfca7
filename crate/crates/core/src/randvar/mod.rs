//! Uniform streams and Gaussian variables, exact and approximate.

mod approx;
mod exact;
pub mod quadrature;
mod uniform;

use std::sync::Arc;

pub use approx::{ApproxKind, DensityHistogram, InvCdfApprox};
pub use exact::exact_inv_cdf;
pub use uniform::{derive_seed, uniform_at, UniformStream};

use crate::error::Result;

/// Source of the Gaussian variables driving a path.
#[derive(Clone, Debug, PartialEq)]
pub enum Variables {
    Exact,
    Approx(Arc<InvCdfApprox>),
}

impl Variables {
    pub fn approx(kind: ApproxKind, intervals: usize) -> Result<Self> {
        Ok(Variables::Approx(Arc::new(InvCdfApprox::new(
            kind, intervals,
        )?)))
    }

    /// Maps a uniform in `(0, 1)` to the variable, unchecked.
    #[inline]
    pub fn sample(&self, u: f64) -> f64 {
        match self {
            Variables::Exact => exact::inv_cdf(u),
            Variables::Approx(a) => a.eval_unchecked(u),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Variables::Exact)
    }
}

impl std::fmt::Display for Variables {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variables::Exact => f.write_str("exact"),
            Variables::Approx(a) => write!(f, "{}:{}", a.kind(), a.intervals()),
        }
    }
}

impl std::str::FromStr for Variables {
    type Err = crate::error::Error;

    /// Parses `exact`, `linear:K` or `cubic:K`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(Variables::Exact);
        }
        let (kind, k) = s.split_once(':').ok_or_else(|| {
            crate::error::Error::InvalidArgument(format!(
                "approximation `{s}` must be exact, linear:K or cubic:K"
            ))
        })?;
        let k: usize = k.parse().map_err(|_| {
            crate::error::Error::InvalidArgument(format!(
                "interval count in `{s}` is not an integer"
            ))
        })?;
        Variables::approx(kind.parse()?, k)
    }
}

/// `E[Z~^p]` for `p = 1..=p_max` (at most 8).
pub fn moment_diagnostics(approx: &InvCdfApprox, p_max: usize) -> Result<Vec<f64>> {
    approx.moments(p_max)
}
