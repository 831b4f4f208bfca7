use std::fmt;
use std::str::FromStr;

use super::exact::{inv_cdf, upper_tail_quantile};
use super::quadrature::{legendre, GaussLegendre};
use crate::error::{Error, Result};

/// Deepest piece index reachable by a uniform of the form `(k + 1/2) 2^-52`.
const MAX_DEPTH: usize = 52;
const FIT_NODES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ApproxKind {
    Linear,
    Cubic,
}

impl ApproxKind {
    pub fn degree(self) -> usize {
        match self {
            ApproxKind::Linear => 1,
            ApproxKind::Cubic => 3,
        }
    }
}

impl fmt::Display for ApproxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApproxKind::Linear => "linear",
            ApproxKind::Cubic => "cubic",
        })
    }
}

impl FromStr for ApproxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ApproxKind::Linear),
            "cubic" => Ok(ApproxKind::Cubic),
            _ => Err(Error::InvalidArgument(format!(
                "unknown approximation kind `{s}` (expected linear or cubic)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Piece {
    mid: f64,
    inv_half: f64,
    // Monomial coefficients in the local coordinate.
    coef: [f64; 4],
}

impl Piece {
    #[inline]
    fn eval(&self, t: f64) -> f64 {
        let x = (self.mid - t) * self.inv_half;
        let [a0, a1, a2, a3] = self.coef;
        ((a3 * x + a2) * x + a1) * x + a0
    }
}

/// Piecewise-polynomial approximation of the Gaussian quantile.
///
/// Evaluation works on the tail mass `t = min(u, 1 - u)` and negates for
/// `u < 1/2`, so the function is odd about `1/2` bit for bit. Piece 0 is a
/// single odd polynomial on `u` in `[1/4, 3/4]`. Piece `j >= 1` covers the
/// dyadic tail band `t` in `[2^-(j+2), 2^-(j+1))`. The deepest piece is
/// continued down to `t = 0`, which bounds the range.
///
/// Every piece is the `L2`-orthogonal projection of the quantile onto the
/// polynomials of the chosen degree over its interval.
#[derive(Clone, Debug, PartialEq)]
pub struct InvCdfApprox {
    kind: ApproxKind,
    intervals: usize,
    pieces: Vec<Piece>,
}

impl InvCdfApprox {
    /// `intervals` counts pieces on `[1/2, 1)`. It must be a power of two
    /// `>= 2`. Counts beyond the reachable depth of 52 add no pieces.
    pub fn new(kind: ApproxKind, intervals: usize) -> Result<Self> {
        if intervals < 2 || !intervals.is_power_of_two() {
            return Err(Error::InvalidIntervalCount(intervals));
        }
        let depth = intervals.min(MAX_DEPTH);
        let rule = GaussLegendre::new(FIT_NODES);
        let degree = kind.degree();
        let mut pieces = Vec::with_capacity(depth);

        // x in [-1, 1] maps to u = 1/2 + x/4; even terms vanish for an odd target.
        let mut c = legendre_projection(&rule, degree, |x| inv_cdf(0.5 + 0.25 * x));
        c[0] = 0.0;
        c[2] = 0.0;
        pieces.push(Piece {
            mid: 0.5,
            inv_half: 4.0,
            coef: monomial(c),
        });

        for j in 1..depth {
            let scale = (-((j + 2) as f64)).exp2();
            let mid = 1.5 * scale;
            let half = 0.5 * scale;
            let c = legendre_projection(&rule, degree, |x| upper_tail_quantile(mid - half * x));
            pieces.push(Piece {
                mid,
                inv_half: 1.0 / half,
                coef: monomial(c),
            });
        }
        Ok(InvCdfApprox {
            kind,
            intervals,
            pieces,
        })
    }

    pub fn kind(&self) -> ApproxKind {
        self.kind
    }

    /// The interval count requested at construction.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of distinct pieces on `[1/2, 1)`.
    pub fn depth(&self) -> usize {
        self.pieces.len()
    }

    /// Interior breakpoints on `(1/2, 1)`, ascending.
    pub fn breakpoints(&self) -> Vec<f64> {
        (0..self.depth() - 1)
            .map(|j| 1.0 - (-((j + 2) as f64)).exp2())
            .collect()
    }

    /// Monomial coefficients of each piece in its local coordinate
    /// `x = (mid - t) / half`, lowest order first.
    pub fn coefficients(&self) -> Vec<[f64; 4]> {
        self.pieces.iter().map(|p| p.coef).collect()
    }

    /// Least upper bound of `|approx(u)|` over `(0, 1)`.
    pub fn sup_abs(&self) -> f64 {
        let last = self.pieces.last().expect("at least two pieces");
        last.eval(0.0)
    }

    /// Checked evaluation.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain("inverse CDF argument must lie in (0, 1)"));
        }
        Ok(self.eval_unchecked(u))
    }

    /// Evaluation for `u` known to lie in `(0, 1)`.
    #[inline]
    pub fn eval_unchecked(&self, u: f64) -> f64 {
        if u < 0.5 {
            -self.eval_tail(u)
        } else {
            self.eval_tail(1.0 - u)
        }
    }

    #[inline]
    fn eval_tail(&self, t: f64) -> f64 {
        // t in [2^-(j+2), 2^-(j+1)) has biased exponent 1021 - j.
        let biased = ((t.to_bits() >> 52) & 0x7ff) as i64;
        let j = (1021 - biased).clamp(0, self.pieces.len() as i64 - 1) as usize;
        self.pieces[j].eval(t)
    }

    /// `E[Z~^p]` for `p = 1..=p_max`, by Gauss–Legendre quadrature per piece.
    pub fn moments(&self, p_max: usize) -> Result<Vec<f64>> {
        if p_max > 8 {
            return Err(Error::InvalidArgument(format!(
                "moment order {p_max} exceeds 8"
            )));
        }
        let rule = GaussLegendre::new(FIT_NODES);
        let mut out = vec![0.0; p_max];
        for (lo, hi) in self.piece_bounds() {
            for (k, m) in out.iter_mut().enumerate() {
                let p = (k + 1) as i32;
                let upper = rule.integrate(lo, hi, |t| self.eval_tail(t).powi(p));
                let lower = rule.integrate(lo, hi, |t| (-self.eval_tail(t)).powi(p));
                *m += upper + lower;
            }
        }
        Ok(out)
    }

    /// `E[(Z - Z~)^2]` against the exact quantile.
    pub fn l2_error(&self) -> f64 {
        let rule = GaussLegendre::new(FIT_NODES);
        let depth = self.depth();
        let mut half_sum = 0.0;
        let err = |t: f64| {
            let d = upper_tail_quantile(t) - self.eval_tail(t);
            d * d
        };
        half_sum += rule.integrate(0.25, 0.5, err);
        // The deepest piece is integrated octave by octave far past its
        // nominal start; the remaining mass below 2^-(depth+64) is negligible.
        for j in 1..depth + 64 {
            let lo = (-((j + 2) as f64)).exp2();
            half_sum += rule.integrate(lo, 2.0 * lo, err);
        }
        2.0 * half_sum
    }

    /// Tail-mass bounds of each piece; the deepest is closed off at 0.
    fn piece_bounds(&self) -> Vec<(f64, f64)> {
        let depth = self.depth();
        let mut out = Vec::with_capacity(depth);
        out.push((0.25, 0.5));
        for j in 1..depth {
            let lo = (-((j + 2) as f64)).exp2();
            let lo = if j + 1 == depth { 0.0 } else { lo };
            out.push((lo, (-((j + 1) as f64)).exp2()));
        }
        out
    }
}

/// Legendre coefficients `c_0..c_degree` of `f` on `[-1, 1]`, padded to four.
fn legendre_projection(rule: &GaussLegendre, degree: usize, f: impl Fn(f64) -> f64) -> [f64; 4] {
    let values: Vec<f64> = rule.nodes.iter().map(|&x| f(x)).collect();
    let mut c = [0.0; 4];
    for (k, ck) in c.iter_mut().enumerate().take(degree + 1) {
        let ip: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .zip(&values)
            .map(|((&x, &w), &v)| w * v * legendre(k, x))
            .sum();
        *ck = (2 * k + 1) as f64 / 2.0 * ip;
    }
    c
}

fn monomial(c: [f64; 4]) -> [f64; 4] {
    [c[0] - 0.5 * c[2], c[1] - 1.5 * c[3], 1.5 * c[2], 2.5 * c[3]]
}

/// Histogram of `Z~` from `n` stream samples, as densities per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityHistogram {
    pub lo: f64,
    pub bin_width: f64,
    pub density: Vec<f64>,
    pub min_sample: f64,
    pub max_sample: f64,
}

impl DensityHistogram {
    /// Bins cover `[-half_range, half_range)`; samples outside are counted
    /// toward normalisation but land in no bin.
    pub fn sample(
        approx: &InvCdfApprox,
        n: u64,
        bin_width: f64,
        half_range: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(bin_width > 0.0 && half_range > 0.0) || n == 0 {
            return Err(Error::InvalidArgument(
                "histogram needs positive bin width, range and sample count".into(),
            ));
        }
        let bins = (2.0 * half_range / bin_width).ceil() as usize;
        let mut counts = vec![0u64; bins];
        let mut stream = super::UniformStream::new(seed, 0);
        let (mut min_sample, mut max_sample) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..n {
            let z = approx.eval_unchecked(stream.next_uniform());
            min_sample = min_sample.min(z);
            max_sample = max_sample.max(z);
            let b = ((z + half_range) / bin_width).floor();
            if b >= 0.0 && (b as usize) < bins {
                counts[b as usize] += 1;
            }
        }
        let norm = 1.0 / (n as f64 * bin_width);
        Ok(DensityHistogram {
            lo: -half_range,
            bin_width,
            density: counts.iter().map(|&c| c as f64 * norm).collect(),
            min_sample,
            max_sample,
        })
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }
}
