//! Binary floating-point emulation with round-to-nearest-even.
//!
//! Values are carried in `f64`. A [`Precision`] keeps `m` stored fraction bits
//! (plus the implicit leading one) and an unbounded exponent, so the only
//! error it models is relative rounding error: every result is the exact
//! mathematical result rounded to the nearest value with `m` fraction bits,
//! ties going to the value whose last stored bit is zero.
//!
//! For `m <= 24` the exact operation is first evaluated in `f64` and then
//! rounded; the 53-bit carrier is wide enough for that double rounding to be
//! innocuous for `+ - * / sqrt`. For `m` of 25 and 26 the carrier result is
//! paired with its exact residual (two-sum or fused multiply-add) so that
//! the halfway cases are still resolved against the true result.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const SIGN_MASK: u64 = 1 << 63;
const EXP_MASK: u64 = 0x7ff << 52;
const MIN_NORMAL_BITS: u64 = 1 << 52;
const CARRIER_BITS: u32 = 52;
const TWO_POW_64: f64 = 18446744073709551616.0;
const TWO_POW_M64: f64 = 1.0 / TWO_POW_64;

/// Largest emulated mantissa width that is accepted besides the carrier itself.
pub const MAX_EMULATED_BITS: u32 = 26;

/// Widths up to this many fraction bits may round the `f64` result directly.
const DIRECT_ROUNDING_BITS: u32 = 24;

/// An emulated binary floating-point format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Precision {
    mantissa_bits: u32,
}

impl Precision {
    /// 7 fraction bits, as in bfloat16.
    pub const BF16: Precision = Precision { mantissa_bits: 7 };
    /// 10 fraction bits, as in IEEE half precision.
    pub const FP16: Precision = Precision { mantissa_bits: 10 };
    /// 16 fraction bits, an intermediate width between half and single.
    pub const FP22: Precision = Precision { mantissa_bits: 16 };
    /// 23 fraction bits, as in IEEE single precision.
    pub const FP32: Precision = Precision { mantissa_bits: 23 };
    /// The `f64` carrier itself; rounding is the identity.
    pub const CARRIER: Precision = Precision {
        mantissa_bits: CARRIER_BITS,
    };

    pub fn new(mantissa_bits: u32) -> Result<Self> {
        match mantissa_bits {
            1..=MAX_EMULATED_BITS | CARRIER_BITS => Ok(Precision { mantissa_bits }),
            _ => Err(Error::InvalidPrecision(mantissa_bits)),
        }
    }

    #[inline]
    pub fn mantissa_bits(self) -> u32 {
        self.mantissa_bits
    }

    #[inline]
    pub fn is_carrier(self) -> bool {
        self.mantissa_bits == CARRIER_BITS
    }

    /// Unit roundoff `2^-(m+1)`, the largest relative error of one rounding.
    pub fn unit_roundoff(self) -> f64 {
        2f64.powi(-(self.mantissa_bits as i32 + 1))
    }

    /// Rounds `x` to the nearest representable value, ties to even.
    ///
    /// Non-finite input is returned unchanged; use [`Precision::try_round`]
    /// to have it rejected.
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        if self.is_carrier() {
            x
        } else {
            round_to_width(x, CARRIER_BITS - self.mantissa_bits)
        }
    }

    pub fn try_round(self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        finite(self.round(x))
    }

    pub fn is_representable(self, x: f64) -> bool {
        x.is_finite() && self.round(x) == x
    }

    /// Distance from `x` to the next representable value of larger magnitude.
    ///
    /// For `|x|` in `[2^k, 2^(k+1))` this is `2^(k-m)`.
    pub fn ulp(self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        if x == 0.0 {
            return Err(Error::Domain(
                "spacing at zero is undefined with an unbounded exponent",
            ));
        }
        Ok(2f64.powi(binary_exponent(x) - self.mantissa_bits as i32))
    }

    #[inline]
    pub fn add(self, x: f64, y: f64) -> f64 {
        self.debug_check(x, y);
        if self.mantissa_bits <= DIRECT_ROUNDING_BITS {
            return self.round(x + y);
        }
        if self.is_carrier() {
            return x + y;
        }
        let (hi, lo) = two_sum(x, y);
        round_with_residual(hi, lo, CARRIER_BITS - self.mantissa_bits)
    }

    #[inline]
    pub fn sub(self, x: f64, y: f64) -> f64 {
        self.add(x, -y)
    }

    #[inline]
    pub fn mul(self, x: f64, y: f64) -> f64 {
        self.debug_check(x, y);
        if self.mantissa_bits <= DIRECT_ROUNDING_BITS {
            return self.round(x * y);
        }
        if self.is_carrier() {
            return x * y;
        }
        let hi = x * y;
        let lo = x.mul_add(y, -hi);
        round_with_residual(hi, lo, CARRIER_BITS - self.mantissa_bits)
    }

    #[inline]
    pub fn div(self, x: f64, y: f64) -> f64 {
        self.debug_check(x, y);
        if self.mantissa_bits <= DIRECT_ROUNDING_BITS {
            return self.round(x / y);
        }
        if self.is_carrier() {
            return x / y;
        }
        let q = x / y;
        // x - q*y is exact; the true quotient is q + r/y.
        let r = (-q).mul_add(y, x);
        round_with_residual(q, r / y, CARRIER_BITS - self.mantissa_bits)
    }

    #[inline]
    pub fn sqrt(self, x: f64) -> f64 {
        self.debug_check(x, 0.0);
        if self.mantissa_bits <= DIRECT_ROUNDING_BITS {
            return self.round(x.sqrt());
        }
        if self.is_carrier() {
            return x.sqrt();
        }
        let s = x.sqrt();
        let r = (-s).mul_add(s, x);
        round_with_residual(s, r, CARRIER_BITS - self.mantissa_bits)
    }

    pub fn try_add(self, x: f64, y: f64) -> Result<f64> {
        self.check_operand(x)?;
        self.check_operand(y)?;
        finite(self.add(x, y))
    }

    pub fn try_sub(self, x: f64, y: f64) -> Result<f64> {
        self.check_operand(x)?;
        self.check_operand(y)?;
        finite(self.sub(x, y))
    }

    pub fn try_mul(self, x: f64, y: f64) -> Result<f64> {
        self.check_operand(x)?;
        self.check_operand(y)?;
        finite(self.mul(x, y))
    }

    pub fn try_div(self, x: f64, y: f64) -> Result<f64> {
        self.check_operand(x)?;
        self.check_operand(y)?;
        if y == 0.0 {
            return Err(Error::Domain("division by zero"));
        }
        finite(self.div(x, y))
    }

    pub fn try_sqrt(self, x: f64) -> Result<f64> {
        self.check_operand(x)?;
        if x < 0.0 {
            return Err(Error::Domain("square root of a negative value"));
        }
        finite(self.sqrt(x))
    }

    fn check_operand(self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        if self.round(x) != x {
            return Err(Error::NotRepresentable {
                value: x,
                mantissa_bits: self.mantissa_bits,
            });
        }
        Ok(())
    }

    #[inline]
    fn debug_check(self, x: f64, y: f64) {
        debug_assert!(
            !x.is_finite() || self.round(x) == x,
            "operand {x} not representable with {} bits",
            self.mantissa_bits
        );
        debug_assert!(
            !y.is_finite() || self.round(y) == y,
            "operand {y} not representable with {} bits",
            self.mantissa_bits
        );
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mantissa_bits {
            7 => f.write_str("bf16"),
            10 => f.write_str("fp16"),
            16 => f.write_str("fp22"),
            23 => f.write_str("fp32"),
            CARRIER_BITS => f.write_str("fp64"),
            m => write!(f, "custom:{m}"),
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bf16" => Ok(Precision::BF16),
            "fp16" | "half" => Ok(Precision::FP16),
            "fp22" => Ok(Precision::FP22),
            "fp32" | "single" => Ok(Precision::FP32),
            "fp64" | "double" | "carrier" => Ok(Precision::CARRIER),
            other => {
                let bits = other
                    .strip_prefix("custom:")
                    .and_then(|m| m.parse::<u32>().ok())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("unknown precision `{other}`"))
                    })?;
                Precision::new(bits)
            }
        }
    }
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(x))
    }
}

/// `floor(log2 |x|)` for finite nonzero `x`, subnormals included.
fn binary_exponent(x: f64) -> i32 {
    let mag = x.to_bits() & !SIGN_MASK;
    if mag < MIN_NORMAL_BITS {
        return binary_exponent(x * TWO_POW_64) - 64;
    }
    ((mag >> 52) as i32) - 1023
}

/// Clears the low `shift` fraction bits of `x`, rounding to nearest even.
///
/// A carry out of the fraction increments the exponent field, which is the
/// renormalisation on round-up.
#[inline]
fn round_to_width(x: f64, shift: u32) -> f64 {
    let bits = x.to_bits();
    let mag = bits & !SIGN_MASK;
    if mag >= EXP_MASK {
        return x;
    }
    if mag < MIN_NORMAL_BITS {
        if mag == 0 {
            return x;
        }
        return round_to_width(x * TWO_POW_64, shift) * TWO_POW_M64;
    }
    let lsb = (mag >> shift) & 1;
    let below_half = (1u64 << (shift - 1)) - 1;
    let rounded = (mag + below_half + lsb) & !((1u64 << shift) - 1);
    f64::from_bits((bits & SIGN_MASK) | rounded)
}

/// Rounds the exact value `hi + lo` where `hi` is the `f64` rounding of it.
///
/// `lo` can only change the outcome when `hi` sits exactly on a halfway
/// point of the target grid; then its sign breaks the tie.
#[inline]
fn round_with_residual(hi: f64, lo: f64, shift: u32) -> f64 {
    let bits = hi.to_bits();
    let mag = bits & !SIGN_MASK;
    if lo == 0.0 || !(MIN_NORMAL_BITS..EXP_MASK).contains(&mag) {
        return round_to_width(hi, shift);
    }
    let mask = (1u64 << shift) - 1;
    if mag & mask != 1u64 << (shift - 1) {
        return round_to_width(hi, shift);
    }
    let truncated = mag & !mask;
    let away = (lo > 0.0) == (hi > 0.0);
    let rounded = if away {
        truncated + (1u64 << shift)
    } else {
        truncated
    };
    f64::from_bits((bits & SIGN_MASK) | rounded)
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p2(k: i32) -> f64 {
        2f64.powi(k)
    }

    #[test]
    fn rounding_examples() {
        let h = Precision::FP16;
        assert_eq!(h.round(1.0), 1.0);
        assert_eq!(h.round(1.0 + p2(-11)), 1.0);
        assert_eq!(h.round(1.0 + 3.0 * p2(-11)), 1.0 + p2(-9));
        assert_eq!(h.round(1.0 + p2(-12)), 1.0);
        assert_eq!(h.round(-(1.0 + 3.0 * p2(-11))), -(1.0 + p2(-9)));
    }

    #[test]
    fn arithmetic_examples() {
        let h = Precision::FP16;
        assert_eq!(h.try_add(1.0, p2(-11)).unwrap(), 1.0);
        assert_eq!(h.try_mul(1.5, 2.0).unwrap(), 3.0);
        assert_eq!(h.try_add(1.0, p2(-10)).unwrap(), 1.0 + p2(-10));
        assert_eq!(h.try_sub(1.0 + p2(-10), p2(-10)).unwrap(), 1.0);
        assert_eq!(h.try_div(3.0, 2.0).unwrap(), 1.5);
        assert_eq!(h.try_sqrt(2.25).unwrap(), 1.5);
    }

    #[test]
    fn ulp_examples() {
        assert_eq!(Precision::FP16.ulp(1.0).unwrap(), p2(-10));
        assert_eq!(Precision::FP16.ulp(2.0).unwrap(), p2(-9));
        assert_eq!(Precision::FP32.ulp(1.5).unwrap(), p2(-23));
        assert_eq!(Precision::FP16.ulp(-0.75).unwrap(), p2(-11));
        assert!(Precision::FP16.ulp(0.0).is_err());
    }

    #[test]
    fn unit_roundoff_is_half_spacing_at_one() {
        for m in [7, 10, 16, 23] {
            let p = Precision::new(m).unwrap();
            assert_eq!(2.0 * p.unit_roundoff(), p.ulp(1.0).unwrap());
        }
        assert_eq!(Precision::FP16.unit_roundoff(), p2(-11));
    }

    #[test]
    fn error_paths() {
        let h = Precision::FP16;
        assert!(matches!(h.try_round(f64::NAN), Err(Error::NonFinite(_))));
        assert!(matches!(
            h.try_round(f64::INFINITY),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(h.try_div(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(h.try_sqrt(-1.0), Err(Error::Domain(_))));
        assert!(matches!(
            h.try_add(0.1, 1.0),
            Err(Error::NotRepresentable {
                mantissa_bits: 10,
                ..
            })
        ));
        assert!(Precision::new(0).is_err());
        assert!(Precision::new(27).is_err());
        assert!(Precision::new(26).is_ok());
        // Rounding up past the largest f64 leaves the carrier's range.
        assert!(h.try_round(f64::MAX).is_err());
    }

    #[test]
    fn names_round_trip() {
        for name in ["bf16", "fp16", "fp22", "fp32", "fp64", "custom:5"] {
            let p: Precision = name.parse().unwrap();
            assert_eq!(p.to_string(), name);
        }
        assert_eq!("custom:10".parse::<Precision>().unwrap(), Precision::FP16);
        assert!("custom:40".parse::<Precision>().is_err());
        assert!("fp8".parse::<Precision>().is_err());
    }

    #[test]
    fn carrier_is_identity() {
        let c = Precision::CARRIER;
        assert_eq!(c.round(0.1), 0.1);
        assert_eq!(c.add(0.1, 0.2), 0.1 + 0.2);
        assert_eq!(c.unit_roundoff(), f64::EPSILON / 2.0);
    }

    #[test]
    fn subnormal_inputs_round_by_relative_spacing() {
        let h = Precision::FP16;
        let x = f64::from_bits(0x0000_0000_0000_0003);
        assert_eq!(h.round(x), x);
        let y = 5e-320;
        assert!((h.round(y) - y).abs() <= h.unit_roundoff() * y);
    }

    #[test]
    fn wide_formats_break_ties_with_the_residual() {
        let p = Precision::new(26).unwrap();
        // 1 + 2^-27 + 2^-53 lies just above the 26-bit tie at 1 + 2^-27, but
        // its f64 sum is itself a tie that lands exactly on that point.
        let y = p2(-27) + p2(-53);
        assert!(p.is_representable(y));
        assert_eq!(1.0 + y, 1.0 + p2(-27));
        assert_eq!(p.add(1.0, y), 1.0 + p2(-26));
        assert_eq!(p.add(1.0 + p2(-26), p2(-27)), 1.0 + p2(-25));
        assert_eq!(p.add(1.0, p2(-27)), 1.0);
    }

    proptest! {
        #[test]
        fn rounding_invariants(x in -1e6f64..1e6, m in 1u32..=26) {
            let p = Precision::new(m).unwrap();
            let r = p.round(x);
            prop_assert!((r - x).abs() <= p.unit_roundoff() * x.abs());
            prop_assert_eq!(p.round(r), r);
            prop_assert_eq!(p.round(-x), -r);
        }

        #[test]
        fn rounding_is_monotone(a in -1e3f64..1e3, b in -1e3f64..1e3, m in 1u32..=26) {
            let p = Precision::new(m).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.round(lo) <= p.round(hi));
        }

        #[test]
        fn operations_carry_at_most_one_rounding(a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let p = Precision::FP16;
            let (x, y) = (p.round(a), p.round(b));
            let u = p.unit_roundoff();
            for (got, exact) in [(p.add(x, y), x + y), (p.mul(x, y), x * y), (p.div(x, y), x / y)] {
                prop_assert!((got - exact).abs() <= u * exact.abs() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn ties_to_even_leave_no_first_order_bias() {
        use rand_chacha::ChaCha8Rng;
        use rand_core::{RngCore, SeedableRng};
        let p = Precision::FP16;
        let u = p.unit_roundoff();
        let alpha = 1.318_359_375; // representable at 10 bits
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut sum, mut sum_abs) = (0.0f64, 0.0f64);
        for _ in 0..n {
            // Smooth, zero-mean perturbation of width ~0.05.
            let v =
                (rng.next_u64() >> 11) as f64 * p2(-53) + (rng.next_u64() >> 11) as f64 * p2(-53);
            let z = alpha + 0.05 * (v - 1.0);
            let e = p.round(z) - z;
            sum += e;
            sum_abs += e.abs();
        }
        let mean = sum / n as f64;
        let mean_abs = sum_abs / n as f64;
        assert!(
            mean_abs > 0.1 * u && mean_abs < u,
            "mean |err| = {mean_abs}"
        );
        assert!(
            mean.abs() < 10.0 * u * u,
            "mean err = {mean}, u^2 = {}",
            u * u
        );
    }
}
