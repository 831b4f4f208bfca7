use lpsde::randvar::quadrature::GaussLegendre;
use lpsde::randvar::{exact_inv_cdf, ApproxKind, DensityHistogram, InvCdfApprox, UniformStream};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Quantile by bisection on an independent CDF.
fn bisect_quantile(u: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn exact_quantile_matches_bisection() {
    let z = exact_inv_cdf(0.975).unwrap();
    assert!((z - 1.959964).abs() < 1e-6, "{z}");
    for &u in &[1e-12, 1e-6, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0 - 1e-6] {
        let z = exact_inv_cdf(u).unwrap();
        assert!(
            (z - bisect_quantile(u)).abs() < 1e-9 * (1.0 + z.abs()),
            "u = {u}"
        );
    }
}

#[test]
fn exact_round_trips_through_cdf() {
    let mut s = UniformStream::new(11, 0);
    for _ in 0..10_000 {
        let u = s.next_uniform();
        let back = phi(exact_inv_cdf(u).unwrap());
        assert!((back - u).abs() < 1e-9, "u = {u}, back = {back}");
    }
}

#[test]
fn exact_is_strictly_increasing() {
    let mut prev = f64::NEG_INFINITY;
    for i in 1..10_000 {
        let z = exact_inv_cdf(i as f64 / 10_000.0).unwrap();
        assert!(z > prev);
        prev = z;
    }
}

#[test]
fn exact_rejects_outside_open_interval() {
    for u in [0.0, 1.0, -0.5, 2.0, f64::NAN] {
        assert!(exact_inv_cdf(u).is_err());
    }
}

fn approximations() -> Vec<InvCdfApprox> {
    let mut v = Vec::new();
    for kind in [ApproxKind::Linear, ApproxKind::Cubic] {
        for k in [2, 8, 64, 1024] {
            v.push(InvCdfApprox::new(kind, k).unwrap());
        }
    }
    v
}

#[test]
fn approximation_is_non_decreasing() {
    for a in approximations() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..200_000 {
            let z = a.eval(i as f64 / 200_000.0).unwrap();
            assert!(z >= prev - 1e-12, "{:?} {} at {i}", a.kind(), a.intervals());
            prev = z;
        }
    }
}

#[test]
fn approximation_mean_is_zero() {
    let gl = GaussLegendre::new(32);
    for a in approximations() {
        let upper = a.breakpoints();
        let mut pts: Vec<f64> = upper.iter().map(|&b| 1.0 - b).collect();
        pts.extend(&upper);
        pts.extend([0.0, 1.0]);
        pts.sort_by(f64::total_cmp);
        let mean: f64 = pts
            .windows(2)
            .map(|w| gl.integrate(w[0], w[1], |u| a.eval_unchecked(u)))
            .sum();
        assert!(mean.abs() < 1e-12, "{mean}");
    }
}

#[test]
fn l2_error_decreases_with_intervals() {
    for kind in [ApproxKind::Linear, ApproxKind::Cubic] {
        let errs: Vec<f64> = [2, 4, 8, 16, 32, 64, 256, 1024]
            .iter()
            .map(|&k| InvCdfApprox::new(kind, k).unwrap().l2_error())
            .collect();
        assert!(
            errs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)),
            "{errs:?}"
        );
        assert!(errs[7] < errs[3]);
    }
}

#[test]
fn second_moment_is_at_most_one() {
    for a in approximations() {
        let m = a.moments(4).unwrap();
        assert!(
            m[1] <= 1.0 + 1e-12,
            "{:?}:{} m2 = {}",
            a.kind(),
            a.intervals(),
            m[1]
        );
    }
    let m2 = InvCdfApprox::new(ApproxKind::Linear, 1024)
        .unwrap()
        .moments(2)
        .unwrap()[1];
    assert!(m2 > 0.99 && m2 <= 1.0, "{m2}");
}

#[test]
fn samples_are_bounded() {
    for a in approximations() {
        let bound = a.sup_abs();
        assert!(bound.is_finite());
        let mut s = UniformStream::new(3, 0);
        for _ in 0..10_000 {
            assert!(a.eval(s.next_uniform()).unwrap().abs() <= bound);
        }
    }
}

#[test]
fn histogram_density_stays_bounded() {
    let a = InvCdfApprox::new(ApproxKind::Linear, 8).unwrap();
    let h = DensityHistogram::sample(&a, 200_000, 0.05, 8.0, 5).unwrap();
    assert!(h.max_density() < 1.0, "{}", h.max_density());
    assert!(h.min_sample >= -a.sup_abs() && h.max_sample <= a.sup_abs());
}

#[test]
fn coupling_error_shrinks_with_intervals() {
    let mut s = UniformStream::new(17, 0);
    let us: Vec<f64> = (0..20_000).map(|_| s.next_uniform()).collect();
    let mse = |k: usize| {
        let a = InvCdfApprox::new(ApproxKind::Linear, k).unwrap();
        us.iter()
            .map(|&u| (exact_inv_cdf(u).unwrap() - a.eval(u).unwrap()).powi(2))
            .sum::<f64>()
            / us.len() as f64
    };
    let (e2, e8, e64) = (mse(2), mse(8), mse(64));
    assert!(e8 < e2 && e64 < e8, "{e2} {e8} {e64}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn approximation_is_antisymmetric(u in 1e-9f64..0.5, log_k in 1u32..=10, cubic in any::<bool>()) {
        let kind = if cubic { ApproxKind::Cubic } else { ApproxKind::Linear };
        let a = InvCdfApprox::new(kind, 1 << log_k).unwrap();
        let lo = a.eval(u).unwrap();
        let hi = a.eval(1.0 - u).unwrap();
        prop_assert!((lo + hi).abs() <= 1e-12 * (1.0 + lo.abs()));
    }

    #[test]
    fn approximation_shares_the_sign_of_exact(u in 1e-9f64..(1.0 - 1e-9)) {
        let a = InvCdfApprox::new(ApproxKind::Linear, 8).unwrap();
        let z = exact_inv_cdf(u).unwrap();
        let zt = a.eval(u).unwrap();
        prop_assert!(z * zt >= 0.0);
    }
}
