//! Euler–Maruyama paths in emulated precision.
//!
//! A low-precision step computes
//! `x (+) ((a (*) delta) (+) ((b (*) sqrt_delta) (*) z))`, every operation
//! rounded, with `delta`, `sqrt_delta` and `z` already rounded into the
//! precision. Time `t_n = n * delta` stays in the carrier.

use crate::error::{Error, Result};
use crate::randvar::{UniformStream, Variables};
use crate::softfloat::Precision;

/// A scalar SDE `dX = a(t, X) dt + b(t, X) dW` on `[0, horizon]`.
///
/// `drift` and `diffusion` evaluate in the given precision, operation by
/// operation, and must return values representable in it.
pub trait SdeModel: Sync {
    fn drift(&self, t: f64, x: f64, p: Precision) -> f64;
    fn diffusion(&self, t: f64, x: f64, p: Precision) -> f64;
    fn x0(&self) -> f64;
    fn horizon(&self) -> f64;
}

/// Geometric Brownian motion `dX = mu X dt + sigma X dW`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gbm {
    pub mu: f64,
    pub sigma: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl Default for Gbm {
    fn default() -> Self {
        Gbm {
            mu: 0.05,
            sigma: 0.2,
            x0: 1.0,
            horizon: 1.0,
        }
    }
}

impl Gbm {
    pub fn new(mu: f64, sigma: f64, x0: f64, horizon: f64) -> Result<Self> {
        for v in [mu, sigma, x0, horizon] {
            if !v.is_finite() {
                return Err(Error::NonFinite(v));
            }
        }
        if horizon <= 0.0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        Ok(Gbm {
            mu,
            sigma,
            x0,
            horizon,
        })
    }

    /// `E[X_T] = x0 exp(mu T)`.
    pub fn exact_mean(&self) -> f64 {
        self.x0 * (self.mu * self.horizon).exp()
    }
}

impl SdeModel for Gbm {
    #[inline]
    fn drift(&self, _t: f64, x: f64, p: Precision) -> f64 {
        p.mul(p.round(self.mu), x)
    }

    #[inline]
    fn diffusion(&self, _t: f64, x: f64, p: Precision) -> f64 {
        p.mul(p.round(self.sigma), x)
    }

    fn x0(&self) -> f64 {
        self.x0
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// A model built from closures.
pub struct FnModel<A, B> {
    pub drift: A,
    pub diffusion: B,
    pub x0: f64,
    pub horizon: f64,
}

impl<A, B> SdeModel for FnModel<A, B>
where
    A: Fn(f64, f64, Precision) -> f64 + Sync,
    B: Fn(f64, f64, Precision) -> f64 + Sync,
{
    #[inline]
    fn drift(&self, t: f64, x: f64, p: Precision) -> f64 {
        (self.drift)(t, x, p)
    }

    #[inline]
    fn diffusion(&self, t: f64, x: f64, p: Precision) -> f64 {
        (self.diffusion)(t, x, p)
    }

    fn x0(&self) -> f64 {
        self.x0
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Dyadic discretisation level: `N = 2^l` steps of `delta = T 2^-l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelSpec {
    pub level: u32,
}

impl LevelSpec {
    pub const MAX_LEVEL: u32 = 40;

    pub fn new(level: u32) -> Result<Self> {
        if level > Self::MAX_LEVEL {
            return Err(Error::InvalidArgument(format!(
                "level {level} exceeds {}",
                Self::MAX_LEVEL
            )));
        }
        Ok(LevelSpec { level })
    }

    pub fn steps(self) -> u64 {
        1 << self.level
    }

    /// Exact in the carrier, as `T` is scaled by a power of two.
    pub fn delta(self, horizon: f64) -> f64 {
        horizon * (-(self.level as f64)).exp2()
    }
}

/// Step size rounded once into a precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSize {
    /// Carrier step, used for time.
    pub delta: f64,
    pub delta_p: f64,
    pub sqrt_delta_p: f64,
}

impl StepSize {
    pub fn new(delta: f64, p: Precision) -> Self {
        let delta_p = p.round(delta);
        StepSize {
            delta,
            delta_p,
            sqrt_delta_p: p.sqrt(delta_p),
        }
    }
}

/// Running sum with Kahan compensation, all operations in one precision.
///
/// `sum - comp` tracks the exact sum of the increments fed in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KahanAccumulator {
    pub sum: f64,
    pub comp: f64,
}

impl KahanAccumulator {
    pub fn new(start: f64) -> Self {
        KahanAccumulator {
            sum: start,
            comp: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, p: Precision, dx: f64) {
        let y = p.sub(dx, self.comp);
        let sum = p.add(self.sum, y);
        self.comp = p.sub(p.sub(sum, self.sum), y);
        self.sum = sum;
    }
}

/// `(a (*) delta) (+) ((b (*) sqrt_delta) (*) z)`.
#[inline]
pub fn em_increment<M: SdeModel + ?Sized>(
    model: &M,
    p: Precision,
    t: f64,
    x: f64,
    step: &StepSize,
    z: f64,
) -> f64 {
    let a = model.drift(t, x, p);
    let b = model.diffusion(t, x, p);
    p.add(
        p.mul(a, step.delta_p),
        p.mul(p.mul(b, step.sqrt_delta_p), z),
    )
}

/// `(a (*) delta) (+) (b (*) dw)` for a precomputed Brownian increment.
#[inline]
fn em_increment_dw<M: SdeModel + ?Sized>(
    model: &M,
    p: Precision,
    t: f64,
    x: f64,
    delta_p: f64,
    dw: f64,
) -> f64 {
    let a = model.drift(t, x, p);
    let b = model.diffusion(t, x, p);
    p.add(p.mul(a, delta_p), p.mul(b, dw))
}

/// One Euler–Maruyama step from `t_n = n delta`.
pub fn em_step<M: SdeModel + ?Sized>(
    model: &M,
    p: Precision,
    n: u64,
    x: f64,
    step: &StepSize,
    z: f64,
) -> Result<f64> {
    let t = n as f64 * step.delta;
    let x_new = p.add(x, em_increment(model, p, t, x, step, z));
    if x_new.is_finite() {
        Ok(x_new)
    } else {
        Err(Error::NonFiniteStep { step: n })
    }
}

/// One compensated step; the state is `kahan.sum`.
pub fn em_step_kahan<M: SdeModel + ?Sized>(
    model: &M,
    p: Precision,
    n: u64,
    kahan: &mut KahanAccumulator,
    step: &StepSize,
    z: f64,
) -> Result<f64> {
    let t = n as f64 * step.delta;
    let dx = em_increment(model, p, t, kahan.sum, step, z);
    kahan.add(p, dx);
    if kahan.sum.is_finite() && kahan.comp.is_finite() {
        Ok(kahan.sum)
    } else {
        Err(Error::NonFiniteStep { step: n })
    }
}

/// Path state, optionally compensated.
#[derive(Clone, Copy, Debug)]
struct Accum {
    acc: KahanAccumulator,
    kahan: bool,
}

impl Accum {
    fn new(x0: f64, kahan: bool) -> Self {
        Accum {
            acc: KahanAccumulator::new(x0),
            kahan,
        }
    }

    #[inline]
    fn x(&self) -> f64 {
        self.acc.sum
    }

    #[inline]
    fn add(&mut self, p: Precision, dx: f64) {
        if self.kahan {
            self.acc.add(p, dx);
        } else {
            self.acc.sum = p.add(self.acc.sum, dx);
        }
    }
}

/// A fine path and its coarse partner in one precision.
struct Family {
    p: Precision,
    fine: Accum,
    coarse: Accum,
    step: StepSize,
    delta_c_p: f64,
}

impl Family {
    fn new<M: SdeModel + ?Sized>(model: &M, p: Precision, level: LevelSpec, kahan: bool) -> Self {
        let delta = level.delta(model.horizon());
        let x0 = p.round(model.x0());
        Family {
            p,
            fine: Accum::new(x0, kahan),
            coarse: Accum::new(x0, kahan),
            step: StepSize::new(delta, p),
            delta_c_p: p.round(2.0 * delta),
        }
    }

    #[inline]
    fn fine_step<M: SdeModel + ?Sized>(&mut self, model: &M, n: u64, z: f64) {
        let t = n as f64 * self.step.delta;
        let dx = em_increment(model, self.p, t, self.fine.x(), &self.step, z);
        self.fine.add(self.p, dx);
    }

    /// Coarse step `k` driven by the pairwise sum of fine increments.
    #[inline]
    fn coarse_step<M: SdeModel + ?Sized>(&mut self, model: &M, k: u64, z0: f64, z1: f64) {
        let p = self.p;
        let t = (2 * k) as f64 * self.step.delta;
        let dw = p.add(
            p.mul(self.step.sqrt_delta_p, z0),
            p.mul(self.step.sqrt_delta_p, z1),
        );
        let dx = em_increment_dw(model, p, t, self.coarse.x(), self.delta_c_p, dw);
        self.coarse.add(p, dx);
    }
}

/// Terminal value of a single path and its work counters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathResult {
    pub value: f64,
    pub draws: u64,
    pub steps: u64,
}

/// Simulates one path of `2^l` steps from consecutive stream draws.
pub fn simulate_path<M: SdeModel + ?Sized>(
    model: &M,
    level: LevelSpec,
    p: Precision,
    variables: &Variables,
    kahan: bool,
    stream: &mut UniformStream,
) -> Result<PathResult> {
    let step = StepSize::new(level.delta(model.horizon()), p);
    let mut acc = KahanAccumulator::new(p.round(model.x0()));
    let mut x = acc.sum;
    for n in 0..level.steps() {
        let z = p.round(variables.sample(stream.next_uniform()));
        x = if kahan {
            em_step_kahan(model, p, n, &mut acc, &step, z)?
        } else {
            em_step(model, p, n, x, &step, z)?
        };
    }
    Ok(PathResult {
        value: x,
        draws: level.steps(),
        steps: level.steps(),
    })
}

/// Terminal values of the four coupled paths of one sample.
///
/// `hat` paths run in the carrier with exact Gaussians; `bar` paths run in
/// the low precision with the configured variables. All four consume the
/// same uniforms. Coarse values are zero at level 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CoupledResult {
    pub x_hat_fine: f64,
    pub x_hat_coarse: f64,
    pub x_bar_fine: f64,
    pub x_bar_coarse: f64,
    pub draws: u64,
    pub steps: u64,
}

impl CoupledResult {
    /// `X^_l - X^_{l-1}`.
    pub fn hat_diff(&self) -> f64 {
        self.x_hat_fine - self.x_hat_coarse
    }

    /// `X-_l - X-_{l-1}`.
    pub fn bar_diff(&self) -> f64 {
        self.x_bar_fine - self.x_bar_coarse
    }

    /// `X^_l - X^_{l-1} - X-_l + X-_{l-1}`.
    pub fn four_way(&self) -> f64 {
        (self.x_hat_fine - self.x_hat_coarse) - (self.x_bar_fine - self.x_bar_coarse)
    }
}

#[derive(Clone, Copy)]
struct Want {
    hat: bool,
    bar: bool,
    coarse: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_coupled<M: SdeModel + ?Sized>(
    model: &M,
    level: LevelSpec,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    stream: &mut UniformStream,
    want: Want,
) -> Result<CoupledResult> {
    let mut hat = Family::new(model, Precision::CARRIER, level, false);
    let mut bar = Family::new(model, p_low, level, kahan);
    let coarse = want.coarse && level.level > 0;
    let n_steps = level.steps();
    let mut steps = 0;

    if level.level == 0 {
        let u = stream.next_uniform();
        if want.hat {
            hat.fine_step(model, 0, Variables::Exact.sample(u));
        }
        if want.bar {
            bar.fine_step(model, 0, p_low.round(variables.sample(u)));
        }
        steps += (want.hat as u64) + (want.bar as u64);
    } else {
        for k in 0..n_steps / 2 {
            let u0 = stream.next_uniform();
            let u1 = stream.next_uniform();
            if want.hat {
                let z0 = Variables::Exact.sample(u0);
                let z1 = Variables::Exact.sample(u1);
                hat.fine_step(model, 2 * k, z0);
                hat.fine_step(model, 2 * k + 1, z1);
                if coarse {
                    hat.coarse_step(model, k, z0, z1);
                }
            }
            if want.bar {
                let z0 = p_low.round(variables.sample(u0));
                let z1 = p_low.round(variables.sample(u1));
                bar.fine_step(model, 2 * k, z0);
                bar.fine_step(model, 2 * k + 1, z1);
                if coarse {
                    bar.coarse_step(model, k, z0, z1);
                }
            }
            let check = hat.fine.x()
                + hat.coarse.x()
                + bar.fine.x()
                + bar.coarse.x()
                + bar.fine.acc.comp
                + bar.coarse.acc.comp;
            if !check.is_finite() {
                return Err(Error::NonFiniteStep { step: 2 * k + 1 });
            }
        }
        let per_family = n_steps + if coarse { n_steps / 2 } else { 0 };
        steps += per_family * (want.hat as u64 + want.bar as u64);
    }
    let fine_only = |fam: &Family, on: bool| {
        if on {
            (fam.fine.x(), if coarse { fam.coarse.x() } else { 0.0 })
        } else {
            (0.0, 0.0)
        }
    };
    let (x_hat_fine, x_hat_coarse) = fine_only(&hat, want.hat);
    let (x_bar_fine, x_bar_coarse) = fine_only(&bar, want.bar);
    if !(x_hat_fine.is_finite() && x_bar_fine.is_finite()) {
        return Err(Error::NonFiniteStep { step: n_steps - 1 });
    }
    Ok(CoupledResult {
        x_hat_fine,
        x_hat_coarse,
        x_bar_fine,
        x_bar_coarse,
        draws: n_steps,
        steps,
    })
}

/// Four coupled paths at `level` from one set of uniforms.
pub fn simulate_coupled<M: SdeModel + ?Sized>(
    model: &M,
    level: LevelSpec,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    stream: &mut UniformStream,
) -> Result<CoupledResult> {
    let want = Want {
        hat: true,
        bar: true,
        coarse: true,
    };
    run_coupled(model, level, p_low, variables, kahan, stream, want)
}

/// Only the low-precision fine/coarse pair; `hat` fields are zero.
pub fn simulate_low_pair<M: SdeModel + ?Sized>(
    model: &M,
    level: LevelSpec,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    stream: &mut UniformStream,
) -> Result<CoupledResult> {
    let want = Want {
        hat: false,
        bar: true,
        coarse: true,
    };
    run_coupled(model, level, p_low, variables, kahan, stream, want)
}

/// Only the carrier fine/coarse pair with exact variables; `bar` fields are zero.
pub fn simulate_exact_pair<M: SdeModel + ?Sized>(
    model: &M,
    level: LevelSpec,
    stream: &mut UniformStream,
) -> Result<CoupledResult> {
    let want = Want {
        hat: true,
        bar: false,
        coarse: true,
    };
    run_coupled(
        model,
        level,
        Precision::CARRIER,
        &Variables::Exact,
        false,
        stream,
        want,
    )
}

/// Fine paths only: the exact carrier path and the low-precision path.
pub fn simulate_two_way<M: SdeModel + ?Sized>(
    model: &M,
    level: LevelSpec,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    stream: &mut UniformStream,
) -> Result<CoupledResult> {
    let want = Want {
        hat: true,
        bar: true,
        coarse: false,
    };
    run_coupled(model, level, p_low, variables, kahan, stream, want)
}

/// Means of the per-step rounding residuals of uncompensated paths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepErrorStats {
    /// `x_new - (x + s)` where `s` is the rounded increment and the
    /// reference sum is taken in the carrier.
    pub mean_eta: f64,
    pub mean_abs_eta: f64,
    /// `s - (A + B)`, the rounding of the inner sum.
    pub mean_eta_prime: f64,
    pub mean_abs_eta_prime: f64,
    pub samples: u64,
}

/// Collects one residual pair per step over `ceil(n_samples / 2^l)` paths.
pub fn step_error_probe<M: SdeModel + ?Sized>(
    model: &M,
    level: LevelSpec,
    p: Precision,
    variables: &Variables,
    n_samples: u64,
    seed: u64,
) -> Result<StepErrorStats> {
    if n_samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "step error probe needs at least 10000 samples, got {n_samples}"
        )));
    }
    let n_steps = level.steps();
    let paths = n_samples.div_ceil(n_steps);
    let step = StepSize::new(level.delta(model.horizon()), p);
    let ranges = crate::par::batches(0, paths, crate::par::DEFAULT_BATCH.div_ceil(n_steps).max(1));
    let parts = crate::par::map_batches(ranges, |r| -> Result<[f64; 5]> {
        let mut s = [0.0; 5];
        for path in r {
            let mut stream = UniformStream::new(seed, path);
            let mut x = p.round(model.x0());
            for n in 0..n_steps {
                let z = p.round(variables.sample(stream.next_uniform()));
                let t = n as f64 * step.delta;
                let a = p.mul(model.drift(t, x, p), step.delta_p);
                let b = p.mul(p.mul(model.diffusion(t, x, p), step.sqrt_delta_p), z);
                let inc = p.add(a, b);
                let x_new = p.add(x, inc);
                if !x_new.is_finite() {
                    return Err(Error::NonFiniteStep { step: n });
                }
                let eta = x_new - (x + inc);
                let eta_prime = inc - (a + b);
                s[0] += eta;
                s[1] += eta.abs();
                s[2] += eta_prime;
                s[3] += eta_prime.abs();
                s[4] += 1.0;
                x = x_new;
            }
        }
        Ok(s)
    });
    let mut total = [0.0; 5];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part?) {
            *t += v;
        }
    }
    let count = total[4];
    Ok(StepErrorStats {
        mean_eta: total[0] / count,
        mean_abs_eta: total[1] / count,
        mean_eta_prime: total[2] / count,
        mean_abs_eta_prime: total[3] / count,
        samples: count as u64,
    })
}
