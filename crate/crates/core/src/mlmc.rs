//! Level statistics, sample allocation and nested multilevel estimation.
//!
//! The nested estimator splits each level correction into a cheap
//! low-precision two-way difference and a four-way correction:
//!
//! ```text
//! E[X^_L] = sum_l E[X-_l - X-_{l-1}] + E[X^_l - X^_{l-1} - X-_l + X-_{l-1}]
//! ```
//!
//! where `X^` runs in the carrier with exact Gaussians and `X-` in the low
//! precision with approximate ones. Costs are abstract cycles per sample.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::par::{batches, map_batches, DEFAULT_BATCH};
use crate::randvar::{derive_seed, UniformStream, Variables};
use crate::sde::{
    simulate_coupled, simulate_exact_pair, simulate_low_pair, simulate_two_way, CoupledResult,
    LevelSpec, SdeModel,
};
use crate::softfloat::Precision;
use crate::stats::Moments;

/// Paths per level in the pilot pass.
pub const PILOT_PATHS: u64 = 1000;

/// Seed purposes; distinct purposes give independent uniforms.
const PURPOSE_STATS: u64 = 1;
const PURPOSE_PILOT: u64 = 2;
const PURPOSE_FOUR: u64 = 3;
const PURPOSE_LOW: u64 = 4;

/// Seed of the streams used at `level` for `purpose`.
pub fn level_seed(seed: u64, level: u32, purpose: u64) -> u64 {
    derive_seed(seed, ((level as u64) << 8) | purpose)
}

/// Cycles per random variable and per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    pub cycles_exact_rng: f64,
    pub cycles_approx_rng_single: f64,
    /// Applies to formats with at most 10 fraction bits.
    pub cycles_approx_rng_half: f64,
    /// Multiplies the low-precision path cost when compensation is on.
    pub kahan_overhead_factor: f64,
    /// Cycles per Euler–Maruyama step, fine and coarse alike.
    pub per_step_arithmetic: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            cycles_exact_rng: 3.5,
            cycles_approx_rng_single: 0.5,
            cycles_approx_rng_half: 0.25,
            kahan_overhead_factor: 1.4,
            per_step_arithmetic: 0.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.cycles_exact_rng,
            self.cycles_approx_rng_single,
            self.cycles_approx_rng_half,
            self.kahan_overhead_factor,
        ];
        if positive.iter().any(|c| !(c.is_finite() && *c > 0.0))
            || !(self.per_step_arithmetic.is_finite() && self.per_step_arithmetic >= 0.0)
        {
            return Err(Error::InvalidArgument(
                "cost model entries must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    /// Cycles per variable on the low-precision side.
    pub fn rng_cycles(&self, p: Precision, variables: &Variables) -> f64 {
        match variables {
            Variables::Exact => self.cycles_exact_rng,
            Variables::Approx(_) if p.mantissa_bits() <= 10 => self.cycles_approx_rng_half,
            Variables::Approx(_) => self.cycles_approx_rng_single,
        }
    }

    /// `(c^, c-, C-)` for one sample of each term at `level`.
    pub fn level_costs(
        &self,
        level: u32,
        p: Precision,
        variables: &Variables,
        kahan: bool,
    ) -> (f64, f64, f64) {
        let n = (1u64 << level) as f64;
        let steps = if level == 0 { 1.0 } else { 1.5 * n };
        let c_hat = n * self.cycles_exact_rng + steps * self.per_step_arithmetic;
        let mut c_bar = n * self.rng_cycles(p, variables) + steps * self.per_step_arithmetic;
        if kahan {
            c_bar *= self.kahan_overhead_factor;
        }
        (c_hat, c_bar, c_hat + c_bar)
    }
}

/// Per-level variances, means, costs and sample counts.
///
/// `hat` is `X^_l - X^_{l-1}`, `bar` is `X-_l - X-_{l-1}` and `four` is the
/// four-way difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelStats {
    pub level: u32,
    pub v_hat: f64,
    pub v_bar: f64,
    pub v_four: f64,
    pub mean_hat: f64,
    pub mean_bar: f64,
    pub mean_four: f64,
    pub se_v_hat: f64,
    pub se_v_bar: f64,
    pub se_v_four: f64,
    pub c_hat: f64,
    pub c_bar: f64,
    pub c_four: f64,
    pub m_hat: u64,
    pub m_bar: u64,
    pub m_four: u64,
}

impl LevelStats {
    pub fn from_moments(
        level: u32,
        hat: &Moments,
        bar: &Moments,
        four: &Moments,
        costs: (f64, f64, f64),
    ) -> Self {
        LevelStats {
            level,
            v_hat: hat.variance(),
            v_bar: bar.variance(),
            v_four: four.variance(),
            mean_hat: hat.mean(),
            mean_bar: bar.mean(),
            mean_four: four.mean(),
            se_v_hat: hat.variance_stderr(),
            se_v_bar: bar.variance_stderr(),
            se_v_four: four.variance_stderr(),
            c_hat: costs.0,
            c_bar: costs.1,
            c_four: costs.2,
            m_hat: hat.count(),
            m_bar: bar.count(),
            m_four: four.count(),
        }
    }

    /// Stats from given variances and costs, with no sample information.
    pub fn from_parts(level: u32, v: (f64, f64, f64), c: (f64, f64, f64)) -> Self {
        LevelStats {
            level,
            v_hat: v.0,
            v_bar: v.1,
            v_four: v.2,
            mean_hat: 0.0,
            mean_bar: 0.0,
            mean_four: 0.0,
            se_v_hat: 0.0,
            se_v_bar: 0.0,
            se_v_four: 0.0,
            c_hat: c.0,
            c_bar: c.1,
            c_four: c.2,
            m_hat: 0,
            m_bar: 0,
            m_four: 0,
        }
    }
}

/// The three difference accumulators of a batch of coupled samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CoupledMoments {
    pub hat: Moments,
    pub bar: Moments,
    pub four: Moments,
}

impl CoupledMoments {
    fn push(&mut self, r: &CoupledResult) {
        self.hat.push(r.hat_diff());
        self.bar.push(r.bar_diff());
        self.four.push(r.four_way());
    }

    fn merge(&mut self, other: &CoupledMoments) {
        self.hat.merge(&other.hat);
        self.bar.merge(&other.bar);
        self.four.merge(&other.four);
    }
}

/// Runs `sim` for every path index in `paths`, in fixed batches, and merges
/// the batch moments in order.
fn run_paths<F>(paths: Range<u64>, seed: u64, sim: F) -> Result<CoupledMoments>
where
    F: Fn(&mut UniformStream) -> Result<CoupledResult> + Sync + Send,
{
    let ranges = batches(paths.start, paths.end - paths.start, DEFAULT_BATCH);
    let parts = map_batches(ranges, |r| -> Result<CoupledMoments> {
        let mut acc = CoupledMoments::default();
        for path in r {
            let mut stream = UniformStream::new(seed, path);
            acc.push(&sim(&mut stream)?);
        }
        Ok(acc)
    });
    let mut total = CoupledMoments::default();
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

/// Coupled four-path moments over path indices `paths`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_moments<M: SdeModel + ?Sized>(
    model: &M,
    level: u32,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    paths: Range<u64>,
    stream_seed: u64,
) -> Result<CoupledMoments> {
    let spec = LevelSpec::new(level)?;
    run_paths(paths, stream_seed, |s| {
        simulate_coupled(model, spec, p_low, variables, kahan, s)
    })
}

/// Moments of `X-_l - X-_{l-1}` alone over path indices `paths`.
pub fn low_pair_moments<M: SdeModel + ?Sized>(
    model: &M,
    level: u32,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    paths: Range<u64>,
    stream_seed: u64,
) -> Result<Moments> {
    let spec = LevelSpec::new(level)?;
    Ok(run_paths(paths, stream_seed, |s| {
        simulate_low_pair(model, spec, p_low, variables, kahan, s)
    })?
    .bar)
}

/// Moments of `X^_l - X^_{l-1}` alone over path indices `paths`.
pub fn exact_pair_moments<M: SdeModel + ?Sized>(
    model: &M,
    level: u32,
    paths: Range<u64>,
    stream_seed: u64,
) -> Result<Moments> {
    let spec = LevelSpec::new(level)?;
    Ok(run_paths(paths, stream_seed, |s| simulate_exact_pair(model, spec, s))?.hat)
}

/// Moments of the fine-level difference `X^_l - X-_l` over path indices `paths`.
pub fn two_way_moments<M: SdeModel + ?Sized>(
    model: &M,
    level: u32,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    paths: Range<u64>,
    stream_seed: u64,
) -> Result<Moments> {
    let spec = LevelSpec::new(level)?;
    let ranges = batches(paths.start, paths.end - paths.start, DEFAULT_BATCH);
    let parts = map_batches(ranges, |r| -> Result<Moments> {
        let mut acc = Moments::new();
        for path in r {
            let mut stream = UniformStream::new(stream_seed, path);
            let c = simulate_two_way(model, spec, p_low, variables, kahan, &mut stream)?;
            acc.push(c.x_hat_fine - c.x_bar_fine);
        }
        Ok(acc)
    });
    let mut total = Moments::new();
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

/// Variances and costs at `level` from `n_paths` coupled samples.
#[allow(clippy::too_many_arguments)]
pub fn estimate_level_stats<M: SdeModel + ?Sized>(
    model: &M,
    level: u32,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    n_paths: u64,
    seed: u64,
    cost: &CostModel,
) -> Result<LevelStats> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!(
            "level statistics need at least 2 paths, got {n_paths}"
        )));
    }
    let m = coupled_moments(
        model,
        level,
        p_low,
        variables,
        kahan,
        0..n_paths,
        level_seed(seed, level, PURPOSE_STATS),
    )?;
    Ok(LevelStats::from_moments(
        level,
        &m.hat,
        &m.bar,
        &m.four,
        cost.level_costs(level, p_low, variables, kahan),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// `X^_l - X^_{l-1}` samples only.
    Standard,
    /// Low-precision two-way samples plus four-way corrections.
    Nested,
}

/// Samples per level. For the standard scheme `four` is zero throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub primary: Vec<u64>,
    pub four: Vec<u64>,
    /// Every variance was zero; one sample per term suffices.
    pub degenerate: bool,
}

fn check_inputs(stats: &[LevelStats], eps: f64) -> Result<()> {
    if stats.is_empty() {
        return Err(Error::InvalidArgument("no level statistics given".into()));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target accuracy {eps} must be positive"
        )));
    }
    Ok(())
}

fn count(v: f64, c: f64, scale: f64) -> u64 {
    if v <= 0.0 || c <= 0.0 {
        return 1;
    }
    ((v / c).sqrt() * scale).ceil().max(1.0) as u64
}

/// Counts that minimise cost subject to a sampling variance of `eps^2 / 2`.
pub fn allocate_samples(stats: &[LevelStats], eps: f64, scheme: Scheme) -> Result<Allocation> {
    check_inputs(stats, eps)?;
    let k = 2.0 / (eps * eps);
    let (primary, four, total_sd) = match scheme {
        Scheme::Standard => {
            let s: f64 = stats.iter().map(|s| (s.v_hat * s.c_hat).sqrt()).sum();
            let primary = stats
                .iter()
                .map(|st| count(st.v_hat, st.c_hat, k * s))
                .collect();
            (primary, vec![0; stats.len()], s)
        }
        Scheme::Nested => {
            let s: f64 = stats
                .iter()
                .map(|s| (s.v_bar * s.c_bar).sqrt() + (s.v_four * s.c_four).sqrt())
                .sum();
            let primary = stats
                .iter()
                .map(|st| count(st.v_bar, st.c_bar, k * s))
                .collect();
            let four = stats
                .iter()
                .map(|st| count(st.v_four, st.c_four, k * s))
                .collect();
            (primary, four, s)
        }
    };
    Ok(Allocation {
        primary,
        four,
        degenerate: total_sd == 0.0,
    })
}

/// `(T^, T-)`: predicted cycles to reach mean squared error `eps^2` with the
/// standard and nested schemes, from the costs held in `stats`.
pub fn predicted_times(stats: &[LevelStats], eps: f64) -> Result<(f64, f64)> {
    check_inputs(stats, eps)?;
    let k = 2.0 / (eps * eps);
    let s_hat: f64 = stats.iter().map(|s| (s.v_hat * s.c_hat).sqrt()).sum();
    let s_bar: f64 = stats
        .iter()
        .map(|s| (s.v_bar * s.c_bar).sqrt() + (s.v_four * s.c_four).sqrt())
        .sum();
    Ok((k * s_hat * s_hat, k * s_bar * s_bar))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Speedup {
    pub value: f64,
    /// `v-` was zero and only the cost ratio `c^ / c-` is reported.
    pub cost_ratio_only: bool,
}

/// Reciprocal of the per-level savings factor
/// `(v- c-)/(v^ c^) (1 + sqrt(V- C- / (v- c-)))^2`.
pub fn per_level_speedup(stats: &LevelStats) -> Result<Speedup> {
    if !(stats.v_hat > 0.0 && stats.c_hat > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "speedup at level {} needs positive v^ and c^",
            stats.level
        )));
    }
    if stats.v_bar <= 0.0 {
        return Ok(Speedup {
            value: stats.c_hat / stats.c_bar,
            cost_ratio_only: true,
        });
    }
    let low = stats.v_bar * stats.c_bar;
    let ratio = low / (stats.v_hat * stats.c_hat);
    let corr = 1.0 + (stats.v_four * stats.c_four / low).sqrt();
    Ok(Speedup {
        value: 1.0 / (ratio * corr * corr),
        cost_ratio_only: false,
    })
}

/// One level's share of an estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelContribution {
    pub level: u32,
    /// Mean of the primary difference (`X^` pairs or `X-` pairs).
    pub primary_mean: f64,
    pub primary_samples: u64,
    /// Mean of the four-way correction; zero for the standard scheme.
    pub four_mean: f64,
    pub four_samples: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorResult {
    pub value: f64,
    pub levels: Vec<LevelContribution>,
    /// Final per-level statistics the allocation was based on.
    pub stats: Vec<LevelStats>,
    /// Predicted cycles of the scheme used.
    pub predicted_time: f64,
    /// Cycles actually spent by the main and top-up passes.
    pub spent_cycles: f64,
    pub eps: f64,
    pub degenerate: bool,
}

fn pilot_stats<M: SdeModel + ?Sized>(
    model: &M,
    max_level: u32,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    seed: u64,
    cost: &CostModel,
) -> Result<Vec<LevelStats>> {
    (0..=max_level)
        .map(|l| {
            let m = coupled_moments(
                model,
                l,
                p_low,
                variables,
                kahan,
                0..PILOT_PATHS,
                level_seed(seed, l, PURPOSE_PILOT),
            )?;
            Ok(LevelStats::from_moments(
                l,
                &m.hat,
                &m.bar,
                &m.four,
                cost.level_costs(l, p_low, variables, kahan),
            ))
        })
        .collect()
}

/// Standard multilevel estimate of `E[X^_L]` from carrier paths with exact
/// Gaussians: pilot, allocation, main pass, one re-allocation and top-up.
pub fn run_standard_estimator<M: SdeModel + ?Sized>(
    model: &M,
    max_level: u32,
    eps: f64,
    seed: u64,
    cost: &CostModel,
) -> Result<EstimatorResult> {
    cost.validate()?;
    let vars = Variables::Exact;
    let p = Precision::CARRIER;
    let mut stats = pilot_stats(model, max_level, p, &vars, false, seed, cost)?;
    let mut sums: Vec<Moments> = vec![Moments::new(); stats.len()];
    let mut degenerate = false;
    for _pass in 0..2 {
        let alloc = allocate_samples(&stats, eps, Scheme::Standard)?;
        degenerate = alloc.degenerate;
        for (l, acc) in sums.iter_mut().enumerate() {
            let have = acc.count();
            let want = alloc.primary[l];
            if want > have {
                let lvl = l as u32;
                let more =
                    exact_pair_moments(model, lvl, have..want, level_seed(seed, lvl, PURPOSE_LOW))?;
                acc.merge(&more);
            }
        }
        for (st, acc) in stats.iter_mut().zip(&sums) {
            if acc.count() >= 2 {
                st.v_hat = acc.variance();
                st.mean_hat = acc.mean();
                st.se_v_hat = acc.variance_stderr();
            }
            st.m_hat = acc.count();
        }
    }
    let levels: Vec<LevelContribution> = sums
        .iter()
        .enumerate()
        .map(|(l, m)| LevelContribution {
            level: l as u32,
            primary_mean: m.mean(),
            primary_samples: m.count(),
            four_mean: 0.0,
            four_samples: 0,
        })
        .collect();
    let spent = stats.iter().map(|s| s.m_hat as f64 * s.c_hat).sum();
    Ok(EstimatorResult {
        value: levels.iter().map(|c| c.primary_mean).sum(),
        predicted_time: predicted_times(&stats, eps)?.0,
        levels,
        stats,
        spent_cycles: spent,
        eps,
        degenerate,
    })
}

/// Nested multilevel estimate of `E[X^_L]`.
///
/// Low-precision pairs draw from the same streams as the standard
/// estimator's carrier pairs, and four-way samples from separate ones.
#[allow(clippy::too_many_arguments)]
pub fn run_nested_estimator<M: SdeModel + ?Sized>(
    model: &M,
    max_level: u32,
    p_low: Precision,
    variables: &Variables,
    kahan: bool,
    eps: f64,
    seed: u64,
    cost: &CostModel,
) -> Result<EstimatorResult> {
    cost.validate()?;
    let mut stats = pilot_stats(model, max_level, p_low, variables, kahan, seed, cost)?;
    let n = stats.len();
    let mut low: Vec<Moments> = vec![Moments::new(); n];
    let mut four: Vec<CoupledMoments> = vec![CoupledMoments::default(); n];
    let mut degenerate = false;
    for _pass in 0..2 {
        let alloc = allocate_samples(&stats, eps, Scheme::Nested)?;
        degenerate = alloc.degenerate;
        for l in 0..n {
            let lvl = l as u32;
            let (have, want) = (low[l].count(), alloc.primary[l]);
            if want > have {
                let more = low_pair_moments(
                    model,
                    lvl,
                    p_low,
                    variables,
                    kahan,
                    have..want,
                    level_seed(seed, lvl, PURPOSE_LOW),
                )?;
                low[l].merge(&more);
            }
            let (have, want) = (four[l].four.count(), alloc.four[l]);
            if want > have {
                let more = coupled_moments(
                    model,
                    lvl,
                    p_low,
                    variables,
                    kahan,
                    have..want,
                    level_seed(seed, lvl, PURPOSE_FOUR),
                )?;
                four[l].merge(&more);
            }
        }
        for (l, st) in stats.iter_mut().enumerate() {
            let costs = (st.c_hat, st.c_bar, st.c_four);
            let hat = if four[l].hat.count() >= 2 {
                four[l].hat
            } else {
                Moments::new()
            };
            let mut next = LevelStats::from_moments(st.level, &hat, &low[l], &four[l].four, costs);
            // Keep pilot variances where the main pass has too few samples.
            if four[l].four.count() < 2 {
                next.v_hat = st.v_hat;
                next.v_four = st.v_four;
            }
            if low[l].count() < 2 {
                next.v_bar = st.v_bar;
            }
            *st = next;
        }
    }
    let levels: Vec<LevelContribution> = (0..n)
        .map(|l| LevelContribution {
            level: l as u32,
            primary_mean: low[l].mean(),
            primary_samples: low[l].count(),
            four_mean: four[l].four.mean(),
            four_samples: four[l].four.count(),
        })
        .collect();
    let spent = stats
        .iter()
        .map(|s| s.m_bar as f64 * s.c_bar + s.m_four as f64 * s.c_four)
        .sum();
    Ok(EstimatorResult {
        value: levels.iter().map(|c| c.primary_mean + c.four_mean).sum(),
        predicted_time: predicted_times(&stats, eps)?.1,
        levels,
        stats,
        spent_cycles: spent,
        eps,
        degenerate,
    })
}
