//! Experiment runners. Each returns typed rows and converts them to a table
//! with a fixed column order.

use std::path::Path;

use lpsde::mlmc::{
    estimate_level_stats, level_seed, per_level_speedup, run_nested_estimator,
    run_standard_estimator, two_way_moments, LevelStats,
};
use lpsde::randvar::{derive_seed, DensityHistogram, Variables};
use lpsde::sde::{step_error_probe, LevelSpec, StepErrorStats};
use lpsde::Precision;

use crate::config::{Command, Config};
use crate::error::{CliError, CliResult};
use crate::table::{num, Table};

const PURPOSE_TWO_WAY: u64 = 16;
const PURPOSE_STEP: u64 = 17;
const PURPOSE_DENSITY: u64 = 18;

pub const DENSITY_HEADER: &[&str] = &["bin_lo", "bin_hi", "density"];
pub const TWO_WAY_HEADER: &[&str] = &["level", "n", "precision", "kahan", "variance", "stderr"];
pub const FOUR_WAY_HEADER: &[&str] = &["level", "series", "variance", "stderr"];
pub const SPEEDUP_HEADER: &[&str] = &["level", "variant", "speedup", "cost_ratio_only"];
pub const STEP_HEADER: &[&str] = &[
    "precision",
    "level",
    "samples",
    "mean_eta",
    "mean_abs_eta",
    "mean_eta_prime",
    "mean_abs_eta_prime",
];
pub const ESTIMATE_HEADER: &[&str] = &[
    "scheme",
    "max_level",
    "eps",
    "value",
    "predicted_time",
    "spent_cycles",
    "degenerate",
];
pub const STATS_HEADER: &[&str] = &[
    "variant",
    "level",
    "v_hat",
    "v_bar",
    "v_four",
    "se_v_hat",
    "se_v_bar",
    "se_v_four",
    "c_hat",
    "c_bar",
    "c_four",
    "m_hat",
    "m_bar",
    "m_four",
];

/// Runs the configured subcommand and writes its CSV output.
pub fn run(cfg: &Config) -> CliResult<()> {
    let out = cfg.out.as_deref();
    match cfg.command {
        Command::Density => density_table(&density(cfg)?).write(out),
        Command::TwoWay => two_way_table(&two_way(cfg)?).write(out),
        Command::FourWay => {
            let stats = level_stats(cfg)?;
            write_stats(cfg, &stats)?;
            four_way_table(&stats).write(out)
        }
        Command::Speedup => {
            let stats = match &cfg.stats {
                Some(p) => read_stats(p)?,
                None => level_stats(cfg)?,
            };
            speedup_table(&speedups(&stats)?).write(out)
        }
        Command::StepErrors => step_table(&step_errors(cfg)?).write(out),
        Command::Estimate => {
            let (rows, stats) = estimate(cfg)?;
            write_stats(cfg, &stats)?;
            estimate_table(&rows).write(out)
        }
    }
}

fn write_stats(cfg: &Config, stats: &[VariantStats]) -> CliResult<()> {
    match &cfg.stats_out {
        Some(p) => stats_table(stats).write(Some(p)),
        None => Ok(()),
    }
}

pub fn density(cfg: &Config) -> CliResult<DensityHistogram> {
    let approx = match &cfg.variables {
        Variables::Approx(a) => a,
        Variables::Exact => {
            return Err(CliError::config(
                "density needs an approximate variable, not exact",
            ))
        }
    };
    Ok(DensityHistogram::sample(
        approx,
        cfg.samples,
        cfg.bin_width,
        cfg.half_range,
        derive_seed(cfg.seed, PURPOSE_DENSITY),
    )?)
}

pub fn density_table(h: &DensityHistogram) -> Table {
    let mut t = Table::new(DENSITY_HEADER);
    for (i, d) in h.density.iter().enumerate() {
        let lo = h.lo + i as f64 * h.bin_width;
        t.push(vec![num(lo), num(lo + h.bin_width), num(*d)]);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoWayRow {
    pub level: u32,
    pub precision: Precision,
    pub kahan: bool,
    pub variance: f64,
    pub stderr: f64,
}

/// `V[X^_N - X-_N]` per precision and level; all precisions share streams.
pub fn two_way(cfg: &Config) -> CliResult<Vec<TwoWayRow>> {
    let mut rows = Vec::new();
    for &p in &cfg.precisions {
        for l in cfg.levels.clone() {
            let m = two_way_moments(
                &cfg.model,
                l,
                p,
                &cfg.variables,
                cfg.kahan,
                0..cfg.paths_at(l),
                level_seed(cfg.seed, l, PURPOSE_TWO_WAY),
            )?;
            rows.push(TwoWayRow {
                level: l,
                precision: p,
                kahan: cfg.kahan,
                variance: m.variance(),
                stderr: m.variance_stderr(),
            });
        }
    }
    Ok(rows)
}

pub fn two_way_table(rows: &[TwoWayRow]) -> Table {
    let mut t = Table::new(TWO_WAY_HEADER);
    for r in rows {
        t.push(vec![
            r.level.to_string(),
            (1u64 << r.level).to_string(),
            r.precision.to_string(),
            r.kahan.to_string(),
            num(r.variance),
            num(r.stderr),
        ]);
    }
    t
}

/// Level statistics of one precision and compensation setting.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantStats {
    pub name: String,
    pub levels: Vec<LevelStats>,
}

fn variant_name(p: Precision, kahan: bool) -> String {
    if kahan {
        format!("{p}_kahan")
    } else {
        p.to_string()
    }
}

/// Statistics for every precision, uncompensated, then compensated when
/// `kahan` is set. Every variant sees the same uniforms at a given level.
pub fn level_stats(cfg: &Config) -> CliResult<Vec<VariantStats>> {
    let mut settings: Vec<(Precision, bool)> = cfg.precisions.iter().map(|&p| (p, false)).collect();
    if cfg.kahan {
        settings.extend(cfg.precisions.iter().map(|&p| (p, true)));
    }
    settings
        .into_iter()
        .map(|(p, kahan)| {
            let levels = cfg
                .levels
                .clone()
                .map(|l| {
                    estimate_level_stats(
                        &cfg.model,
                        l,
                        p,
                        &cfg.variables,
                        kahan,
                        cfg.paths_at(l),
                        cfg.seed,
                        &cfg.cost,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(VariantStats {
                name: variant_name(p, kahan),
                levels,
            })
        })
        .collect()
}

/// Series per level: the carrier two-way variance, then the low-precision
/// two-way and four-way variances of each variant.
pub fn four_way_table(stats: &[VariantStats]) -> Table {
    let mut t = Table::new(FOUR_WAY_HEADER);
    let Some(first) = stats.first() else {
        return t;
    };
    for (i, base) in first.levels.iter().enumerate() {
        let l = base.level.to_string();
        t.push(vec![
            l.clone(),
            "carrier_two_way".into(),
            num(base.v_hat),
            num(base.se_v_hat),
        ]);
        for v in stats {
            let s = &v.levels[i];
            t.push(vec![
                l.clone(),
                format!("{}_two_way", v.name),
                num(s.v_bar),
                num(s.se_v_bar),
            ]);
            t.push(vec![
                l.clone(),
                format!("{}_four_way", v.name),
                num(s.v_four),
                num(s.se_v_four),
            ]);
        }
    }
    t
}

pub fn stats_table(stats: &[VariantStats]) -> Table {
    let mut t = Table::new(STATS_HEADER);
    for v in stats {
        for s in &v.levels {
            t.push(vec![
                v.name.clone(),
                s.level.to_string(),
                num(s.v_hat),
                num(s.v_bar),
                num(s.v_four),
                num(s.se_v_hat),
                num(s.se_v_bar),
                num(s.se_v_four),
                num(s.c_hat),
                num(s.c_bar),
                num(s.c_four),
                s.m_hat.to_string(),
                s.m_bar.to_string(),
                s.m_four.to_string(),
            ]);
        }
    }
    t
}

/// Reads a level statistics CSV in the layout written by `stats_table`.
pub fn read_stats(path: &Path) -> CliResult<Vec<VariantStats>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(STATS_HEADER.iter().copied()) {
        return Err(CliError::config(format!(
            "{}: expected header {}",
            path.display(),
            STATS_HEADER.join(",")
        )));
    }
    let mut out: Vec<VariantStats> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |field: &str| {
            CliError::config(format!("{}: row {}: bad {field}", path.display(), i + 2))
        };
        let f = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(STATS_HEADER[k]));
        let u = |k: usize| rec[k].parse::<u64>().map_err(|_| bad(STATS_HEADER[k]));
        let level: u32 = rec[1].parse().map_err(|_| bad("level"))?;
        let mut s = LevelStats::from_parts(level, (f(2)?, f(3)?, f(4)?), (f(8)?, f(9)?, f(10)?));
        (s.se_v_hat, s.se_v_bar, s.se_v_four) = (f(5)?, f(6)?, f(7)?);
        (s.m_hat, s.m_bar, s.m_four) = (u(11)?, u(12)?, u(13)?);
        match out.iter_mut().find(|v| v.name == rec[0]) {
            Some(v) => v.levels.push(s),
            None => out.push(VariantStats {
                name: rec[0].to_string(),
                levels: vec![s],
            }),
        }
    }
    if out.is_empty() {
        return Err(CliError::config(format!(
            "{}: no level statistics",
            path.display()
        )));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::config(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupRow {
    pub level: u32,
    pub variant: String,
    pub speedup: f64,
    pub cost_ratio_only: bool,
}

pub fn speedups(stats: &[VariantStats]) -> CliResult<Vec<SpeedupRow>> {
    let mut rows = Vec::new();
    for v in stats {
        for s in &v.levels {
            let sp = per_level_speedup(s)?;
            rows.push(SpeedupRow {
                level: s.level,
                variant: v.name.clone(),
                speedup: sp.value,
                cost_ratio_only: sp.cost_ratio_only,
            });
        }
    }
    Ok(rows)
}

pub fn speedup_table(rows: &[SpeedupRow]) -> Table {
    let mut t = Table::new(SPEEDUP_HEADER);
    for r in rows {
        t.push(vec![
            r.level.to_string(),
            r.variant.clone(),
            num(r.speedup),
            r.cost_ratio_only.to_string(),
        ]);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRow {
    pub precision: Precision,
    pub level: u32,
    pub stats: StepErrorStats,
}

pub fn step_errors(cfg: &Config) -> CliResult<Vec<StepRow>> {
    let mut rows = Vec::new();
    for &p in &cfg.precisions {
        for l in cfg.levels.clone() {
            let stats = step_error_probe(
                &cfg.model,
                LevelSpec::new(l)?,
                p,
                &cfg.variables,
                cfg.samples,
                level_seed(cfg.seed, l, PURPOSE_STEP),
            )?;
            rows.push(StepRow {
                precision: p,
                level: l,
                stats,
            });
        }
    }
    Ok(rows)
}

pub fn step_table(rows: &[StepRow]) -> Table {
    let mut t = Table::new(STEP_HEADER);
    for r in rows {
        let s = &r.stats;
        t.push(vec![
            r.precision.to_string(),
            r.level.to_string(),
            s.samples.to_string(),
            num(s.mean_eta),
            num(s.mean_abs_eta),
            num(s.mean_eta_prime),
            num(s.mean_abs_eta_prime),
        ]);
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRow {
    pub scheme: &'static str,
    pub max_level: u32,
    pub eps: f64,
    pub value: f64,
    pub predicted_time: f64,
    pub spent_cycles: f64,
    pub degenerate: bool,
}

/// Nested estimate with the first precision, then the standard carrier
/// estimate, both over levels `0..=b`.
pub fn estimate(cfg: &Config) -> CliResult<(Vec<EstimateRow>, Vec<VariantStats>)> {
    if *cfg.levels.start() != 0 {
        return Err(CliError::config(
            "estimate needs a level range starting at 0",
        ));
    }
    let max = *cfg.levels.end();
    let p = cfg.precisions[0];
    let nested = run_nested_estimator(
        &cfg.model,
        max,
        p,
        &cfg.variables,
        cfg.kahan,
        cfg.eps,
        cfg.seed,
        &cfg.cost,
    )?;
    let standard = run_standard_estimator(&cfg.model, max, cfg.eps, cfg.seed, &cfg.cost)?;
    let row = |scheme, r: &lpsde::mlmc::EstimatorResult| EstimateRow {
        scheme,
        max_level: max,
        eps: r.eps,
        value: r.value,
        predicted_time: r.predicted_time,
        spent_cycles: r.spent_cycles,
        degenerate: r.degenerate,
    };
    let rows = vec![row("nested", &nested), row("standard", &standard)];
    let stats = vec![
        VariantStats {
            name: variant_name(p, cfg.kahan),
            levels: nested.stats,
        },
        VariantStats {
            name: "standard".into(),
            levels: standard.stats,
        },
    ];
    Ok((rows, stats))
}

pub fn estimate_table(rows: &[EstimateRow]) -> Table {
    let mut t = Table::new(ESTIMATE_HEADER);
    for r in rows {
        t.push(vec![
            r.scheme.to_string(),
            r.max_level.to_string(),
            num(r.eps),
            num(r.value),
            num(r.predicted_time),
            num(r.spent_cycles),
            r.degenerate.to_string(),
        ]);
    }
    t
}
