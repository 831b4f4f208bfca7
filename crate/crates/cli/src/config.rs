//! Experiment configuration.
//!
//! Settings come from an optional flat `key = value` file and from command
//! line flags; a flag overrides the file entry of the same name. Keys are the
//! long flag names, with `_` accepted for `-`.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lpsde::mlmc::CostModel;
use lpsde::randvar::Variables;
use lpsde::sde::Gbm;
use lpsde::Precision;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "lpsde", version, about = "Low-precision SDE path experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Histogram of the approximate Gaussian.
    Density,
    /// Variance of exact minus low-precision fine paths per level.
    TwoWay,
    /// Two-way and four-way level variances per series.
    FourWay,
    /// Per-level speedup of the nested scheme.
    Speedup,
    /// Per-step rounding residual means.
    StepErrors,
    /// Nested and standard estimates end to end.
    Estimate,
}

#[derive(Clone, Debug, Default, Args)]
pub struct Opts {
    /// key = value file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated list of bf16, fp16, fp22, fp32, carrier or custom:m.
    #[arg(long, global = true)]
    pub precision: Option<String>,
    /// exact, linear:K or cubic:K.
    #[arg(long, global = true)]
    pub approx: Option<String>,
    #[arg(long, global = true)]
    pub kahan: bool,
    /// Inclusive level range a..b.
    #[arg(long, global = true)]
    pub levels: Option<String>,
    /// One count, halved per level above 9, or one count per level.
    #[arg(long, global = true)]
    pub paths: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub mu: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub sigma: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long, global = true)]
    pub horizon: Option<String>,
    /// key = value file of cost model entries.
    #[arg(long, global = true)]
    pub cost_model: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<String>,
    /// Target root mean squared error of `estimate`.
    #[arg(long, global = true)]
    pub eps: Option<String>,
    /// Sample count of `density` and `step-errors`.
    #[arg(long, global = true)]
    pub samples: Option<String>,
    /// Level statistics CSV read by `speedup`.
    #[arg(long, global = true)]
    pub stats: Option<PathBuf>,
    /// Level statistics CSV written by `four-way` and `estimate`.
    #[arg(long, global = true)]
    pub stats_out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub bin_width: Option<String>,
    #[arg(long, global = true)]
    pub half_range: Option<String>,
}

const KEYS: &[&str] = &[
    "precision",
    "approx",
    "kahan",
    "levels",
    "paths",
    "seed",
    "mu",
    "sigma",
    "x0",
    "horizon",
    "cost-model",
    "out",
    "threads",
    "eps",
    "samples",
    "stats",
    "stats-out",
    "bin-width",
    "half-range",
];

const COST_KEYS: &[&str] = &[
    "cycles_exact_rng",
    "cycles_approx_rng_single",
    "cycles_approx_rng_half",
    "kahan_overhead_factor",
    "per_step_arithmetic",
];

/// Per-level path counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathCounts {
    /// `n` up to level 9, halved for every level above.
    Scalar(u64),
    /// One count per level of the range, in order.
    List(Vec<u64>),
}

impl PathCounts {
    pub fn at(&self, levels: &RangeInclusive<u32>, level: u32) -> u64 {
        match self {
            PathCounts::Scalar(n) => {
                if level > 9 {
                    n >> (level - 9).min(63)
                } else {
                    *n
                }
            }
            PathCounts::List(v) => v[(level - levels.start()) as usize],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Config {
    pub command: Command,
    pub model: Gbm,
    pub precisions: Vec<Precision>,
    pub variables: Variables,
    pub kahan: bool,
    pub levels: RangeInclusive<u32>,
    pub paths: PathCounts,
    pub seed: u64,
    pub cost: CostModel,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub eps: f64,
    pub samples: u64,
    pub stats: Option<PathBuf>,
    pub stats_out: Option<PathBuf>,
    pub bin_width: f64,
    pub half_range: f64,
}

impl Config {
    /// Defaults of `command` with no file and no flags.
    pub fn defaults(command: Command) -> Self {
        Config::from_map(command, &BTreeMap::new()).expect("defaults are valid")
    }

    pub fn from_cli(cli: &Cli) -> CliResult<Self> {
        let mut map = match &cli.opts.config {
            Some(path) => read_key_values(path)?,
            None => BTreeMap::new(),
        };
        for (key, value) in flag_entries(&cli.opts) {
            map.insert(key.to_string(), value);
        }
        Config::from_map(cli.command, &map)
    }

    pub fn from_map(command: Command, map: &BTreeMap<String, String>) -> CliResult<Self> {
        for key in map.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::config(format!("unknown key `{key}`")));
            }
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let (precision, approx, levels) = match command {
            Command::Density => ("fp16", "linear:1024", "0..0"),
            Command::TwoWay => ("fp16", "cubic:64", "4..12"),
            Command::FourWay => ("fp16,fp32", "linear:1024", "0..12"),
            Command::Speedup => ("fp32,fp16", "linear:1024", "0..12"),
            Command::StepErrors => ("fp16", "cubic:64", "8..8"),
            Command::Estimate => ("fp16", "linear:1024", "0..8"),
        };
        let precisions = parse_precisions(get("precision").unwrap_or(precision))?;
        let variables: Variables = get("approx").unwrap_or(approx).parse()?;
        let levels = parse_levels(get("levels").unwrap_or(levels))?;
        let paths = parse_paths(get("paths").unwrap_or("10000"), &levels)?;
        let model = Gbm::new(
            parse_num(get("mu"), "mu", 0.05)?,
            parse_num(get("sigma"), "sigma", 0.2)?,
            parse_num(get("x0"), "x0", 1.0)?,
            parse_num(get("horizon"), "horizon", 1.0)?,
        )?;
        let cost = match get("cost-model") {
            Some(p) => read_cost_model(Path::new(p))?,
            None => CostModel::default(),
        };
        let threads = match get("threads") {
            Some(t) => {
                let n: usize = parse_num(Some(t), "threads", 0)?;
                if n == 0 {
                    return Err(CliError::config("threads must be positive"));
                }
                Some(n)
            }
            None => None,
        };
        let eps: f64 = parse_num(get("eps"), "eps", 1e-3)?;
        if !(eps.is_finite() && eps > 0.0) {
            return Err(CliError::config("eps must be positive"));
        }
        let samples: u64 = parse_num(get("samples"), "samples", 1_000_000)?;
        if samples == 0 {
            return Err(CliError::config("samples must be positive"));
        }
        let bin_width: f64 = parse_num(get("bin-width"), "bin-width", 0.05)?;
        let half_range: f64 = parse_num(get("half-range"), "half-range", 6.0)?;
        if !(bin_width > 0.0 && half_range > 0.0) {
            return Err(CliError::config(
                "bin-width and half-range must be positive",
            ));
        }
        Ok(Config {
            command,
            model,
            precisions,
            variables,
            kahan: parse_bool(get("kahan"))?,
            levels,
            paths,
            seed: parse_num(get("seed"), "seed", 20240101)?,
            cost,
            out: get("out").map(PathBuf::from),
            threads,
            eps,
            samples,
            stats: get("stats").map(PathBuf::from),
            stats_out: get("stats-out").map(PathBuf::from),
            bin_width,
            half_range,
        })
    }

    pub fn paths_at(&self, level: u32) -> u64 {
        self.paths.at(&self.levels, level)
    }
}

fn flag_entries(o: &Opts) -> Vec<(&'static str, String)> {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let mut v = vec![
        ("precision", o.precision.clone()),
        ("approx", o.approx.clone()),
        ("kahan", o.kahan.then(|| "true".to_string())),
        ("levels", o.levels.clone()),
        ("paths", o.paths.clone()),
        ("seed", o.seed.clone()),
        ("mu", o.mu.clone()),
        ("sigma", o.sigma.clone()),
        ("x0", o.x0.clone()),
        ("horizon", o.horizon.clone()),
        ("cost-model", path(&o.cost_model)),
        ("out", path(&o.out)),
        ("threads", o.threads.clone()),
        ("eps", o.eps.clone()),
        ("samples", o.samples.clone()),
        ("stats", path(&o.stats)),
        ("stats-out", path(&o.stats_out)),
        ("bin-width", o.bin_width.clone()),
        ("half-range", o.half_range.clone()),
    ];
    v.retain(|(_, val)| val.is_some());
    v.into_iter().map(|(k, val)| (k, val.unwrap())).collect()
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::config(format!(
                "line {}: duplicate key `{key}`",
                i + 1
            )));
        }
    }
    Ok(map)
}

fn read_key_values(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_key_values(&text)
}

/// Cost model entries over the defaults; every entry is optional.
pub fn read_cost_model(path: &Path) -> CliResult<CostModel> {
    let map = read_key_values(path)?;
    let mut c = CostModel::default();
    for (k, v) in &map {
        let key = k.replace('-', "_");
        let slot = match key.as_str() {
            "cycles_exact_rng" => &mut c.cycles_exact_rng,
            "cycles_approx_rng_single" => &mut c.cycles_approx_rng_single,
            "cycles_approx_rng_half" => &mut c.cycles_approx_rng_half,
            "kahan_overhead_factor" => &mut c.kahan_overhead_factor,
            "per_step_arithmetic" => &mut c.per_step_arithmetic,
            _ => {
                return Err(CliError::config(format!(
                    "unknown cost model key `{k}`; expected one of {}",
                    COST_KEYS.join(", ")
                )))
            }
        };
        *slot = parse_num(Some(v), k, 0.0)?;
    }
    c.validate()?;
    Ok(c)
}

fn parse_num<T: std::str::FromStr>(v: Option<&str>, key: &str, default: T) -> CliResult<T> {
    match v {
        None => Ok(default),
        Some(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("{key}: cannot parse `{s}`"))),
    }
}

fn parse_bool(v: Option<&str>) -> CliResult<bool> {
    match v.map(str::trim) {
        None | Some("false") | Some("0") | Some("no") => Ok(false),
        Some("true") | Some("1") | Some("yes") => Ok(true),
        Some(s) => Err(CliError::config(format!("kahan: cannot parse `{s}`"))),
    }
}

pub fn parse_precisions(s: &str) -> CliResult<Vec<Precision>> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<Precision>())
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err(CliError::config("precision list is empty"));
    }
    Ok(v)
}

/// `a..b`, inclusive, or a single level `a`.
pub fn parse_levels(s: &str) -> CliResult<RangeInclusive<u32>> {
    let bad = || CliError::config(format!("levels: expected a..b, got `{s}`"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (s, s),
    };
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(CliError::config(format!("levels: range `{s}` is empty")));
    }
    if b > lpsde::sde::LevelSpec::MAX_LEVEL {
        return Err(CliError::config(format!(
            "levels: {b} exceeds {}",
            lpsde::sde::LevelSpec::MAX_LEVEL
        )));
    }
    Ok(a..=b)
}

pub fn parse_paths(s: &str, levels: &RangeInclusive<u32>) -> CliResult<PathCounts> {
    let v = s
        .split(',')
        .map(|n| parse_count(n.trim()))
        .collect::<CliResult<Vec<u64>>>()?;
    let counts = match v.len() {
        1 => PathCounts::Scalar(v[0]),
        n if n == levels.clone().count() => PathCounts::List(v),
        n => {
            return Err(CliError::config(format!(
                "paths: {n} counts for {} levels",
                levels.clone().count()
            )))
        }
    };
    for l in levels.clone() {
        if counts.at(levels, l) < 2 {
            return Err(CliError::config(format!(
                "paths: fewer than 2 paths at level {l}"
            )));
        }
    }
    Ok(counts)
}

/// Integer count, also accepting forms such as `1e4`.
fn parse_count(s: &str) -> CliResult<u64> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
        _ => Err(CliError::config(format!("paths: cannot parse `{s}`"))),
    }
}
