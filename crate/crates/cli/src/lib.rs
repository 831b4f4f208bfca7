//! Experiment driver behind the `lpsde` binary.

pub mod config;
pub mod error;
pub mod experiments;
pub mod table;

pub use config::{Cli, Command, Config};
pub use error::{CliError, CliResult};

/// Runs `cfg`, inside a pool of `cfg.threads` workers when one is requested.
pub fn execute(cfg: &Config) -> CliResult<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = cfg.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::config(format!("threads: {e}")))?;
        return pool.install(|| experiments::run(cfg));
    }
    experiments::run(cfg)
}
