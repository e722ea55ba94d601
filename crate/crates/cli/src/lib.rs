//! Experiment drivers for `wentzell-core`: configuration, pipelines and
//! result export.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod export;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use error::CliError;
pub use experiments::Subcommand;
use export::{OutputDir, RunManifest};

/// Environment variable overriding the configured output directory.
pub const OUT_DIR_ENV: &str = "WENTZELL_OUT_DIR";

/// Output directory: `--out`, then the environment, then `output.dir`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.dir.clone())
}

/// Runs one subcommand and writes its files and manifest into `out_dir`.
pub fn execute(cmd: Subcommand, mut cfg: ExperimentConfig, out_dir: &Path) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    // the hash covers what determines the results, not where they go
    cfg.output.dir = PathBuf::new();
    let manifest = RunManifest::start(cmd.name(), &cfg, cfg.seed)?;
    let mut out = OutputDir::create(out_dir)?;
    experiments::run_subcommand(cmd, &cfg, &mut out)?;
    out.finish(manifest)
}
