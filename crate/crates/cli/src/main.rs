use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use wentzell_cli::{execute, resolve_out_dir, CliError, ExperimentConfig, Subcommand};

/// Experiments for the coupled bulk-surface heat equation on a disk.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides WENTZELL_OUT_DIR and `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random draw (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = ExperimentConfig::load(&args.config).and_then(|mut cfg| {
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        let out = resolve_out_dir(args.out.as_deref(), &cfg);
        execute(args.subcommand, cfg, &out).map(|m| (out, m))
    });
    match result {
        Ok((out, m)) => {
            println!("{}: wrote {} files to {}", m.subcommand, m.files.len() + 1, out.display());
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    let json = serde_json::to_string(&e.report()).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", e.to_string()));
    eprintln!("{json}");
    ExitCode::from(e.exit_code() as u8)
}
