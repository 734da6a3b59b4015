// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kvlens::report::{run, RunConfig};
use kvlens::Error;

/// Runs one kvlens experiment described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "kvlens", version)]
struct Cli {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Manual key-variance threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

fn execute(cli: &Cli) -> Result<PathBuf, Error> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threshold {
        cfg.threshold = Some(t);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::RunConfig("no output directory: pass --out or set output_dir".into()))?;
    cfg.output_dir = Some(out.clone());
    cfg.validate()?;
    run(&cfg, &out)?;
    Ok(out.join(kvlens::report::MANIFEST_FILE))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(if matches!(e, Error::RunConfig(_)) { 2 } else { 1 })
        }
    }
}
