use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cellfree_hbf::config::ConfigText;
use cellfree_hbf::harness::{run_sweep, write_csv, SweepOptions};
use cellfree_hbf::Error;

/// Monte-Carlo capacity sweep for cell-free hybrid beamforming schemes.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Cli {
    /// Flat `key=value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenario: Option<String>,
    /// Record wall-clock time per design instead of zero.
    #[arg(long)]
    timing: bool,
}

fn load(cli: &Cli) -> Result<cellfree_hbf::config::SystemConfig, Error> {
    let text = std::fs::read_to_string(&cli.config).map_err(|source| Error::Io { path: cli.config.clone(), source })?;
    let mut raw = ConfigText::parse(&text)?;
    if let Some(r) = cli.realizations {
        raw.set("realizations", r.to_string())?;
    }
    if let Some(s) = cli.seed {
        raw.set("seed", s.to_string())?;
    }
    if let Some(s) = &cli.scenario {
        raw.set("scenario", s.clone())?;
    }
    raw.build()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if cli.workers == Some(0) {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(1);
    }
    let opts = SweepOptions { workers: cli.workers, timing: cli.timing };
    let result = run_sweep(&cfg, &opts).and_then(|records| {
        write_csv(&records, &cli.out)?;
        Ok(records.len())
    });
    match result {
        Ok(n) => {
            eprintln!("{}: wrote {n} records to {}", cfg.scenario, cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 1 } else { 2 })
        }
    }
}
