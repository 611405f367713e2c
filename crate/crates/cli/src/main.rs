use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmf_heat::error::{Error, Result};
use gmf_heat_cli::commands::{cmd_covtable, cmd_estimate, cmd_mc, cmd_simulate};
use gmf_heat_cli::config::ExperimentConfig;
use gmf_heat_cli::{exit_code, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "gmf-heat",
    version,
    about = "Simulate and estimate the mixed fractional stochastic heat field"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one sample file per replicate and a manifest.
    Simulate(Common),
    /// Estimate parameters from a sample file.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Sample file (.csv or .json).
        #[arg(long)]
        input: PathBuf,
    },
    /// Monte Carlo study over the configured N-sweep.
    Mc(Common),
    /// Tabulate model covariances.
    Covtable(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match ExperimentConfig::load(&common.config) {
        Err(Error::Io(e)) => {
            return Err(Error::Domain(format!(
                "cannot read config {}: {e}",
                common.config.display()
            )))
        }
        other => other?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("GMF_HEAT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Domain(format!("GMF_HEAT_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Internal(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load(&c)?;
            let m = cmd_simulate(&cfg)?;
            println!(
                "wrote {} samples ({:?}) to {}",
                m.files.len(),
                m.method,
                cfg.output.dir.display()
            );
        }
        Command::Estimate { common, input } => {
            let cfg = load(&common)?;
            let r = cmd_estimate(&cfg, &input)?;
            println!("{}", serde_json::to_string_pretty(&r.report)?);
        }
        Command::Mc(c) => {
            let cfg = load(&c)?;
            let r = cmd_mc(&cfg)?;
            println!(
                "wrote {} sweep rows to {}",
                r.rows.len(),
                cfg.output.dir.join("mc_report.json").display()
            );
        }
        Command::Covtable(c) => {
            let cfg = load(&c)?;
            let rows = cmd_covtable(&cfg)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                cfg.output.dir.join("covtable.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmf-heat: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
