use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use proxyfuse_cli::commands;
use proxyfuse_cli::config::{ExecutionMode, RunConfig};

#[derive(Parser)]
#[command(name = "proxyfuse", version, about = "Spatial data fusion of point observations and gridded proxies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model; write traces, the prediction surface and M(d).
    Fit(Common),
    /// Fit, then predict at the sites listed in `[predict] sites`.
    Predict(Common),
    /// Run the scenario × model × replicate simulation study.
    SimulateStudy(Common),
    /// Fit, then write M(d) and variograms of the proxy, surface and discrepancy.
    Diagnose(Common),
    /// Cross-validate by site folds.
    Cv(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set chain.burn_in=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, overriding `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Run independent fits one after another.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config, &self.overrides)?;
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.sequential {
            cfg.execution = ExecutionMode::Sequential;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit(c) => commands::cmd_fit(&c.load()?),
        Command::Predict(c) => commands::cmd_predict(&c.load()?),
        Command::SimulateStudy(c) => commands::cmd_simulate_study(&c.load()?),
        Command::Diagnose(c) => commands::cmd_diagnose(&c.load()?),
        Command::Cv(c) => commands::cmd_cv(&c.load()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(proxyfuse_cli::exit_code(&e) as u8)
        }
    }
}
