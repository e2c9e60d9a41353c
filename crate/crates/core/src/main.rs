use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use apprentice_drive::config::Config;
use apprentice_drive::features::RewardWeights;
use apprentice_drive::stages;
use apprentice_drive::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "apprentice-drive", version, about = "Apprenticeship learning for stop-sign driving")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run seed (overrides `seed` in the configuration).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Directory holding every artifact of the run.
    #[arg(long, global = true, value_name = "PATH", default_value = "run")]
    run_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate expert demonstrations (demos.csv).
    GenDemos,
    /// Fit the linear-Gaussian expert policy (expert_policy.json).
    FitExpert,
    /// Recover reward weights from the demonstrations (girl_result.json).
    RecoverReward,
    /// Train a policy on the recovered reward.
    Train {
        /// Reward weights to use instead of the recovered ones, e.g. 0.5,0.2,0.3.
        #[arg(long, value_name = "W1,W2,W3")]
        omega: Option<String>,
    },
    /// Evaluate the final (or given) checkpoint.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Export plot data from the evaluation records.
    ExportPlots,
    /// Run every stage in order.
    Pipeline {
        #[arg(long, value_name = "W1,W2,W3")]
        omega: Option<String>,
    },
}

fn parse_omega(text: Option<&str>) -> Result<Option<RewardWeights>> {
    let Some(text) = text else { return Ok(None) };
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("--omega: cannot parse {s:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    RewardWeights::new(values)
        .map(Some)
        .map_err(|e| Error::Config(format!("--omega: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let dir = cli.run_dir.as_path();
    stages::prepare_run_dir(&cfg, dir)?;
    match cli.command {
        Command::GenDemos => {
            stages::gen_demos(&cfg, dir)?;
        }
        Command::FitExpert => {
            stages::fit_expert(&cfg, dir)?;
        }
        Command::RecoverReward => {
            let r = stages::recover(&cfg, dir)?;
            println!("omega = {:?}", r.omega.as_slice());
        }
        Command::Train { omega } => {
            let w = parse_omega(omega.as_deref())?;
            stages::train_stage(&cfg, dir, w.as_ref())?;
        }
        Command::Evaluate { checkpoint } => {
            let m = stages::evaluate_stage(&cfg, dir, checkpoint.as_deref(), None)?;
            println!("success_rate = {}", m.aggregate.success_rate);
        }
        Command::ExportPlots => {
            for p in stages::export_plots(&cfg, dir)? {
                println!("{}", p.display());
            }
        }
        Command::Pipeline { omega } => {
            let w = parse_omega(omega.as_deref())?;
            let m = stages::pipeline(&cfg, dir, w.as_ref())?;
            println!("success_rate = {}", m.aggregate.success_rate);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
