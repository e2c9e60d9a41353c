//! The pipeline stages behind the command-line tool. Each stage reads its
//! inputs from and writes its artifacts to a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::demos::{fit_mle, generate_demos, read_demos_csv, validate_features, write_demos_csv};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, export_plot_data, write_metrics_json, write_records_csv, EvalMetrics, METRICS_FILE,
    TRAJECTORIES_FILE,
};
use crate::features::RewardWeights;
use crate::girl::{optimality_gap, recover_reward, GirlResult};
use crate::policy::{LinearGaussianPolicy, Policy};
use crate::rng::derive_seed;
use crate::trainers::reward_model::RewardModel;
use crate::trainers::{final_checkpoint_path, read_policy, train, write_policy, TrainOutcome};

pub const DEMOS_FILE: &str = "demos.csv";
pub const EXPERT_FILE: &str = "expert_policy.json";
pub const GIRL_FILE: &str = "girl_result.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path,
            hint: hint.to_string(),
        })
    }
}

/// Creates the run directory and records the effective configuration.
pub fn prepare_run_dir(cfg: &Config, run_dir: &Path) -> Result<()> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let path = run_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&path, cfg.resolved()).map_err(|e| Error::io(&path, e))
}

pub fn gen_demos(cfg: &Config, run_dir: &Path) -> Result<PathBuf> {
    let demos = generate_demos(&cfg.demos, &cfg.env(), derive_seed(cfg.seed, "demos"))?;
    let path = run_dir.join(DEMOS_FILE);
    write_demos_csv(&path, &demos)?;
    log::info!(
        "wrote {} episodes ({} bad, {} transitions) to {}",
        demos.episodes.len(),
        demos.n_bad(),
        demos.n_transitions(),
        path.display()
    );
    Ok(path)
}

pub fn fit_expert(cfg: &Config, run_dir: &Path) -> Result<LinearGaussianPolicy> {
    let demos_path = require(run_dir.join(DEMOS_FILE), "run `gen-demos` first")?;
    let demos = read_demos_csv(&demos_path, cfg.dt)?;
    let policy = fit_mle(&demos)?;
    let report = validate_features(&policy, &cfg.env())?;
    if !report.good_features {
        log::warn!("fitted expert never brakes near the sign: {report:?}");
    }
    write_policy(&run_dir.join(EXPERT_FILE), &Policy::LinearGaussian(policy.clone()))?;
    log::info!("expert sigma {:.4}, theta {:?}", policy.sigma, policy.theta);
    Ok(policy)
}

fn read_expert(run_dir: &Path) -> Result<LinearGaussianPolicy> {
    let path = require(run_dir.join(EXPERT_FILE), "run `fit-expert` first")?;
    match read_policy(&path)? {
        Policy::LinearGaussian(p) => Ok(p),
        Policy::Actor { .. } => Err(Error::InvalidArgument(format!(
            "{} does not hold a linear-Gaussian policy",
            path.display()
        ))),
    }
}

pub fn recover(cfg: &Config, run_dir: &Path) -> Result<GirlResult> {
    let demos_path = require(run_dir.join(DEMOS_FILE), "run `gen-demos` first")?;
    let demos = read_demos_csv(&demos_path, cfg.dt)?;
    let expert = read_expert(run_dir)?;
    let result = recover_reward(&demos, &expert, &cfg.reward, cfg.girl_gamma, cfg.tail)?;
    let gap = optimality_gap(&result.gradient_matrix, result.omega.as_slice());
    log::info!("optimality certificate {gap:.3e} (>= 0 up to solver tolerance)");
    result.write_json(&run_dir.join(GIRL_FILE))?;
    Ok(result)
}

/// Reward weights for training and evaluation: an explicit override wins,
/// then the recovered weights in the run directory.
pub fn resolve_weights(
    cfg: &Config,
    run_dir: &Path,
    override_weights: Option<&RewardWeights>,
) -> Result<RewardWeights> {
    if let Some(w) = override_weights.or(cfg.omega.as_ref()) {
        return Ok(w.clone());
    }
    let path = require(
        run_dir.join(GIRL_FILE),
        "run `recover-reward` first or pass --omega w1,w2,w3",
    )?;
    Ok(GirlResult::read_json(&path)?.omega)
}

pub fn train_stage(
    cfg: &Config,
    run_dir: &Path,
    override_weights: Option<&RewardWeights>,
) -> Result<TrainOutcome> {
    let weights = resolve_weights(cfg, run_dir, override_weights)?;
    let reward = RewardModel::new(weights, cfg.reward, cfg.tail);
    let expert = match cfg.train.algo {
        crate::trainers::Algo::Reinforce => read_expert(run_dir)?,
        crate::trainers::Algo::Ddpg => LinearGaussianPolicy::zeros(0.0),
    };
    train(&cfg.train, &cfg.env(), &reward, &expert, derive_seed(cfg.seed, "train"), run_dir)
}

pub fn evaluate_stage(
    cfg: &Config,
    run_dir: &Path,
    checkpoint: Option<&Path>,
    override_weights: Option<&RewardWeights>,
) -> Result<EvalMetrics> {
    let path = match checkpoint {
        Some(p) => require(p.to_path_buf(), "no such checkpoint")?,
        None => require(final_checkpoint_path(run_dir), "run `train` first")?,
    };
    let policy = read_policy(&path)?;
    let reward = resolve_weights(cfg, run_dir, override_weights)
        .ok()
        .map(|w| RewardModel::new(w, cfg.reward, cfg.tail));
    let (records, metrics) = evaluate(
        &policy,
        &cfg.eval,
        &cfg.env(),
        reward.as_ref(),
        derive_seed(cfg.seed, "eval"),
    )?;
    write_records_csv(&run_dir.join(TRAJECTORIES_FILE), &records)?;
    write_metrics_json(&run_dir.join(METRICS_FILE), &metrics)?;
    log::info!(
        "success rate {:.3} ({}/{})",
        metrics.aggregate.success_rate,
        metrics.aggregate.n_success,
        metrics.aggregate.n_episodes
    );
    Ok(metrics)
}

pub fn export_plots(cfg: &Config, run_dir: &Path) -> Result<Vec<PathBuf>> {
    export_plot_data(run_dir, &cfg.env())
}

/// Every stage in order.
pub fn pipeline(cfg: &Config, run_dir: &Path, override_weights: Option<&RewardWeights>) -> Result<EvalMetrics> {
    gen_demos(cfg, run_dir)?;
    fit_expert(cfg, run_dir)?;
    recover(cfg, run_dir)?;
    train_stage(cfg, run_dir, override_weights)?;
    let metrics = evaluate_stage(cfg, run_dir, None, override_weights)?;
    export_plots(cfg, run_dir)?;
    Ok(metrics)
}
