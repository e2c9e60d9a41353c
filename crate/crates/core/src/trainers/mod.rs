//! Reinforcement-learning stage: REINFORCE on the linear-Gaussian policy and
//! DDPG on small networks, both driven by the recovered reward.

pub mod ddpg;
pub mod noise;
pub mod reinforce;
pub mod replay;
pub mod returns;
pub mod reward_model;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::policy::{LinearGaussianPolicy, Policy};
use crate::rng::{derive_seed, stream_rng};
use crate::sim::Env;
use ddpg::{Ddpg, DdpgSettings};
use noise::NoiseSchedule;
use reinforce::{reinforce_iteration, ReinforceSettings};
use replay::ReplayBuffer;
use reward_model::RewardModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Reinforce,
    Ddpg,
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reinforce" => Ok(Algo::Reinforce),
            "ddpg" => Ok(Algo::Ddpg),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?} (expected reinforce or ddpg)"
            ))),
        }
    }
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Reinforce => "reinforce",
            Algo::Ddpg => "ddpg",
        }
    }

    pub fn default_gamma(self) -> f64 {
        match self {
            Algo::Reinforce => 0.995,
            Algo::Ddpg => 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algo: Algo,
    /// Discount; `None` picks the algorithm's default.
    pub gamma: Option<f64>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// REINFORCE: episodes per iteration.
    pub batch_trajectories: usize,
    /// REINFORCE: number of iterations.
    pub iterations: usize,
    /// DDPG: minibatch size.
    pub minibatch: usize,
    /// DDPG: number of episodes.
    pub episodes: usize,
    pub tau: f64,
    pub memory_size: usize,
    pub noise_initial: f64,
    pub noise_decay: f64,
    pub hidden: usize,
    /// m/s
    pub initial_velocity: f64,
    /// Write a checkpoint every this many iterations (REINFORCE) or episodes (DDPG).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algo: Algo::Ddpg,
            gamma: None,
            lr_actor: 0.001,
            lr_critic: 0.0003,
            batch_trajectories: 50,
            iterations: 200,
            minibatch: 64,
            episodes: 250,
            tau: 0.001,
            memory_size: 10_000,
            noise_initial: 3.0,
            noise_decay: 0.999,
            hidden: 64,
            initial_velocity: 16.667,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.algo.default_gamma())
    }

    pub fn validate(&self) -> Result<()> {
        let gamma = self.gamma();
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("train.gamma must be in [0,1), got {gamma}")));
        }
        for (name, v) in [
            ("train.lr_actor", self.lr_actor),
            ("train.lr_critic", self.lr_critic),
            ("train.noise_initial", self.noise_initial),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("train.tau must be in [0,1], got {}", self.tau)));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train.noise_decay must be in (0,1], got {}",
                self.noise_decay
            )));
        }
        for (name, v) in [
            ("train.batch_trajectories", self.batch_trajectories),
            ("train.minibatch", self.minibatch),
            ("train.hidden", self.hidden),
            ("train.checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.memory_size < self.minibatch {
            return Err(Error::InvalidArgument(format!(
                "train.memory_size ({}) must be at least train.minibatch ({})",
                self.memory_size, self.minibatch
            )));
        }
        if !(self.initial_velocity.is_finite() && self.initial_velocity >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "train.initial_velocity must be >= 0, got {}",
                self.initial_velocity
            )));
        }
        Ok(())
    }
}

/// One row of `learning_curve.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: usize,
    pub episodes_seen: usize,
    pub mean_return: f64,
    pub discounted_return: f64,
    /// REINFORCE: ‖ĝ‖; DDPG: mean critic loss over the episode.
    pub grad_norm_or_critic_loss: f64,
    /// REINFORCE: σ² of the policy; DDPG: exploration scale of the schedule.
    pub noise_variance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<CurveRecord>,
}

impl LearningCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        if self.records.is_empty() {
            w.write_record([
                "iteration",
                "episodes_seen",
                "mean_return",
                "discounted_return",
                "grad_norm_or_critic_loss",
                "noise_variance",
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<CurveRecord>, _>>()
            .map_err(|e| Error::csv(path, e))?;
        Ok(LearningCurve { records })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: LearningCurve,
}

pub fn checkpoint_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints")
}

pub fn final_checkpoint_path(run_dir: &Path) -> PathBuf {
    checkpoint_dir(run_dir).join("final.json")
}

pub fn write_policy(path: &Path, policy: &Policy) -> Result<()> {
    let text = serde_json::to_string_pretty(policy).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_policy(path: &Path) -> Result<Policy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let policy: Policy = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    policy.validate()?;
    Ok(policy)
}

/// Trains with `cfg` and persists the learning curve, periodic checkpoints
/// and the final policy under `run_dir`. `expert` is the REINFORCE starting
/// point and is ignored by DDPG.
pub fn train(
    cfg: &TrainConfig,
    env: &Env,
    reward: &RewardModel,
    expert: &LinearGaussianPolicy,
    seed: u64,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ckpt_dir = checkpoint_dir(run_dir);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let checkpoint = |index: usize, policy: &Policy| -> Result<()> {
        if index % cfg.checkpoint_every == 0 {
            write_policy(&ckpt_dir.join(format!("iter_{index:04}.json")), policy)?;
        }
        Ok(())
    };

    let outcome = match cfg.algo {
        Algo::Reinforce => {
            let mut policy = expert.clone();
            let settings = ReinforceSettings {
                gamma: cfg.gamma(),
                lr: cfg.lr_actor,
                batch: cfg.batch_trajectories,
                initial_velocity: cfg.initial_velocity,
            };
            let mut opt = Adam::new(policy.theta.len());
            let rollout_seed = derive_seed(seed, "reinforce");
            let mut curve = LearningCurve::default();
            for it in 0..cfg.iterations {
                let stats = reinforce_iteration(
                    &mut policy,
                    &mut opt,
                    env,
                    reward,
                    &settings,
                    rollout_seed,
                    it as u64,
                )?;
                log::debug!("reinforce iteration {it}: {stats:?}");
                curve.records.push(CurveRecord {
                    iteration: it + 1,
                    episodes_seen: (it + 1) * cfg.batch_trajectories,
                    mean_return: stats.mean_return,
                    discounted_return: stats.discounted_return,
                    grad_norm_or_critic_loss: stats.grad_norm,
                    noise_variance: policy.sigma * policy.sigma,
                });
                checkpoint(it + 1, &Policy::LinearGaussian(policy.clone()))?;
            }
            TrainOutcome {
                policy: Policy::LinearGaussian(policy),
                curve,
            }
        }
        Algo::Ddpg => {
            let mut init_rng = stream_rng(derive_seed(seed, "ddpg-init"), 0);
            let mut rng = stream_rng(derive_seed(seed, "ddpg-explore"), 0);
            let mut agent = Ddpg::new(cfg.hidden, 1.0 / (1.0 - cfg.gamma()), &mut init_rng)?;
            let mut buffer = ReplayBuffer::new(cfg.memory_size);
            let mut noise =
                NoiseSchedule::new(cfg.noise_initial, cfg.noise_decay, cfg.memory_size as u64);
            let settings = DdpgSettings {
                gamma: cfg.gamma(),
                lr_actor: cfg.lr_actor,
                lr_critic: cfg.lr_critic,
                minibatch: cfg.minibatch,
                tau: cfg.tau,
            };
            let mut curve = LearningCurve::default();
            for ep in 0..cfg.episodes {
                let stats = ddpg::run_episode(
                    &mut agent,
                    &mut buffer,
                    &mut noise,
                    env,
                    reward,
                    &settings,
                    cfg.initial_velocity,
                    &mut rng,
                )?;
                log::debug!("ddpg episode {ep}: {stats:?}");
                curve.records.push(CurveRecord {
                    iteration: ep + 1,
                    episodes_seen: ep + 1,
                    mean_return: stats.undiscounted_return,
                    discounted_return: stats.discounted_return,
                    grad_norm_or_critic_loss: stats.mean_critic_loss,
                    noise_variance: stats.noise_std,
                });
                checkpoint(
                    ep + 1,
                    &Policy::Actor {
                        network: agent.actor.clone(),
                    },
                )?;
            }
            TrainOutcome {
                policy: Policy::Actor {
                    network: agent.actor,
                },
                curve,
            }
        }
    };

    let curve_path = run_dir.join("learning_curve.csv");
    outcome.curve.write_csv(&curve_path)?;
    write_policy(&final_checkpoint_path(run_dir), &outcome.policy)?;
    Ok(outcome)
}
