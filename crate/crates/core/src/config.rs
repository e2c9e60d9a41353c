//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be one
//! of [`Config::KEYS`]; unknown or repeated keys are errors. Lists are comma
//! separated. [`Config::resolved`] echoes every key with its effective value
//! in the same format, so its output parses back to the same configuration.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::demos::DemoConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::features::{RewardConfig, RewardWeights};
use crate::sim::{Env, RoadConfig, VehicleParams, DEFAULT_DT, MAX_EPISODE_STEPS};
use crate::trainers::returns::TerminalTail;
use crate::trainers::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub vehicle: VehicleParams,
    pub dt: f64,
    pub max_steps: u32,
    pub road: RoadConfig,
    pub reward: RewardConfig,
    /// Discount used when estimating the expert's feature gradients.
    pub girl_gamma: f64,
    pub tail: TerminalTail,
    pub demos: DemoConfig,
    pub train: TrainConfig,
    /// Reward weights for training instead of the recovered ones.
    pub omega: Option<RewardWeights>,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            vehicle: VehicleParams::default(),
            dt: DEFAULT_DT,
            max_steps: MAX_EPISODE_STEPS,
            road: RoadConfig::default(),
            reward: RewardConfig::default(),
            girl_gamma: 0.995,
            tail: TerminalTail::Absorbing,
            demos: DemoConfig::default(),
            train: TrainConfig::default(),
            omega: None,
            eval: EvalConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|item| parse::<f64>(key, item.trim()))
        .collect()
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl Config {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "vehicle.mass",
        "vehicle.max_traction_force",
        "vehicle.max_brake_force",
        "vehicle.drag_coeff",
        "vehicle.rolling_resist_force",
        "vehicle.dt",
        "vehicle.max_steps",
        "road.length",
        "road.speed_limit",
        "road.friction",
        "features.stop_distance",
        "features.sigma",
        "features.speed_scale",
        "features.comfort_scale",
        "features.gamma",
        "features.tail",
        "demos.n_total",
        "demos.n_bad",
        "demos.jitter",
        "demos.v0_min_kmh",
        "demos.v0_max_kmh",
        "train.algo",
        "train.gamma",
        "train.lr_actor",
        "train.lr_critic",
        "train.batch_trajectories",
        "train.iterations",
        "train.minibatch",
        "train.episodes",
        "train.tau",
        "train.memory_size",
        "train.noise_initial",
        "train.noise_decay",
        "train.hidden",
        "train.initial_velocity",
        "train.checkpoint_every",
        "train.omega",
        "eval.n_episodes",
        "eval.v0_min_kmh",
        "eval.v0_max_kmh",
        "eval.road_lengths",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "vehicle.mass" => self.vehicle.mass = parse(key, v)?,
            "vehicle.max_traction_force" => self.vehicle.max_traction_force = parse(key, v)?,
            "vehicle.max_brake_force" => self.vehicle.max_brake_force = parse(key, v)?,
            "vehicle.drag_coeff" => self.vehicle.drag_coeff = parse(key, v)?,
            "vehicle.rolling_resist_force" => self.vehicle.rolling_resist_force = parse(key, v)?,
            "vehicle.dt" => self.dt = parse(key, v)?,
            "vehicle.max_steps" => self.max_steps = parse(key, v)?,
            "road.length" => self.road.length = parse(key, v)?,
            "road.speed_limit" => self.road.speed_limit = parse(key, v)?,
            "road.friction" => self.road.friction = parse(key, v)?,
            "features.stop_distance" => self.reward.target.distance = parse(key, v)?,
            "features.sigma" => self.reward.target.sigma = parse(key, v)?,
            "features.speed_scale" => self.reward.speed_scale = parse(key, v)?,
            "features.comfort_scale" => self.reward.comfort_scale = parse(key, v)?,
            "features.gamma" => self.girl_gamma = parse(key, v)?,
            "features.tail" => self.tail = v.parse()?,
            "demos.n_total" => self.demos.n_total = parse(key, v)?,
            "demos.n_bad" => self.demos.n_bad = parse(key, v)?,
            "demos.jitter" => self.demos.jitter = parse(key, v)?,
            "demos.v0_min_kmh" => self.demos.v0_min_kmh = parse(key, v)?,
            "demos.v0_max_kmh" => self.demos.v0_max_kmh = parse(key, v)?,
            "train.algo" => self.train.algo = v.parse()?,
            "train.gamma" => {
                self.train.gamma = if v == "default" { None } else { Some(parse(key, v)?) }
            }
            "train.lr_actor" => self.train.lr_actor = parse(key, v)?,
            "train.lr_critic" => self.train.lr_critic = parse(key, v)?,
            "train.batch_trajectories" => self.train.batch_trajectories = parse(key, v)?,
            "train.iterations" => self.train.iterations = parse(key, v)?,
            "train.minibatch" => self.train.minibatch = parse(key, v)?,
            "train.episodes" => self.train.episodes = parse(key, v)?,
            "train.tau" => self.train.tau = parse(key, v)?,
            "train.memory_size" => self.train.memory_size = parse(key, v)?,
            "train.noise_initial" => self.train.noise_initial = parse(key, v)?,
            "train.noise_decay" => self.train.noise_decay = parse(key, v)?,
            "train.hidden" => self.train.hidden = parse(key, v)?,
            "train.initial_velocity" => self.train.initial_velocity = parse(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,
            "train.omega" => {
                self.omega = if v == "recovered" {
                    None
                } else {
                    let w = parse_list(key, v)?;
                    Some(RewardWeights::new(w).map_err(|e| Error::Config(format!("{key}: {e}")))?)
                }
            }
            "eval.n_episodes" => self.eval.n_episodes = parse(key, v)?,
            "eval.v0_min_kmh" => self.eval.v0_min_kmh = parse(key, v)?,
            "eval.v0_max_kmh" => self.eval.v0_max_kmh = parse(key, v)?,
            "eval.road_lengths" => self.eval.road_lengths = parse_list(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(body, _)| body).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| {
            Error::Config(format!("cannot read configuration file {}", path.display()))
        })?;
        Config::parse_str(&text)
    }

    /// Every check a configuration has to pass before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(strip_prefix(&e));
        self.vehicle.validate().map_err(wrap)?;
        self.road.validate().map_err(wrap)?;
        self.reward.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.eval.validate().map_err(wrap)?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("vehicle.dt must be > 0, got {}", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("vehicle.max_steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.girl_gamma) {
            return Err(Error::Config(format!(
                "features.gamma must be in [0,1), got {}",
                self.girl_gamma
            )));
        }
        if self.demos.n_total == 0 || self.demos.n_bad > self.demos.n_total {
            return Err(Error::Config(format!(
                "demos.n_bad ({}) must not exceed demos.n_total ({}) and n_total must be positive",
                self.demos.n_bad, self.demos.n_total
            )));
        }
        if !(self.demos.jitter.is_finite() && self.demos.jitter >= 0.0) {
            return Err(Error::Config(format!("demos.jitter must be >= 0, got {}", self.demos.jitter)));
        }
        if !(0.0 <= self.demos.v0_min_kmh && self.demos.v0_min_kmh <= self.demos.v0_max_kmh) {
            return Err(Error::Config("demos.v0_min_kmh must be within [0, demos.v0_max_kmh]".into()));
        }
        Ok(())
    }

    pub fn env(&self) -> Env {
        Env {
            vehicle: self.vehicle,
            road: self.road,
            dt: self.dt,
            max_steps: self.max_steps,
        }
    }

    pub fn value(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "vehicle.mass" => self.vehicle.mass.to_string(),
            "vehicle.max_traction_force" => self.vehicle.max_traction_force.to_string(),
            "vehicle.max_brake_force" => self.vehicle.max_brake_force.to_string(),
            "vehicle.drag_coeff" => self.vehicle.drag_coeff.to_string(),
            "vehicle.rolling_resist_force" => self.vehicle.rolling_resist_force.to_string(),
            "vehicle.dt" => self.dt.to_string(),
            "vehicle.max_steps" => self.max_steps.to_string(),
            "road.length" => self.road.length.to_string(),
            "road.speed_limit" => self.road.speed_limit.to_string(),
            "road.friction" => self.road.friction.to_string(),
            "features.stop_distance" => self.reward.target.distance.to_string(),
            "features.sigma" => self.reward.target.sigma.to_string(),
            "features.speed_scale" => self.reward.speed_scale.to_string(),
            "features.comfort_scale" => self.reward.comfort_scale.to_string(),
            "features.gamma" => self.girl_gamma.to_string(),
            "features.tail" => self.tail.as_str().to_string(),
            "demos.n_total" => self.demos.n_total.to_string(),
            "demos.n_bad" => self.demos.n_bad.to_string(),
            "demos.jitter" => self.demos.jitter.to_string(),
            "demos.v0_min_kmh" => self.demos.v0_min_kmh.to_string(),
            "demos.v0_max_kmh" => self.demos.v0_max_kmh.to_string(),
            "train.algo" => self.train.algo.as_str().to_string(),
            "train.gamma" => self.train.gamma().to_string(),
            "train.lr_actor" => self.train.lr_actor.to_string(),
            "train.lr_critic" => self.train.lr_critic.to_string(),
            "train.batch_trajectories" => self.train.batch_trajectories.to_string(),
            "train.iterations" => self.train.iterations.to_string(),
            "train.minibatch" => self.train.minibatch.to_string(),
            "train.episodes" => self.train.episodes.to_string(),
            "train.tau" => self.train.tau.to_string(),
            "train.memory_size" => self.train.memory_size.to_string(),
            "train.noise_initial" => self.train.noise_initial.to_string(),
            "train.noise_decay" => self.train.noise_decay.to_string(),
            "train.hidden" => self.train.hidden.to_string(),
            "train.initial_velocity" => self.train.initial_velocity.to_string(),
            "train.checkpoint_every" => self.train.checkpoint_every.to_string(),
            "train.omega" => match &self.omega {
                Some(w) => join(w.as_slice()),
                None => "recovered".to_string(),
            },
            "eval.n_episodes" => self.eval.n_episodes.to_string(),
            "eval.v0_min_kmh" => self.eval.v0_min_kmh.to_string(),
            "eval.v0_max_kmh" => self.eval.v0_max_kmh.to_string(),
            "eval.road_lengths" => join(&self.eval.road_lengths),
            _ => return None,
        };
        Some(s)
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn resolved(&self) -> String {
        Config::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.value(k).expect("every listed key has a value")))
            .collect()
    }
}

/// The message of an error without the variant's "configuration error:" style prefix.
fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_comments_are_ignored() {
        let cfg = Config::parse_str("train.algo = reinforce   # or ddpg\nseed = 4#x\n").unwrap();
        assert_eq!(cfg.train.algo, crate::trainers::Algo::Reinforce);
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(Config::parse_str("").unwrap(), Config::default());
        assert_eq!(Config::parse_str("# only a comment\n\n").unwrap(), Config::default());
    }

    #[test]
    fn resolved_round_trips() {
        let mut cfg = Config::default();
        cfg.set("train.algo", "reinforce").unwrap();
        cfg.set("train.omega", "0.2, 0.3, 0.5").unwrap();
        cfg.set("eval.road_lengths", "250,350").unwrap();
        let text = cfg.resolved();
        let back = Config::parse_str(&text).unwrap();
        assert_eq!(back.resolved(), text);
        assert_eq!(back.omega.unwrap().as_slice(), &[0.2, 0.3, 0.5]);
        assert_eq!(back.eval.road_lengths, vec![250.0, 350.0]);
    }

    #[test]
    fn every_key_is_settable_and_listed() {
        let cfg = Config::default();
        for key in Config::KEYS {
            let value = cfg.value(key).unwrap();
            let mut c = Config::default();
            c.set(key, &value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            "train.learning_rate = 0.1",
            "seed = seven",
            "train.algo = ppo",
            "road.length",
            "seed = 1\nseed = 2",
            "train.omega = 0.5, 0.6, 0.1",
            "eval.road_lengths = 40",
            "train.gamma = 1.0",
        ] {
            let err = Config::parse_str(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text:?} gave {err:?}");
        }
    }

    #[test]
    fn algorithm_picks_its_discount() {
        let cfg = Config::parse_str("train.algo = reinforce").unwrap();
        assert_eq!(cfg.train.gamma(), 0.995);
        let cfg = Config::parse_str("train.algo = ddpg").unwrap();
        assert_eq!(cfg.train.gamma(), 0.99);
    }
}
