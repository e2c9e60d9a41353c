use serde::{Deserialize, Serialize};

use super::returns::{terminal_value, TerminalTail};
use crate::features::{reward_features, RewardConfig, RewardWeights};
use crate::sim::{Observation, Terminal};

/// The reward the agents optimize: recovered weights over the reward
/// features, plus the convention for valuing episode endings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub weights: RewardWeights,
    pub features: RewardConfig,
    pub tail: TerminalTail,
}

impl RewardModel {
    pub fn new(weights: RewardWeights, features: RewardConfig, tail: TerminalTail) -> Self {
        RewardModel {
            weights,
            features,
            tail,
        }
    }

    /// Reward for arriving at `next_obs` with realized acceleration `accel`.
    pub fn step_reward(&self, next_obs: &Observation, accel: f64) -> f64 {
        let phi = reward_features(next_obs, accel, &self.features);
        self.weights
            .as_slice()
            .iter()
            .zip(phi)
            .map(|(w, f)| w * f)
            .sum::<f64>()
            .clamp(-1.0, 0.0)
    }

    pub fn terminal_value(&self, terminal: Terminal, final_obs: &Observation, gamma: f64) -> f64 {
        terminal_value(self.tail, terminal, final_obs, &self.weights, &self.features, gamma)
    }
}
