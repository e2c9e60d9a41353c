//! Discounted returns and the value of episode endings.
//!
//! An episode that ends with the car at rest leaves it there: the state is
//! absorbing and keeps earning the reward of standing still at that spot.
//! Crossing the sign is an absorbing failure that earns the worst reward, −1
//! on every feature. A time-out is a truncation and carries no tail.

use serde::{Deserialize, Serialize};

use crate::features::{
    reward_feature_stop, RewardConfig, RewardFeatureVector, RewardWeights, N_REWARD_FEATURES,
};
use crate::sim::{Observation, Terminal};

/// How episode endings are valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalTail {
    /// Terminal states are worth 0.
    Zero,
    /// Stopped and crossed states are absorbing (see module docs).
    Absorbing,
}

impl std::str::FromStr for TerminalTail {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "zero" => Ok(TerminalTail::Zero),
            "absorbing" => Ok(TerminalTail::Absorbing),
            other => Err(crate::Error::Config(format!(
                "unknown terminal tail {other:?} (expected zero or absorbing)"
            ))),
        }
    }
}

impl TerminalTail {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalTail::Zero => "zero",
            TerminalTail::Absorbing => "absorbing",
        }
    }
}

/// Per-step reward features earned forever after an episode ends, if the end
/// is absorbing.
pub fn absorbing_features(
    tail: TerminalTail,
    terminal: Terminal,
    final_obs: &Observation,
    cfg: &RewardConfig,
) -> Option<RewardFeatureVector> {
    match (tail, terminal) {
        (TerminalTail::Absorbing, Terminal::Stopped) => Some([
            reward_feature_stop(0.0, final_obs.d_stop, &cfg.target),
            0.0,
            0.0,
        ]),
        (TerminalTail::Absorbing, Terminal::CrossedSign) => Some([-1.0; N_REWARD_FEATURES]),
        _ => None,
    }
}

/// Value `Σ_{k≥0} γ^k r_abs` of an absorbing end, or 0 when there is none.
pub fn terminal_value(
    tail: TerminalTail,
    terminal: Terminal,
    final_obs: &Observation,
    weights: &RewardWeights,
    cfg: &RewardConfig,
    gamma: f64,
) -> f64 {
    absorbing_features(tail, terminal, final_obs, cfg)
        .map(|f| weights.combine(&f).unwrap_or(0.0) / (1.0 - gamma))
        .unwrap_or(0.0)
}

/// `G_t = r_{t+1} + γ G_{t+1}` with `G_T = 0`; `rewards[t]` is `r_{t+1}`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    compute_returns_with_tail(rewards, gamma, 0.0)
}

/// Like [`compute_returns`] but the state reached after the last reward is
/// worth `tail_value`.
pub fn compute_returns_with_tail(rewards: &[f64], gamma: f64, tail_value: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = tail_value;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}
