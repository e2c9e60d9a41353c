//! Batch REINFORCE on the linear-Gaussian policy.
//!
//! Each iteration rolls out a batch of episodes, estimates
//!
//! ```text
//! ĝ = mean over episodes of Σ_t ∇θ log π(a_t|s_t) (G_t − b_t)
//! ```
//!
//! with `b_t` the batch mean of the returns-to-go at step `t`, and takes one
//! adaptive-moment ascent step on θ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::returns::compute_returns_with_tail;
use super::reward_model::RewardModel;
use crate::error::{Error, Result};
use crate::features::{policy_features, PolicyFeatureVector};
use crate::nn::Adam;
use crate::policy::{policy_act, LinearGaussianPolicy};
use crate::rng::stream_rng;
use crate::sim::{Env, Terminal};

/// One sampled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub features: Vec<PolicyFeatureVector>,
    /// Sampled (pre-clamp) actions.
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminal: Terminal,
    pub tail_value: f64,
}

impl Rollout {
    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub fn rollout_linear<R: Rng + ?Sized>(
    policy: &LinearGaussianPolicy,
    env: &Env,
    reward: &RewardModel,
    initial_velocity: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<Rollout> {
    let mut state = env.reset(initial_velocity)?;
    let mut out = Rollout {
        features: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        terminal: Terminal::Running,
        tail_value: 0.0,
    };
    loop {
        let obs = env.observe(&state);
        let phi = policy_features(&obs);
        let action = policy_act(policy.mean(&phi), policy.sigma, rng);
        let step = env.step(&state, action)?;
        let next_obs = env.observe(&step.next_state);
        out.features.push(phi);
        out.actions.push(action);
        out.rewards.push(reward.step_reward(&next_obs, step.next_state.accel));
        state = step.next_state;
        if step.terminal.is_terminal() {
            out.terminal = step.terminal;
            out.tail_value = reward.terminal_value(step.terminal, &next_obs, gamma);
            return Ok(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    pub mean_return: f64,
    pub mean_discounted_return: f64,
}

/// Policy-gradient estimate from a batch of rollouts.
pub fn reinforce_gradient(
    policy: &LinearGaussianPolicy,
    rollouts: &[Rollout],
    gamma: f64,
) -> Result<GradientEstimate> {
    if rollouts.is_empty() {
        return Err(Error::InvalidArgument("empty rollout batch".into()));
    }
    let returns: Vec<Vec<f64>> = rollouts
        .iter()
        .map(|r| compute_returns_with_tail(&r.rewards, gamma, r.tail_value))
        .collect();
    let horizon = returns.iter().map(Vec::len).max().unwrap_or(0);
    let mut baseline = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    for g in &returns {
        for (t, v) in g.iter().enumerate() {
            baseline[t] += v;
            counts[t] += 1;
        }
    }
    for (b, c) in baseline.iter_mut().zip(&counts) {
        *b /= *c as f64;
    }

    let mut gradient = vec![0.0; policy.theta.len()];
    for (rollout, g) in rollouts.iter().zip(&returns) {
        for (t, (phi, &a)) in rollout.features.iter().zip(&rollout.actions).enumerate() {
            let advantage = g[t] - baseline[t];
            if advantage != 0.0 {
                let mut score = vec![0.0; gradient.len()];
                policy.add_score(phi, a, &mut score)?;
                for (acc, s) in gradient.iter_mut().zip(score) {
                    *acc += s * advantage;
                }
            }
        }
    }
    let n = rollouts.len() as f64;
    for x in &mut gradient {
        *x /= n;
    }
    Ok(GradientEstimate {
        gradient,
        mean_return: rollouts.iter().map(Rollout::undiscounted_return).sum::<f64>() / n,
        mean_discounted_return: returns
            .iter()
            .map(|g| g.first().copied().unwrap_or(0.0))
            .sum::<f64>()
            / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinforceStats {
    pub mean_return: f64,
    pub discounted_return: f64,
    pub grad_norm: f64,
    /// The gradient was not finite and θ was left unchanged.
    pub aborted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinforceSettings {
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub initial_velocity: f64,
}

/// Collects one batch with the current policy and takes one ascent step.
pub fn reinforce_iteration(
    policy: &mut LinearGaussianPolicy,
    opt: &mut Adam,
    env: &Env,
    reward: &RewardModel,
    settings: &ReinforceSettings,
    seed: u64,
    iteration: u64,
) -> Result<ReinforceStats> {
    if policy.sigma <= 0.0 {
        return Err(Error::DegeneratePolicy("REINFORCE needs sigma > 0".into()));
    }
    let rollouts = (0..settings.batch)
        .map(|j| {
            let mut rng = stream_rng(seed, (iteration << 20) | j as u64);
            rollout_linear(policy, env, reward, settings.initial_velocity, settings.gamma, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let est = reinforce_gradient(policy, &rollouts, settings.gamma)?;
    let grad_norm = est.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();

    let ascent: Vec<f64> = est.gradient.iter().map(|g| -g).collect();
    let mut theta = policy.theta.clone();
    let aborted = match opt.step(&mut theta, &ascent, settings.lr) {
        Ok(()) if theta.iter().all(|t| t.is_finite()) => {
            policy.theta = theta;
            false
        }
        Ok(()) | Err(Error::Fault(_)) => {
            log::warn!("iteration {iteration}: non-finite gradient, keeping previous policy");
            true
        }
        Err(e) => return Err(e),
    };
    Ok(ReinforceStats {
        mean_return: est.mean_return,
        discounted_return: est.mean_discounted_return,
        grad_norm,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(rewards: Vec<f64>, actions: Vec<f64>) -> Rollout {
        let features = actions
            .iter()
            .enumerate()
            .map(|(t, _)| {
                let mut f = [0.0; 9];
                f[0] = 1.0;
                f[1] = t as f64 * 0.1;
                f
            })
            .collect();
        Rollout {
            features,
            actions,
            rewards,
            terminal: Terminal::Stopped,
            tail_value: 0.0,
        }
    }

    #[test]
    fn zero_rewards_give_zero_gradient() {
        let policy = LinearGaussianPolicy::new(vec![0.1; 9], 0.2).unwrap();
        let batch = vec![
            rollout(vec![0.0; 3], vec![0.3, -0.2, 0.5]),
            rollout(vec![0.0; 2], vec![0.9, 0.1]),
        ];
        let est = reinforce_gradient(&policy, &batch, 0.995).unwrap();
        assert!(est.gradient.iter().all(|&g| g == 0.0));
        let mut theta = policy.theta.clone();
        let mut opt = Adam::new(9);
        opt.step(&mut theta, &est.gradient, 0.001).unwrap();
        assert_eq!(theta, policy.theta);
    }

    #[test]
    fn constant_shift_of_returns_leaves_gradient_unchanged() {
        let policy = LinearGaussianPolicy::new(vec![0.1; 9], 0.2).unwrap();
        let batch = vec![
            rollout(vec![-0.5, -0.2, -0.9], vec![0.3, -0.2, 0.5]),
            rollout(vec![-0.1, -0.7, -0.3], vec![0.9, 0.1, -0.4]),
        ];
        // shifting every terminal value by c shifts every return-to-go at a
        // given step by the same amount across the batch
        let shifted: Vec<Rollout> = batch
            .iter()
            .map(|r| Rollout {
                tail_value: r.tail_value + 40.0,
                ..r.clone()
            })
            .collect();
        let a = reinforce_gradient(&policy, &batch, 0.9).unwrap();
        let b = reinforce_gradient(&policy, &shifted, 0.9).unwrap();
        for (x, y) in a.gradient.iter().zip(&b.gradient) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
