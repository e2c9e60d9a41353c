//! Deep deterministic policy gradient: an actor `μ(s)` and a critic `Q(s,a)`,
//! each with a slowly tracking target copy, trained from a replay buffer.
//!
//! Critic regression target for a sampled transition:
//!
//! ```text
//! y = r + γ Q'(s', μ'(s'))     (non-terminal)
//! y = r + γ V_end               (terminal; V_end is the value of the episode ending)
//! ```
//!
//! The actor ascends the mean of `Q(s, μ(s))`, chaining `∂Q/∂a` into the
//! actor's parameter gradient.
//!
//! The critic network's output is multiplied by a fixed `value_scale`
//! (`1/(1−γ)` in training) so that the network itself regresses values of
//! order one while `Q` stays in reward units.

use rand::Rng;

use super::noise::NoiseSchedule;
use super::replay::ReplayBuffer;
use super::reward_model::RewardModel;
use crate::error::{Error, Result};
use crate::nn::{soft_update, Adam, Mlp};
use crate::policy::{actor_layers, critic_layers, network_input, policy_act, NET_INPUT_DIM};
use crate::sim::{Env, Terminal};

/// Scale applied to the initial weights of both output layers, so that
/// initial actions and value estimates start near zero.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTransition {
    pub state: [f64; NET_INPUT_DIM],
    /// Action as applied by the simulator, in `[-1, 1]`.
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; NET_INPUT_DIM],
    pub done: bool,
    /// Value of the episode ending, only meaningful when `done`.
    pub end_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgSettings {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub minibatch: usize,
    pub tau: f64,
}

impl Default for DdpgSettings {
    fn default() -> Self {
        DdpgSettings {
            gamma: 0.99,
            lr_actor: 0.001,
            lr_critic: 0.0003,
            minibatch: 64,
            tau: 0.001,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ddpg {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    /// `Q(s,a) = value_scale · critic(s,a)`.
    pub value_scale: f64,
    actor_opt: Adam,
    critic_opt: Adam,
}

/// Critic input `(state, action)`.
fn critic_input(state: &[f64; NET_INPUT_DIM], action: f64) -> [f64; NET_INPUT_DIM + 1] {
    let mut x = [0.0; NET_INPUT_DIM + 1];
    x[..NET_INPUT_DIM].copy_from_slice(state);
    x[NET_INPUT_DIM] = action;
    x
}

impl Ddpg {
    pub fn new<R: Rng + ?Sized>(hidden: usize, value_scale: f64, rng: &mut R) -> Result<Self> {
        let actor = Mlp::random(actor_layers(hidden), OUTPUT_INIT_SCALE, rng)?;
        let critic = Mlp::random(critic_layers(hidden), OUTPUT_INIT_SCALE, rng)?;
        Ok(Self::from_networks(actor, critic, value_scale))
    }

    pub fn from_networks(actor: Mlp, critic: Mlp, value_scale: f64) -> Self {
        Ddpg {
            value_scale,
            actor_opt: Adam::new(actor.params().len()),
            critic_opt: Adam::new(critic.params().len()),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        }
    }

    pub fn act(&self, state: &[f64; NET_INPUT_DIM]) -> Result<f64> {
        Ok(self.actor.forward(state)?[0])
    }

    /// Regression targets for a minibatch.
    pub fn targets(&self, batch: &[&ReplayTransition], gamma: f64) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|t| {
                if t.done {
                    Ok(t.reward + gamma * t.end_value)
                } else {
                    let a_next = self.actor_target.forward(&t.next_state)?[0];
                    let q_next = self.value_scale
                        * self.critic_target.forward(&critic_input(&t.next_state, a_next))?[0];
                    Ok(t.reward + gamma * q_next)
                }
            })
            .collect()
    }

    /// Mean squared Bellman error `L = (1/N) Σ (Q(s,a) − y)²` and its gradient
    /// with respect to the critic parameters, for fixed targets `y`.
    pub fn critic_loss_and_gradient(
        &self,
        batch: &[&ReplayTransition],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() || batch.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: batch.len(),
                got: targets.len(),
            });
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.critic.params().len()];
        let mut loss = 0.0;
        for (t, &y) in batch.iter().zip(targets) {
            let cache = self.critic.forward_cached(&critic_input(&t.state, t.action))?;
            let err = self.value_scale * cache.output()[0] - y;
            loss += err * err / n;
            self.critic
                .backward_into(&cache, &[2.0 * err * self.value_scale / n], &mut grad)?;
        }
        Ok((loss, grad))
    }

    /// Gradient of `−(1/N) Σ Q(s, μ(s))` with respect to the actor parameters
    /// (a descent direction for the optimizer).
    pub fn actor_gradient(&self, batch: &[&ReplayTransition]) -> Result<Vec<f64>> {
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.actor.params().len()];
        let mut scratch = vec![0.0; self.critic.params().len()];
        for t in batch {
            let actor_cache = self.actor.forward_cached(&t.state)?;
            let a = actor_cache.output()[0];
            let critic_cache = self.critic.forward_cached(&critic_input(&t.state, a))?;
            let dq = self.critic.backward_into(&critic_cache, &[1.0], &mut scratch)?;
            let dq_da = self.value_scale * dq[NET_INPUT_DIM];
            self.actor.backward_into(&actor_cache, &[-dq_da / n], &mut grad)?;
        }
        Ok(grad)
    }

    /// One critic step, one actor step, then both target updates. Returns the
    /// critic loss before the step. A non-finite loss or gradient skips the
    /// whole batch and leaves every network unchanged.
    pub fn update(
        &mut self,
        batch: &[&ReplayTransition],
        settings: &DdpgSettings,
    ) -> Result<Option<f64>> {
        let targets = self.targets(batch, settings.gamma)?;
        let (loss, critic_grad) = self.critic_loss_and_gradient(batch, &targets)?;
        if !loss.is_finite() || critic_grad.iter().any(|g| !g.is_finite()) {
            return Ok(None);
        }
        let actor_grad = self.actor_gradient(batch)?;
        if actor_grad.iter().any(|g| !g.is_finite()) {
            return Ok(None);
        }
        self.critic_opt
            .step(self.critic.params_mut(), &critic_grad, settings.lr_critic)?;
        self.actor_opt
            .step(self.actor.params_mut(), &actor_grad, settings.lr_actor)?;
        soft_update(&mut self.critic_target, &self.critic, settings.tau)?;
        soft_update(&mut self.actor_target, &self.actor, settings.tau)?;
        Ok(Some(loss))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub steps: usize,
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    /// Mean critic loss over the updates made during the episode (NaN if none).
    pub mean_critic_loss: f64,
    pub noise_std: f64,
    pub terminal: Terminal,
}

/// Runs one exploration episode, pushing every transition into the buffer and
/// updating once per step as soon as the buffer is full.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng + ?Sized>(
    agent: &mut Ddpg,
    buffer: &mut ReplayBuffer<ReplayTransition>,
    noise: &mut NoiseSchedule,
    env: &Env,
    reward: &RewardModel,
    settings: &DdpgSettings,
    initial_velocity: f64,
    rng: &mut R,
) -> Result<EpisodeStats> {
    let mut state = env.reset(initial_velocity)?;
    let mut obs = env.observe(&state);
    let mut stats = EpisodeStats {
        steps: 0,
        undiscounted_return: 0.0,
        discounted_return: 0.0,
        mean_critic_loss: f64::NAN,
        noise_std: noise.variance(),
        terminal: Terminal::Running,
    };
    let mut loss_sum = 0.0;
    let mut n_updates = 0usize;
    let mut discount = 1.0;
    loop {
        let s = network_input(&obs);
        let noise_std = noise.variance();
        let action = policy_act(agent.act(&s)?, noise_std, rng);
        noise.step();
        let step = env.step(&state, action)?;
        let next_obs = env.observe(&step.next_state);
        let r = reward.step_reward(&next_obs, step.next_state.accel);
        let done = step.terminal.is_terminal();
        let end_value = if done {
            reward.terminal_value(step.terminal, &next_obs, settings.gamma)
        } else {
            0.0
        };
        buffer.push(ReplayTransition {
            state: s,
            action: step.next_state.prev_action,
            reward: r,
            next_state: network_input(&next_obs),
            done,
            end_value,
        });
        stats.steps += 1;
        stats.undiscounted_return += r;
        stats.discounted_return += discount * r;
        discount *= settings.gamma;
        stats.noise_std = noise_std;

        if buffer.is_full() {
            let batch = buffer.sample(settings.minibatch, rng)?;
            if let Some(loss) = agent.update(&batch, settings)? {
                loss_sum += loss;
                n_updates += 1;
            }
        }

        state = step.next_state;
        obs = next_obs;
        if done {
            stats.discounted_return += discount * end_value;
            stats.terminal = step.terminal;
            break;
        }
    }
    if n_updates > 0 {
        stats.mean_critic_loss = loss_sum / n_updates as f64;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use crate::rng::stream_rng;

    fn transition(done: bool, reward: f64, seed: u64) -> ReplayTransition {
        let mut rng = stream_rng(seed, 0);
        let mut s = [0.0; NET_INPUT_DIM];
        let mut s2 = [0.0; NET_INPUT_DIM];
        for (a, b) in s.iter_mut().zip(s2.iter_mut()) {
            *a = rng.random_range(-1.0..1.0);
            *b = rng.random_range(-1.0..1.0);
        }
        ReplayTransition {
            state: s,
            action: rng.random_range(-1.0..1.0),
            reward,
            next_state: s2,
            done,
            end_value: 0.0,
        }
    }

    fn agent(seed: u64) -> Ddpg {
        Ddpg::new(8, 100.0, &mut stream_rng(seed, 1)).unwrap()
    }

    #[test]
    fn terminal_target_is_the_reward() {
        let a = agent(3);
        let t = transition(true, -0.7, 5);
        let y = a.targets(&[&t], 0.99).unwrap();
        assert_eq!(y, vec![-0.7]);
        let q = a.value_scale * a.critic.forward(&critic_input(&t.state, t.action)).unwrap()[0];
        let (loss, _) = a.critic_loss_and_gradient(&[&t], &y).unwrap();
        assert!((loss - (q + 0.7).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn nonterminal_target_bootstraps_through_target_networks() {
        let a = agent(4);
        let t = transition(false, -0.2, 6);
        let a_next = a.actor_target.forward(&t.next_state).unwrap()[0];
        let q_next = a.value_scale
            * a.critic_target
            .forward(&critic_input(&t.next_state, a_next))
            .unwrap()[0];
        let y = a.targets(&[&t], 0.99).unwrap();
        assert!((y[0] - (-0.2 + 0.99 * q_next)).abs() < 1e-15);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let a = agent(7);
        let ts: Vec<ReplayTransition> = (0..5).map(|i| transition(i % 2 == 0, -0.3, 10 + i)).collect();
        let batch: Vec<&ReplayTransition> = ts.iter().collect();
        let y = a.targets(&batch, 0.99).unwrap();
        let (_, grad) = a.critic_loss_and_gradient(&batch, &y).unwrap();
        let h = 1e-5;
        for i in (0..grad.len()).step_by(7) {
            let mut plus = a.clone();
            plus.critic.params_mut()[i] += h;
            let mut minus = a.clone();
            minus.critic.params_mut()[i] -= h;
            let lp = plus.critic_loss_and_gradient(&batch, &y).unwrap().0;
            let lm = minus.critic_loss_and_gradient(&batch, &y).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn actor_step_follows_chained_action_gradient() {
        // actor μ(s) = tanh(w s) with one weight, critic Q(s,a) = c·a
        let actor = Mlp::from_params(
            vec![LayerSpec::new(NET_INPUT_DIM, 1, Activation::Tanh)],
            vec![0.3, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let c = -2.0;
        let critic = Mlp::from_params(
            vec![LayerSpec::new(NET_INPUT_DIM + 1, 1, Activation::Linear)],
            vec![0.0, 0.0, 0.0, 0.0, c, 0.0],
        )
        .unwrap();
        let agent = Ddpg::from_networks(actor, critic, 1.0);
        let t = ReplayTransition {
            state: [0.8, 0.0, 0.0, 0.0],
            action: 0.0,
            reward: 0.0,
            next_state: [0.0; NET_INPUT_DIM],
            done: true,
            end_value: 0.0,
        };
        let grad = agent.actor_gradient(&[&t]).unwrap();
        // dQ/dw = c · (1 − tanh²(0.3·0.8)) · 0.8; the descent direction is its negative
        let expected = -(c * (1.0 - (0.24f64).tanh().powi(2)) * 0.8);
        assert!((grad[0] - expected).abs() < 1e-14, "{} vs {expected}", grad[0]);
        assert!((grad[4] + c * (1.0 - (0.24f64).tanh().powi(2))).abs() < 1e-14);
    }

    #[test]
    fn update_moves_targets_by_tau() {
        let mut a = agent(9);
        let before = a.critic_target.clone();
        let ts: Vec<ReplayTransition> = (0..4).map(|i| transition(false, -0.5, 20 + i)).collect();
        let batch: Vec<&ReplayTransition> = ts.iter().collect();
        let settings = DdpgSettings {
            minibatch: 4,
            ..DdpgSettings::default()
        };
        a.update(&batch, &settings).unwrap().unwrap();
        for ((t, b), s) in a
            .critic_target
            .params()
            .iter()
            .zip(before.params())
            .zip(a.critic.params())
        {
            let expected = (1.0 - settings.tau) * b + settings.tau * s;
            assert!((t - expected).abs() < 1e-15);
        }
    }
}
