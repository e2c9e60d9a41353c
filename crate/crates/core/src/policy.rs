//! Policies: the linear-Gaussian policy over the nine policy features, and
//! the deterministic network actor.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{policy_features, N_POLICY_FEATURES};
use crate::nn::{Activation, LayerSpec, Mlp};
use crate::sim::Observation;

/// `a ~ N(θᵀφ(s), σ²)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianPolicy {
    pub theta: Vec<f64>,
    pub sigma: f64,
}

impl LinearGaussianPolicy {
    pub fn new(theta: Vec<f64>, sigma: f64) -> Result<Self> {
        let policy = LinearGaussianPolicy { theta, sigma };
        policy.validate()?;
        Ok(policy)
    }

    pub fn zeros(sigma: f64) -> Self {
        LinearGaussianPolicy {
            theta: vec![0.0; N_POLICY_FEATURES],
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("non-finite policy parameter".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "policy sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn mean(&self, features: &[f64]) -> f64 {
        self.theta.iter().zip(features).map(|(t, f)| t * f).sum()
    }

    pub fn mean_action(&self, obs: &Observation) -> Result<f64> {
        if self.theta.len() != N_POLICY_FEATURES {
            return Err(Error::ShapeMismatch {
                expected: N_POLICY_FEATURES,
                got: self.theta.len(),
            });
        }
        Ok(self.mean(&policy_features(obs)))
    }

    /// Score `∇θ log π(a|s) = (a − θᵀφ) φ / σ²`, added into `out`.
    pub fn add_score(&self, features: &[f64], action: f64, out: &mut [f64]) -> Result<()> {
        if self.sigma <= 0.0 {
            return Err(Error::DegeneratePolicy(
                "score is undefined for a deterministic policy".into(),
            ));
        }
        let scale = (action - self.mean(features)) / (self.sigma * self.sigma);
        for (o, f) in out.iter_mut().zip(features) {
            *o += scale * f;
        }
        Ok(())
    }
}

/// Distance (m) beyond which the network no longer distinguishes how far the
/// sign is. The normalized distance input saturates at 1 there.
pub const NET_DISTANCE_HORIZON: f64 = 150.0;

pub const NET_INPUT_DIM: usize = 4;

/// Normalized network input `(v/v_lim, min(d_stop,H)/H, v_lim/20, prev_action)`.
pub fn network_input(obs: &Observation) -> [f64; NET_INPUT_DIM] {
    [
        obs.velocity / obs.speed_limit,
        obs.d_stop.clamp(0.0, NET_DISTANCE_HORIZON) / NET_DISTANCE_HORIZON,
        obs.speed_limit / 20.0,
        obs.prev_action,
    ]
}

pub fn actor_layers(hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(NET_INPUT_DIM, hidden, Activation::Relu),
        LayerSpec::new(hidden, hidden, Activation::Relu),
        LayerSpec::new(hidden, 1, Activation::Tanh),
    ]
}

pub fn critic_layers(hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(NET_INPUT_DIM + 1, hidden, Activation::Relu),
        LayerSpec::new(hidden, hidden, Activation::Relu),
        LayerSpec::new(hidden, 1, Activation::Linear),
    ]
}

/// A trained (or initial) policy as persisted in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    LinearGaussian(LinearGaussianPolicy),
    Actor { network: Mlp },
}

impl Policy {
    /// Deterministic action (no exploration noise).
    pub fn mean_action(&self, obs: &Observation) -> Result<f64> {
        match self {
            Policy::LinearGaussian(p) => p.mean_action(obs),
            Policy::Actor { network } => {
                if network.input_dim() != NET_INPUT_DIM || network.output_dim() != 1 {
                    return Err(Error::ShapeMismatch {
                        expected: NET_INPUT_DIM,
                        got: network.input_dim(),
                    });
                }
                Ok(network.forward(&network_input(obs))?[0])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Policy::LinearGaussian(p) => {
                p.validate()?;
                if p.theta.len() != N_POLICY_FEATURES {
                    return Err(Error::ShapeMismatch {
                        expected: N_POLICY_FEATURES,
                        got: p.theta.len(),
                    });
                }
                Ok(())
            }
            Policy::Actor { network } => {
                if network.input_dim() != NET_INPUT_DIM || network.output_dim() != 1 {
                    return Err(Error::ShapeMismatch {
                        expected: NET_INPUT_DIM,
                        got: network.input_dim(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Gaussian perturbation of a mean action. Clamping happens in the simulator.
pub fn policy_act<R: Rng + ?Sized>(mean: f64, noise_std: f64, rng: &mut R) -> f64 {
    if noise_std <= 0.0 {
        return mean;
    }
    let normal = Normal::new(0.0, noise_std).expect("noise_std is positive and finite");
    mean + normal.sample(rng)
}
