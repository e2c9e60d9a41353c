//! Policy features and reward features.
//!
//! The linear policies act on nine hand-built policy features. The reward is
//! a convex combination of three bounded reward features, each in `[-1, 0]`:
//!
//! * stop: `exp(−|x − μ|² / 2σ²) − 1` with `x = (v, max(d_stop, 0))`,
//! * speed: `max(−1, min(0, v_lim − v) / v_scale)`,
//! * comfort: `max(−1, min(0, 0.5 g − |acc|) / (0.5 g))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Observation, GRAVITY};

pub const N_POLICY_FEATURES: usize = 9;
pub const N_REWARD_FEATURES: usize = 3;

/// Half of gravity, the comfort acceleration bound in m/s².
pub const COMFORT_ACCEL: f64 = 0.5 * GRAVITY;

const D_STOP_GUARD: f64 = 0.5;
const PROXIMITY_SCALE: f64 = 30.0;
const EXCESS_SCALE: f64 = 10.0;
const CRAWL_SCALE: f64 = 2.0;
const MAX_BRAKING_DEMAND: f64 = 2.0;

pub type PolicyFeatureVector = [f64; N_POLICY_FEATURES];

/// Names of the policy feature components, in order.
pub const POLICY_FEATURE_NAMES: [&str; N_POLICY_FEATURES] = [
    "bias",
    "speed_ratio",
    "speed_excess",
    "speed_deficit",
    "proximity",
    "braking_demand",
    "proximity_speed",
    "crawl",
    "prev_action",
];

/// Braking demand: the deceleration needed to stop at the sign, as a multiple
/// of the comfort bound, clamped to `[0, 2]`.
pub fn braking_demand(velocity: f64, d_stop: f64) -> f64 {
    let d = d_stop.max(D_STOP_GUARD);
    (velocity * velocity / (2.0 * d * COMFORT_ACCEL)).clamp(0.0, MAX_BRAKING_DEMAND)
}

pub fn policy_features(obs: &Observation) -> PolicyFeatureVector {
    let v = obs.velocity;
    let v_lim = obs.speed_limit;
    let ratio = v / v_lim;
    let proximity = (-obs.d_stop.max(0.0) / PROXIMITY_SCALE).exp();
    [
        1.0,
        ratio,
        (v - v_lim).max(0.0) / EXCESS_SCALE,
        (v_lim - v).max(0.0) / v_lim,
        proximity,
        braking_demand(v, obs.d_stop),
        proximity * ratio,
        proximity * (-v / CRAWL_SCALE).exp(),
        obs.prev_action,
    ]
}

/// Ideal stopping state for the stop reward feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopTarget {
    /// m/s, always 0.
    pub velocity: f64,
    /// m before the sign.
    pub distance: f64,
    pub sigma: f64,
}

impl Default for StopTarget {
    fn default() -> Self {
        StopTarget {
            velocity: 0.0,
            distance: 2.0,
            sigma: 6.0,
        }
    }
}

impl StopTarget {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "features.sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.velocity != 0.0 {
            return Err(Error::InvalidArgument(
                "the ideal stop velocity must be 0".into(),
            ));
        }
        if !(self.distance.is_finite() && self.distance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "features.stop_distance must be >= 0, got {}",
                self.distance
            )));
        }
        Ok(())
    }
}

/// Everything the reward features need besides the observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub target: StopTarget,
    /// m/s of excess speed that saturates the speed feature.
    pub speed_scale: f64,
    /// m/s² of excess acceleration (beyond 0.5 g) that saturates the comfort feature.
    pub comfort_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            target: StopTarget::default(),
            speed_scale: 10.0,
            comfort_scale: COMFORT_ACCEL,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        for (name, value) in [
            ("features.speed_scale", self.speed_scale),
            ("features.comfort_scale", self.comfort_scale),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be > 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

pub fn reward_feature_stop(v: f64, d_stop: f64, target: &StopTarget) -> f64 {
    let dv = v - target.velocity;
    let dd = d_stop.max(0.0) - target.distance;
    let sq = dv * dv + dd * dd;
    ((-sq / (2.0 * target.sigma * target.sigma)).exp() - 1.0).clamp(-1.0, 0.0)
}

pub fn reward_feature_speed(v: f64, v_lim: f64, scale: f64) -> f64 {
    ((v_lim - v).min(0.0) / scale).max(-1.0)
}

pub fn reward_feature_comfort(acc: f64, scale: f64) -> f64 {
    ((COMFORT_ACCEL - acc.abs()).min(0.0) / scale).max(-1.0)
}

pub type RewardFeatureVector = [f64; N_REWARD_FEATURES];

pub fn reward_features(obs: &Observation, acc: f64, cfg: &RewardConfig) -> RewardFeatureVector {
    [
        reward_feature_stop(obs.velocity, obs.d_stop, &cfg.target),
        reward_feature_speed(obs.velocity, obs.speed_limit, cfg.speed_scale),
        reward_feature_comfort(acc, cfg.comfort_scale),
    ]
}

/// Tolerance on `|Σω − 1|` and on negative components.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Nonnegative reward weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RewardWeights(Vec<f64>);

impl RewardWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        check_simplex(&omega)?;
        Ok(RewardWeights(omega))
    }

    /// The weights reported for the human expert in the original study,
    /// kept as a reference point.
    pub fn reference() -> Self {
        RewardWeights(vec![0.5512, 0.1562, 0.2926])
    }

    pub fn uniform(n: usize) -> Self {
        RewardWeights(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `Σ ω_i φ_i`
    pub fn combine(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.0.len() {
            return Err(Error::ShapeMismatch {
                expected: self.0.len(),
                got: features.len(),
            });
        }
        Ok(self.0.iter().zip(features).map(|(w, f)| w * f).sum())
    }
}

impl TryFrom<Vec<f64>> for RewardWeights {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        RewardWeights::new(value)
    }
}

impl From<RewardWeights> for Vec<f64> {
    fn from(value: RewardWeights) -> Self {
        value.0
    }
}

pub fn check_simplex(omega: &[f64]) -> Result<()> {
    if omega.is_empty() {
        return Err(Error::InvalidArgument("empty weight vector".into()));
    }
    if omega.iter().any(|w| !w.is_finite() || *w < -SIMPLEX_TOL) {
        return Err(Error::InvalidArgument(format!(
            "weights must be finite and nonnegative: {omega:?}"
        )));
    }
    let sum: f64 = omega.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument(format!(
            "weights must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

/// `R(s) = ωᵀ φ(s)` on the state reached after a step. Rounding in the
/// weighted sum can leave `[-1, 0]` by an ulp; the result is clamped back.
pub fn reward(
    obs: &Observation,
    acc: f64,
    weights: &RewardWeights,
    cfg: &RewardConfig,
) -> Result<f64> {
    check_simplex(weights.as_slice())?;
    Ok(weights.combine(&reward_features(obs, acc, cfg))?.clamp(-1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(velocity: f64, d_stop: f64) -> Observation {
        Observation {
            velocity,
            d_stop,
            speed_limit: 16.667,
            prev_action: 0.0,
        }
    }

    #[test]
    fn policy_features_at_rest() {
        let f = policy_features(&obs(0.0, 300.0));
        assert_eq!(f[0], 1.0);
        assert_eq!(f[5], 0.0);
        assert!(f.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn proximity_vanishes_far_from_sign() {
        let f = policy_features(&obs(16.667, 1e4));
        assert!(f[4] < 1e-100);
        assert!(f[6] < 1e-100);
        assert!(f[7] < 1e-100);
    }

    #[test]
    fn braking_demand_interior_point() {
        let f = policy_features(&obs(10.0, 20.0));
        let expected = 100.0 / (2.0 * 20.0 * 4.905);
        assert!((f[5] - expected).abs() < 1e-12);
        assert!((f[5] - 0.5097).abs() < 1e-4);
        // guarded and clamped
        assert_eq!(braking_demand(10.0, 0.0), 2.0);
        assert_eq!(braking_demand(1.0, -3.0), braking_demand(1.0, 0.5));
    }

    #[test]
    fn stop_feature_examples() {
        let t = StopTarget::default();
        assert_eq!(reward_feature_stop(0.0, 2.0, &t), 0.0);
        assert_eq!(reward_feature_stop(0.0, 1e6, &t), -1.0);
        let v = reward_feature_stop(3.0, 2.0, &t);
        assert!((v - ((-9.0f64 / 72.0).exp() - 1.0)).abs() < 1e-12);
        assert!((v + 0.1175).abs() < 1e-4);
        // crossing clamps distance to zero
        assert_eq!(reward_feature_stop(0.0, -5.0, &t), reward_feature_stop(0.0, 0.0, &t));
    }

    #[test]
    fn speed_feature_examples() {
        assert_eq!(reward_feature_speed(10.0, 16.667, 10.0), 0.0);
        assert_eq!(reward_feature_speed(16.667, 16.667, 10.0), 0.0);
        let v = reward_feature_speed(19.444, 16.667, 10.0);
        assert!((v - (16.667 - 19.444) / 10.0).abs() < 1e-12);
        assert!((v + 0.278).abs() < 1e-3);
        assert_eq!(reward_feature_speed(100.0, 16.667, 10.0), -1.0);
    }

    #[test]
    fn comfort_feature_examples() {
        let s = COMFORT_ACCEL;
        assert_eq!(reward_feature_comfort(4.905, s), 0.0);
        assert_eq!(reward_feature_comfort(-9.81, s), -1.0);
        assert!((reward_feature_comfort(-7.3575, s) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let w = RewardWeights::reference();
        let perfect = Observation {
            velocity: 0.0,
            d_stop: 2.0,
            speed_limit: 16.667,
            prev_action: 0.0,
        };
        assert_eq!(reward(&perfect, 0.0, &w, &cfg).unwrap(), 0.0);
        assert!((w.combine(&[-1.0, -1.0, -1.0]).unwrap() + 1.0).abs() < 1e-12);
        let r = w.combine(&[0.0, -0.278, 0.0]).unwrap();
        assert!((r + 0.04342).abs() < 1e-5);
    }

    #[test]
    fn off_simplex_weights_are_rejected() {
        assert!(RewardWeights::new(vec![0.5, 0.5, 0.1]).is_err());
        assert!(RewardWeights::new(vec![1.1, -0.1, 0.0]).is_err());
        assert!(RewardWeights::new(vec![0.2, 0.3, 0.5]).is_ok());
        let parsed: std::result::Result<RewardWeights, _> = serde_json::from_str("[0.9, 0.9, 0.0]");
        assert!(parsed.is_err());
    }

    proptest! {
        #[test]
        fn reward_features_bounded(
            v in 0.0f64..120.0,
            d in -100.0f64..2000.0,
            acc in -50.0f64..50.0,
            lim in 1.0f64..40.0,
        ) {
            let o = Observation { velocity: v, d_stop: d, speed_limit: lim, prev_action: 0.0 };
            for f in reward_features(&o, acc, &RewardConfig::default()) {
                prop_assert!((-1.0..=0.0).contains(&f));
            }
        }

        #[test]
        fn reward_bounded_for_simplex_weights(
            v in 0.0f64..120.0,
            d in -100.0f64..2000.0,
            acc in -50.0f64..50.0,
            raw in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            let total: f64 = raw.iter().sum::<f64>().max(1e-12);
            let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            if w.iter().sum::<f64>() == 0.0 {
                w = vec![1.0, 0.0, 0.0];
            }
            let Ok(w) = RewardWeights::new(w) else { return Ok(()) };
            let o = Observation { velocity: v, d_stop: d, speed_limit: 16.667, prev_action: 0.0 };
            let r = reward(&o, acc, &w, &RewardConfig::default()).unwrap();
            prop_assert!((-1.0..=0.0).contains(&r));
        }

        #[test]
        fn no_penalty_leakage(v in 0.0f64..16.667, acc in -4.905f64..4.905) {
            prop_assert_eq!(reward_feature_speed(v, 16.667, 10.0), 0.0);
            prop_assert_eq!(reward_feature_comfort(acc, COMFORT_ACCEL), 0.0);
        }

        #[test]
        fn stop_feature_maximum_is_unique(v in 0.0f64..30.0, d in 0.0f64..300.0) {
            let t = StopTarget::default();
            let f = reward_feature_stop(v, d, &t);
            if v != 0.0 || d != 2.0 {
                prop_assert!(f < 0.0 || (v * v + (d - 2.0).powi(2)) < 1e-12);
            }
        }

        #[test]
        fn policy_features_finite(
            v in 0.0f64..120.0,
            d in -50.0f64..5000.0,
            prev in -1.0f64..1.0,
        ) {
            let f = policy_features(&Observation { velocity: v, d_stop: d, speed_limit: 16.667, prev_action: prev });
            prop_assert_eq!(f[0], 1.0);
            prop_assert!(f.iter().all(|x| x.is_finite()));
        }
    }
}
