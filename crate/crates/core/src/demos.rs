//! Expert demonstrations: a scripted comfort-limited driver, the dataset
//! generator (good and deliberately bad episodes), maximum-likelihood fitting
//! of the linear-Gaussian expert policy, and the CSV dataset format.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{braking_demand, policy_features, N_POLICY_FEATURES};
use crate::policy::LinearGaussianPolicy;
use crate::rng::stream_rng;
use crate::sim::{kmh_to_mps, Env, Observation, SimState, Terminal};

/// Tracking law of the scripted expert.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    /// Comfortable deceleration of the approach profile, m/s².
    pub comfort_decel: f64,
    /// Where the expert wants to stand, m before the sign.
    pub stop_distance: f64,
    /// Cruise this far below the speed limit, m/s.
    pub margin: f64,
    /// Pedal per m/s of tracking error.
    pub gain: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        ExpertParams {
            comfort_decel: 2.5,
            stop_distance: 2.0,
            margin: 0.3,
            gain: 0.4,
        }
    }
}

impl ExpertParams {
    pub fn desired_speed(&self, obs: &Observation) -> f64 {
        let approach =
            (2.0 * self.comfort_decel * (obs.d_stop - self.stop_distance).max(0.0)).sqrt();
        (obs.speed_limit - self.margin).min(approach)
    }

    pub fn action(&self, obs: &Observation) -> f64 {
        (self.gain * (self.desired_speed(obs) - obs.velocity)).clamp(-1.0, 1.0)
    }

    fn cruise_action(&self, obs: &Observation) -> f64 {
        (self.gain * (obs.speed_limit - self.margin - obs.velocity)).clamp(-1.0, 1.0)
    }
}

/// Expert pedal command with the default tracking law.
pub fn expert_action(obs: &Observation) -> f64 {
    ExpertParams::default().action(obs)
}

/// Braking demand above which the degraded expert finally reacts.
pub const LATE_BRAKING_DEMAND: f64 = 1.3;

/// An expert that ignores the stop sign until braking becomes urgent, then
/// follows the normal tracking law (which saturates the brake).
#[derive(Debug, Clone, Default)]
struct DegradedExpert {
    params: ExpertParams,
    braking: bool,
}

impl DegradedExpert {
    fn action(&mut self, obs: &Observation) -> f64 {
        if !self.braking && braking_demand(obs.velocity, obs.d_stop) > LATE_BRAKING_DEMAND {
            self.braking = true;
        }
        if self.braking {
            self.params.action(obs)
        } else {
            self.params.cruise_action(obs)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Good,
    Bad,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Bad => "bad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    /// m from the start of the road, where `obs` was taken.
    pub position: f64,
    pub obs: Observation,
    /// Clamped pedal that was applied.
    pub action: f64,
    pub next_obs: Observation,
    /// m/s² realized over the step.
    pub realized_accel: f64,
    /// Episode status after the step.
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub label: Label,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn terminal(&self) -> Terminal {
        self.transitions
            .last()
            .map(|t| t.terminal)
            .unwrap_or(Terminal::Running)
    }

    pub fn final_obs(&self) -> Option<&Observation> {
        self.transitions.last().map(|t| &t.next_obs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub episodes: Vec<Episode>,
    /// Generator seed; unknown for sets loaded from CSV.
    pub seed: Option<u64>,
}

impl TrajectorySet {
    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }

    pub fn n_bad(&self) -> usize {
        self.episodes.iter().filter(|e| e.label == Label::Bad).count()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub n_total: usize,
    pub n_bad: usize,
    /// Standard deviation of the Gaussian jitter on expert actions.
    pub jitter: f64,
    /// Initial speeds are uniform on this range, km/h.
    pub v0_min_kmh: f64,
    pub v0_max_kmh: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            n_total: 150,
            n_bad: 30,
            jitter: 0.03,
            v0_min_kmh: 30.0,
            v0_max_kmh: 70.0,
        }
    }
}

const LABEL_STREAM: u64 = u64::MAX;

/// Rolls out `n_total` expert episodes, `n_bad` of them with late braking.
///
/// Episode `i` draws from its own random stream derived from `seed`, so the
/// set is reproducible and independent of generation order.
pub fn generate_demos(cfg: &DemoConfig, env: &Env, seed: u64) -> Result<TrajectorySet> {
    if cfg.n_bad > cfg.n_total {
        return Err(Error::InvalidArgument(format!(
            "n_bad ({}) exceeds n_total ({})",
            cfg.n_bad, cfg.n_total
        )));
    }
    if cfg.n_total == 0 {
        return Err(Error::InvalidArgument("n_total must be positive".into()));
    }
    if !(cfg.jitter.is_finite() && cfg.jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {}", cfg.jitter)));
    }
    if !(0.0..=cfg.v0_max_kmh).contains(&cfg.v0_min_kmh) {
        return Err(Error::InvalidArgument("invalid demo speed range".into()));
    }
    env.vehicle.validate()?;
    env.road.validate()?;

    let mut labels = vec![Label::Good; cfg.n_total];
    labels[..cfg.n_bad].fill(Label::Bad);
    labels.shuffle(&mut stream_rng(seed, LABEL_STREAM));

    let episodes = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = stream_rng(seed, i as u64);
            demo_episode(cfg, env, label, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TrajectorySet {
        episodes,
        seed: Some(seed),
    })
}

fn demo_episode<R: Rng>(cfg: &DemoConfig, env: &Env, label: Label, rng: &mut R) -> Result<Episode> {
    let v0 = if cfg.v0_max_kmh > cfg.v0_min_kmh {
        kmh_to_mps(rng.random_range(cfg.v0_min_kmh..cfg.v0_max_kmh))
    } else {
        kmh_to_mps(cfg.v0_min_kmh)
    };
    let jitter = (cfg.jitter > 0.0)
        .then(|| Normal::new(0.0, cfg.jitter).expect("jitter is finite and positive"));
    let mut degraded = DegradedExpert::default();
    let params = ExpertParams::default();

    let mut state = env.reset(v0)?;
    let mut transitions = Vec::new();
    loop {
        let obs = env.observe(&state);
        let base = match label {
            Label::Good => params.action(&obs),
            Label::Bad => degraded.action(&obs),
        };
        let noisy = base + jitter.map_or(0.0, |n| n.sample(rng));
        let result = env.step(&state, noisy)?;
        transitions.push(record(&state, &obs, env, &result.next_state, result.terminal));
        state = result.next_state;
        if result.terminal.is_terminal() {
            break;
        }
    }
    Ok(Episode { label, transitions })
}

fn record(
    state: &SimState,
    obs: &Observation,
    env: &Env,
    next: &SimState,
    terminal: Terminal,
) -> Transition {
    Transition {
        position: state.position,
        obs: *obs,
        action: next.prev_action,
        next_obs: env.observe(next),
        realized_accel: next.accel,
        terminal,
    }
}

/// Ridge term added to the normal equations of the MLE fit.
pub const RIDGE: f64 = 1e-6;

/// Condition number of the ridge-regularized Gram matrix beyond which the
/// feature matrix counts as rank deficient.
const MAX_CONDITION: f64 = 1e13;

/// Maximum-likelihood linear-Gaussian policy: θ solves the ridge-stabilized
/// least-squares problem of actions on policy features and σ² is the mean
/// squared residual.
pub fn fit_mle(demos: &TrajectorySet) -> Result<LinearGaussianPolicy> {
    let samples: Vec<([f64; N_POLICY_FEATURES], f64)> = demos
        .transitions()
        .map(|t| (policy_features(&t.obs), t.action))
        .collect();
    fit_linear_gaussian(&samples)
}

/// Ridge least squares on raw `(features, target)` pairs.
pub fn fit_linear_gaussian<F: AsRef<[f64]>>(samples: &[(F, f64)]) -> Result<LinearGaussianPolicy> {
    let dim = samples
        .first()
        .map(|(f, _)| f.as_ref().len())
        .ok_or_else(|| Error::DegenerateData("no samples".into()))?;
    if samples.len() < dim {
        return Err(Error::DegenerateData(format!(
            "need at least {dim} samples, got {}",
            samples.len()
        )));
    }
    // The normal equations can be badly conditioned, so sum in a canonical
    // order: the fit then does not depend on how the samples were ordered.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&i, &j| {
        let (fi, ai) = (&samples[i].0, samples[i].1);
        let (fj, aj) = (&samples[j].0, samples[j].1);
        fi.as_ref()
            .iter()
            .zip(fj.as_ref())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| ai.total_cmp(&aj))
    });
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (f, a) in order.iter().map(|&i| &samples[i]) {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        if !a.is_finite() || f.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateData("non-finite sample".into()));
        }
        for i in 0..dim {
            rhs[i] += f[i] * a;
            for j in 0..dim {
                gram[(i, j)] += f[i] * f[j];
            }
        }
    }
    for i in 0..dim {
        gram[(i, i)] += RIDGE;
    }

    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::DegenerateData(format!(
            "policy features are rank deficient (condition number {:.3e})",
            hi / lo
        )));
    }
    let theta = gram
        .cholesky()
        .ok_or_else(|| Error::DegenerateData("normal equations not positive definite".into()))?
        .solve(&rhs);

    let theta: Vec<f64> = theta.iter().copied().collect();
    let sse: f64 = samples
        .iter()
        .map(|(f, a)| {
            let pred: f64 = theta.iter().zip(f.as_ref()).map(|(t, x)| t * x).sum();
            (a - pred).powi(2)
        })
        .sum();
    let sigma = (sse / samples.len() as f64).sqrt();
    LinearGaussianPolicy::new(theta, sigma)
}

/// Distance to the sign (m) within which the policy is expected to brake.
pub const BRAKING_WINDOW: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub brakes_near_sign: bool,
    pub terminal: Terminal,
    pub final_d_stop: f64,
    pub steps: u32,
    /// The features let the policy perceive the stop sign.
    pub good_features: bool,
}

/// Deterministic rollout from 60 km/h checking that the policy brakes when
/// the sign gets close.
pub fn validate_features(policy: &LinearGaussianPolicy, env: &Env) -> Result<ValidationReport> {
    policy.validate()?;
    let mut state = env.reset(kmh_to_mps(60.0))?;
    let mut brakes_near_sign = false;
    loop {
        let obs = env.observe(&state);
        let action = policy.mean_action(&obs)?;
        if action < 0.0 && obs.d_stop < BRAKING_WINDOW {
            brakes_near_sign = true;
        }
        let result = env.step(&state, action)?;
        state = result.next_state;
        if result.terminal.is_terminal() {
            return Ok(ValidationReport {
                brakes_near_sign,
                terminal: result.terminal,
                final_d_stop: env.observe(&state).d_stop,
                steps: state.step_index,
                good_features: brakes_near_sign,
            });
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DemoRow {
    episode_id: usize,
    step: usize,
    label: Label,
    position_m: f64,
    velocity_mps: f64,
    d_stop_m: f64,
    speed_limit_mps: f64,
    prev_action: f64,
    action: f64,
    realized_accel_mps2: f64,
    terminal: Terminal,
}

pub fn write_demos_csv(path: &Path, demos: &TrajectorySet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (episode_id, ep) in demos.episodes.iter().enumerate() {
        for (step, t) in ep.transitions.iter().enumerate() {
            w.serialize(DemoRow {
                episode_id,
                step,
                label: ep.label,
                position_m: t.position,
                velocity_mps: t.obs.velocity,
                d_stop_m: t.obs.d_stop,
                speed_limit_mps: t.obs.speed_limit,
                prev_action: t.obs.prev_action,
                action: t.action,
                realized_accel_mps2: t.realized_accel,
                terminal: t.terminal,
            })
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`write_demos_csv`].
///
/// Successor observations come from the next row of the same episode; the
/// final one is reconstructed from the recorded acceleration with step `dt`.
pub fn read_demos_csv(path: &Path, dt: f64) -> Result<TrajectorySet> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut rows: Vec<DemoRow> = Vec::new();
    for row in r.deserialize() {
        rows.push(row.map_err(|e| Error::csv(path, e))?);
    }
    let mut episodes: Vec<Episode> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let id = rows[i].episode_id;
        let start = i;
        while i < rows.len() && rows[i].episode_id == id {
            if rows[i].step != i - start {
                return Err(Error::InvalidArgument(format!(
                    "{}: episode {id} has out-of-order step {}",
                    path.display(),
                    rows[i].step
                )));
            }
            i += 1;
        }
        let chunk = &rows[start..i];
        let obs_of = |row: &DemoRow| Observation {
            velocity: row.velocity_mps,
            d_stop: row.d_stop_m,
            speed_limit: row.speed_limit_mps,
            prev_action: row.prev_action,
        };
        let transitions = chunk
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let next_obs = match chunk.get(k + 1) {
                    Some(next) => obs_of(next),
                    None => {
                        let v = (row.velocity_mps + row.realized_accel_mps2 * dt).max(0.0);
                        Observation {
                            velocity: v,
                            d_stop: row.d_stop_m - dt * v,
                            speed_limit: row.speed_limit_mps,
                            prev_action: row.action,
                        }
                    }
                };
                Transition {
                    position: row.position_m,
                    obs: obs_of(row),
                    action: row.action,
                    next_obs,
                    realized_accel: row.realized_accel_mps2,
                    terminal: row.terminal,
                }
            })
            .collect();
        episodes.push(Episode {
            label: chunk[0].label,
            transitions,
        });
    }
    if episodes.is_empty() {
        return Err(Error::DegenerateData(format!("{} holds no transitions", path.display())));
    }
    Ok(TrajectorySet {
        episodes,
        seed: None,
    })
}
