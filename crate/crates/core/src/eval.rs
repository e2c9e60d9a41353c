//! Post-training evaluation on randomized initial speeds and road lengths,
//! success classification, and plot-data export.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demos::expert_action;
use crate::error::{Error, Result};
use crate::features::COMFORT_ACCEL;
use crate::policy::Policy;
use crate::rng::stream_rng;
use crate::sim::{kmh_to_mps, Env, RoadConfig, Terminal};
use crate::trainers::reward_model::RewardModel;

/// Largest acceptable distance (m) left to the sign when the car comes to rest.
pub const MAX_STOP_GAP: f64 = 5.0;
/// Largest acceptable speed above the limit, m/s.
pub const MAX_SPEED_EXCESS: f64 = 1.0;
/// Episodes that start above the limit may exceed it during this many seconds.
pub const SETTLING_TIME: f64 = 3.0;

pub const TRAJECTORIES_FILE: &str = "eval_trajectories.csv";
pub const METRICS_FILE: &str = "eval_metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_episodes: usize,
    pub v0_min_kmh: f64,
    pub v0_max_kmh: f64,
    /// Episode `i` runs on `road_lengths[i % len]`.
    pub road_lengths: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_episodes: 40,
            v0_min_kmh: 30.0,
            v0_max_kmh: 70.0,
            road_lengths: vec![200.0, 300.0, 400.0, 500.0],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 {
            return Err(Error::InvalidArgument("eval.n_episodes must be positive".into()));
        }
        if !(0.0 <= self.v0_min_kmh && self.v0_min_kmh <= self.v0_max_kmh && self.v0_max_kmh <= 110.0)
        {
            return Err(Error::InvalidArgument(format!(
                "eval initial speeds must satisfy 0 <= min <= max <= 110 km/h, got [{}, {}]",
                self.v0_min_kmh, self.v0_max_kmh
            )));
        }
        if self.road_lengths.is_empty() || self.road_lengths.iter().any(|&l| !(l > 50.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(
                "eval.road_lengths must be non-empty and every length > 50 m".into(),
            ));
        }
        Ok(())
    }
}

/// One simulator step of an evaluation episode, as persisted in
/// `eval_trajectories.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode_id: usize,
    pub step: u32,
    /// s, at the end of the step.
    pub time: f64,
    pub initial_velocity: f64,
    pub road_length: f64,
    pub speed_limit: f64,
    pub position: f64,
    pub velocity: f64,
    pub accel: f64,
    pub action: f64,
    pub d_stop: f64,
    pub reward: Option<f64>,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: usize,
    pub initial_velocity: f64,
    pub road_length: f64,
    pub terminal: Terminal,
    pub steps: u32,
    /// Distance left to the sign at rest; `None` unless the episode stopped.
    pub stop_gap: Option<f64>,
    pub crossed: bool,
    pub max_speed_excess: f64,
    pub max_abs_accel: f64,
    pub episode_return: Option<f64>,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub n_episodes: usize,
    pub n_success: usize,
    pub success_rate: f64,
    pub n_stopped: usize,
    pub n_crossed: usize,
    pub n_timed_out: usize,
    /// Over stopped episodes; `None` if there were none.
    pub mean_stop_gap: Option<f64>,
    pub worst_stop_gap: Option<f64>,
    pub mean_max_speed_excess: f64,
    pub worst_speed_excess: f64,
    pub mean_max_abs_accel: f64,
    pub worst_abs_accel: f64,
    pub mean_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub aggregate: AggregateMetrics,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Runs one deterministic episode and returns its per-step records.
pub fn run_eval_episode(
    policy: &Policy,
    env: &Env,
    initial_velocity: f64,
    episode_id: usize,
    reward: Option<&RewardModel>,
) -> Result<Vec<StepRecord>> {
    let mut state = env.reset(initial_velocity)?;
    let mut records = Vec::new();
    loop {
        let obs = env.observe(&state);
        let action = policy.mean_action(&obs)?;
        let step = env.step(&state, action)?;
        let next = step.next_state;
        let next_obs = env.observe(&next);
        records.push(StepRecord {
            episode_id,
            step: next.step_index,
            time: f64::from(next.step_index) * env.dt,
            initial_velocity,
            road_length: env.road.length,
            speed_limit: env.road.speed_limit,
            position: next.position,
            velocity: next.velocity,
            accel: next.accel,
            action: next.prev_action,
            d_stop: next_obs.d_stop,
            reward: reward.map(|r| r.step_reward(&next_obs, next.accel)),
            terminal: step.terminal,
        });
        state = next;
        if step.terminal.is_terminal() {
            return Ok(records);
        }
    }
}

/// Verdict for one episode, computed only from its records.
pub fn classify(records: &[StepRecord]) -> Result<EpisodeMetrics> {
    let last = records
        .last()
        .ok_or_else(|| Error::InvalidArgument("episode without records".into()))?;
    let first = records[0];
    let settle = first.initial_velocity > first.speed_limit;
    let max_speed_excess = records
        .iter()
        .filter(|r| !settle || r.time > SETTLING_TIME)
        .map(|r| r.velocity - r.speed_limit)
        .fold(0.0, f64::max);
    let max_abs_accel = records.iter().map(|r| r.accel.abs()).fold(0.0, f64::max);
    let stop_gap = (last.terminal == Terminal::Stopped).then_some(last.d_stop);
    let crossed = last.terminal == Terminal::CrossedSign;
    let episode_return = records
        .iter()
        .map(|r| r.reward)
        .sum::<Option<f64>>();
    let success = matches!(stop_gap, Some(g) if (0.0..=MAX_STOP_GAP).contains(&g))
        && max_speed_excess <= MAX_SPEED_EXCESS
        && max_abs_accel <= COMFORT_ACCEL;
    Ok(EpisodeMetrics {
        episode_id: first.episode_id,
        initial_velocity: first.initial_velocity,
        road_length: first.road_length,
        terminal: last.terminal,
        steps: last.step,
        stop_gap,
        crossed,
        max_speed_excess,
        max_abs_accel,
        episode_return,
        success,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(episodes: &[EpisodeMetrics]) -> AggregateMetrics {
    let n = episodes.len();
    let count = |t: Terminal| episodes.iter().filter(|e| e.terminal == t).count();
    let n_success = episodes.iter().filter(|e| e.success).count();
    let gaps = || episodes.iter().filter_map(|e| e.stop_gap);
    AggregateMetrics {
        n_episodes: n,
        n_success,
        success_rate: if n == 0 { 0.0 } else { n_success as f64 / n as f64 },
        n_stopped: count(Terminal::Stopped),
        n_crossed: count(Terminal::CrossedSign),
        n_timed_out: count(Terminal::TimeOut),
        mean_stop_gap: mean(gaps()),
        worst_stop_gap: gaps().map(|g| g.abs()).reduce(f64::max),
        mean_max_speed_excess: mean(episodes.iter().map(|e| e.max_speed_excess)).unwrap_or(0.0),
        worst_speed_excess: episodes.iter().map(|e| e.max_speed_excess).fold(0.0, f64::max),
        mean_max_abs_accel: mean(episodes.iter().map(|e| e.max_abs_accel)).unwrap_or(0.0),
        worst_abs_accel: episodes.iter().map(|e| e.max_abs_accel).fold(0.0, f64::max),
        mean_return: episodes
            .iter()
            .map(|e| e.episode_return)
            .collect::<Option<Vec<f64>>>()
            .and_then(|r| mean(r.into_iter())),
    }
}

/// Classifies every episode found in `records` (grouped by episode id, in
/// order of first appearance).
pub fn metrics_from_records(records: &[StepRecord]) -> Result<EvalMetrics> {
    let mut episodes = Vec::new();
    for chunk in records.chunk_by(|a, b| a.episode_id == b.episode_id) {
        episodes.push(classify(chunk)?);
    }
    Ok(EvalMetrics {
        aggregate: aggregate(&episodes),
        episodes,
    })
}

/// Initial speed (m/s) and road for evaluation episode `i`.
pub fn episode_setup(cfg: &EvalConfig, seed: u64, i: usize) -> (f64, RoadConfig) {
    let mut rng = stream_rng(seed, i as u64);
    let v0_kmh = if cfg.v0_max_kmh > cfg.v0_min_kmh {
        rng.random_range(cfg.v0_min_kmh..cfg.v0_max_kmh)
    } else {
        cfg.v0_min_kmh
    };
    let length = cfg.road_lengths[i % cfg.road_lengths.len()];
    (kmh_to_mps(v0_kmh), RoadConfig::with_length(length))
}

/// Deterministic evaluation of `policy`; returns all step records and the
/// metrics classified from them.
pub fn evaluate(
    policy: &Policy,
    cfg: &EvalConfig,
    env: &Env,
    reward: Option<&RewardModel>,
    seed: u64,
) -> Result<(Vec<StepRecord>, EvalMetrics)> {
    cfg.validate()?;
    policy.validate()?;
    let mut records = Vec::new();
    for i in 0..cfg.n_episodes {
        let (v0, road) = episode_setup(cfg, seed, i);
        let road = RoadConfig {
            speed_limit: env.road.speed_limit,
            ..road
        };
        let episode_env = env.clone().with_road(road);
        records.extend(run_eval_episode(policy, &episode_env, v0, i, reward)?);
    }
    let metrics = metrics_from_records(&records)?;
    Ok((records, metrics))
}

pub fn write_records_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<StepRecord>> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "run `evaluate` first".into(),
        });
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<StepRecord>, _>>()
        .map_err(|e| Error::csv(path, e))
}

pub fn write_metrics_json(path: &Path, metrics: &EvalMetrics) -> Result<()> {
    let text = serde_json::to_string_pretty(metrics).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_metrics_json(path: &Path) -> Result<EvalMetrics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Deterministic run of the scripted expert on the default road, used as the
/// reference curve in the plots.
pub fn expert_reference(env: &Env, initial_velocity: f64) -> Result<Vec<(f64, f64, f64)>> {
    let mut state = env.reset(initial_velocity)?;
    let mut out = Vec::new();
    loop {
        let step = env.step(&state, expert_action(&env.observe(&state)))?;
        state = step.next_state;
        out.push((state.position, state.velocity, state.accel));
        if step.terminal.is_terminal() {
            return Ok(out);
        }
    }
}

/// Writes distance/velocity and distance/acceleration series for every
/// evaluation episode, the overlay reference lines, and the expert reference
/// trajectory under `run_dir/plots`. Returns the written paths.
pub fn export_plot_data(run_dir: &Path, env: &Env) -> Result<Vec<PathBuf>> {
    let records = read_records_csv(&run_dir.join(TRAJECTORIES_FILE))?;
    if records.is_empty() {
        return Err(Error::MissingArtifact {
            path: run_dir.join(TRAJECTORIES_FILE),
            hint: "the evaluation produced no records".into(),
        });
    }
    let dir = run_dir.join("plots");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let velocity = dir.join("velocity.csv");
    let accel = dir.join("accel.csv");
    let lines = dir.join("reference_lines.csv");
    let expert = dir.join("expert_reference.csv");

    let mut wv = csv::Writer::from_path(&velocity).map_err(|e| Error::csv(&velocity, e))?;
    let mut wa = csv::Writer::from_path(&accel).map_err(|e| Error::csv(&accel, e))?;
    wv.write_record(["distance_from_start_m", "velocity_mps", "episode_id"])
        .map_err(|e| Error::csv(&velocity, e))?;
    wa.write_record(["distance_from_start_m", "accel_mps2", "episode_id"])
        .map_err(|e| Error::csv(&accel, e))?;
    for r in &records {
        let id = r.episode_id.to_string();
        let x = r.position.to_string();
        wv.write_record([x.as_str(), &r.velocity.to_string(), &id])
            .map_err(|e| Error::csv(&velocity, e))?;
        wa.write_record([x.as_str(), &r.accel.to_string(), &id])
            .map_err(|e| Error::csv(&accel, e))?;
    }
    wv.flush().map_err(|e| Error::io(&velocity, e))?;
    wa.flush().map_err(|e| Error::io(&accel, e))?;

    let limit = records[0].speed_limit;
    let mut wl = csv::Writer::from_path(&lines).map_err(|e| Error::csv(&lines, e))?;
    for row in [
        ["quantity", "value"],
        ["speed_limit_mps", &limit.to_string()],
        ["accel_upper_mps2", &COMFORT_ACCEL.to_string()],
        ["accel_lower_mps2", &(-COMFORT_ACCEL).to_string()],
    ] {
        wl.write_record(row).map_err(|e| Error::csv(&lines, e))?;
    }
    wl.flush().map_err(|e| Error::io(&lines, e))?;

    let mut we = csv::Writer::from_path(&expert).map_err(|e| Error::csv(&expert, e))?;
    we.write_record(["distance_from_start_m", "velocity_mps", "accel_mps2"])
        .map_err(|e| Error::csv(&expert, e))?;
    for (x, v, a) in expert_reference(env, env.road.speed_limit)? {
        we.write_record([x.to_string(), v.to_string(), a.to_string()])
            .map_err(|e| Error::csv(&expert, e))?;
    }
    we.flush().map_err(|e| Error::io(&expert, e))?;

    Ok(vec![velocity, accel, lines, expert])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Mlp};
    use crate::policy::{actor_layers, NET_INPUT_DIM};

    /// Actor whose output is the constant `tanh(b)`.
    fn constant_actor(b: f64) -> Policy {
        let layers = vec![LayerSpec::new(NET_INPUT_DIM, 1, Activation::Tanh)];
        let network = Mlp::from_params(layers, vec![0.0, 0.0, 0.0, 0.0, b]).unwrap();
        Policy::Actor { network }
    }

    #[test]
    fn full_brake_stops_far_from_the_sign() {
        let env = Env::default();
        let recs = run_eval_episode(&constant_actor(-20.0), &env, kmh_to_mps(30.0), 0, None).unwrap();
        let m = classify(&recs).unwrap();
        assert_eq!(m.terminal, Terminal::Stopped);
        assert!(m.stop_gap.unwrap() > 250.0);
        assert!(!m.success);
    }

    #[test]
    fn full_pedal_crosses() {
        let env = Env::default();
        let recs = run_eval_episode(&constant_actor(20.0), &env, kmh_to_mps(50.0), 0, None).unwrap();
        let m = classify(&recs).unwrap();
        assert!(m.crossed);
        assert!(!m.success);
    }

    #[test]
    fn expert_stops_in_the_target_zone() {
        // The proportional tracking law brakes harder than 0.5 g when it starts
        // above the limit and in the last metres before the sign, so only the
        // stop and speed parts of the verdict are checked.
        let env = Env::default();
        let cfg = EvalConfig::default();
        for i in 0..cfg.n_episodes {
            let (v0, road) = episode_setup(&cfg, 3, i);
            let env = env.clone().with_road(road);
            let mut state = env.reset(v0).unwrap();
            let mut recs = Vec::new();
            loop {
                let step = env.step(&state, expert_action(&env.observe(&state))).unwrap();
                state = step.next_state;
                recs.push(StepRecord {
                    episode_id: i,
                    step: state.step_index,
                    time: f64::from(state.step_index) * env.dt,
                    initial_velocity: v0,
                    road_length: env.road.length,
                    speed_limit: env.road.speed_limit,
                    position: state.position,
                    velocity: state.velocity,
                    accel: state.accel,
                    action: state.prev_action,
                    d_stop: env.observe(&state).d_stop,
                    reward: None,
                    terminal: step.terminal,
                });
                if step.terminal.is_terminal() {
                    break;
                }
            }
            let m = classify(&recs).unwrap();
            let gap = m.stop_gap.unwrap_or(f64::NAN);
            assert!((0.0..=MAX_STOP_GAP).contains(&gap), "episode {i}: {m:?}");
            assert!(m.max_speed_excess <= MAX_SPEED_EXCESS, "episode {i}: {m:?}");
        }
    }

    #[test]
    fn settling_window_only_applies_above_the_limit() {
        let rec = |t: f64, v: f64, v0: f64| StepRecord {
            episode_id: 0,
            step: (t * 10.0).round() as u32,
            time: t,
            initial_velocity: v0,
            road_length: 300.0,
            speed_limit: 16.667,
            position: 0.0,
            velocity: v,
            accel: 0.0,
            action: 0.0,
            d_stop: 3.0,
            reward: None,
            terminal: Terminal::Running,
        };
        let mut fast = vec![rec(1.0, 19.0, 19.4), rec(3.5, 17.0, 19.4)];
        fast.last_mut().unwrap().terminal = Terminal::Stopped;
        let m = classify(&fast).unwrap();
        assert!((m.max_speed_excess - (17.0 - 16.667)).abs() < 1e-12);

        let mut slow = vec![rec(1.0, 19.0, 15.0), rec(3.5, 17.0, 15.0)];
        slow.last_mut().unwrap().terminal = Terminal::Stopped;
        let m = classify(&slow).unwrap();
        assert!((m.max_speed_excess - (19.0 - 16.667)).abs() < 1e-12);
        assert!(!m.success);
    }

    #[test]
    fn aggregate_recomputes_from_saved_records() {
        let env = Env::default();
        let actor = Mlp::random(actor_layers(8), 1.0, &mut stream_rng(1, 1)).unwrap();
        let policy = Policy::Actor { network: actor };
        let cfg = EvalConfig {
            n_episodes: 6,
            ..EvalConfig::default()
        };
        let (records, metrics) = evaluate(&policy, &cfg, &env, None, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TRAJECTORIES_FILE);
        write_records_csv(&path, &records).unwrap();
        let back = read_records_csv(&path).unwrap();
        assert_eq!(back, records);
        assert_eq!(metrics_from_records(&back).unwrap(), metrics);
    }

    #[test]
    fn plot_export_row_counts_and_reference_lines() {
        let env = Env::default();
        let dir = tempfile::tempdir().unwrap();
        assert!(export_plot_data(dir.path(), &env).is_err());

        let recs = run_eval_episode(&constant_actor(-20.0), &env, 10.0, 0, None).unwrap();
        write_records_csv(&dir.path().join(TRAJECTORIES_FILE), &recs).unwrap();
        let files = export_plot_data(dir.path(), &env).unwrap();
        for f in &files[..2] {
            let n = csv::Reader::from_path(f).unwrap().records().count();
            assert_eq!(n, recs.len());
        }
        let lines = fs::read_to_string(&files[2]).unwrap();
        assert!(lines.contains("16.667"));
        assert!(lines.contains("4.905"));
        assert!(lines.contains("-4.905"));
    }
}
