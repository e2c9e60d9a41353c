//! Longitudinal point-mass vehicle on a straight road that ends at a stop sign.
//!
//! The vehicle is driven by one merged pedal command in `[-1, 1]`: positive
//! values apply traction, negative values apply the brake. Motion follows a
//! force balance
//!
//! ```text
//! m dv/dt = pedal⁺ F_trac − pedal⁻ F_brake − c_d v² − F_roll
//! ```
//!
//! integrated with semi-implicit Euler. The car has no reverse gear, so the
//! velocity is clamped at zero and the position never decreases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;

/// Default integration step in seconds.
pub const DEFAULT_DT: f64 = 0.1;

/// Episodes are cut after this many steps.
pub const MAX_EPISODE_STEPS: u32 = 900;

/// Below this speed (m/s) the vehicle counts as slow.
pub const STOP_SPEED: f64 = 0.05;

/// Consecutive slow steps that make an episode end as [`Terminal::Stopped`].
pub const STOP_HOLD_STEPS: u32 = 3;

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// N
    pub max_traction_force: f64,
    /// N
    pub max_brake_force: f64,
    /// Lumped `0.5 ρ C_d A`, N·s²/m².
    pub drag_coeff: f64,
    /// N, only while moving (or while traction is trying to move the car).
    pub rolling_resist_force: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass: 1498.0,
            max_traction_force: 4500.0,
            max_brake_force: 12000.0,
            drag_coeff: 0.42,
            rolling_resist_force: 176.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mass", self.mass),
            ("max_traction_force", self.max_traction_force),
            ("max_brake_force", self.max_brake_force),
            ("drag_coeff", self.drag_coeff),
            ("rolling_resist_force", self.rolling_resist_force),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "vehicle.{name} must be finite and > 0, got {value}"
                )));
            }
        }
        if self.max_brake_force / self.mass <= 0.5 * GRAVITY {
            return Err(Error::InvalidArgument(
                "vehicle.max_brake_force / vehicle.mass must exceed 0.5 g".into(),
            ));
        }
        Ok(())
    }

    /// Drag-limited speed reached with the pedal held at +1.
    pub fn top_speed(&self) -> f64 {
        ((self.max_traction_force - self.rolling_resist_force) / self.drag_coeff).sqrt()
    }

    /// Upper bound on the realized |acceleration| of any trajectory.
    pub fn accel_bound(&self) -> f64 {
        let v_max = self.top_speed();
        self.max_traction_force.max(self.max_brake_force) / self.mass
            + self.drag_coeff * v_max * v_max / self.mass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadConfig {
    /// m; the stop sign stands at `position == length`.
    pub length: f64,
    /// m/s
    pub speed_limit: f64,
    pub friction: f64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        RoadConfig {
            length: 300.0,
            speed_limit: 16.667,
            friction: 1.0,
        }
    }
}

impl RoadConfig {
    pub fn with_length(length: f64) -> Self {
        RoadConfig {
            length,
            ..RoadConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "road.length must be > 0, got {}",
                self.length
            )));
        }
        if !(self.speed_limit.is_finite() && self.speed_limit > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "road.speed_limit must be > 0, got {}",
                self.speed_limit
            )));
        }
        if self.friction != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "road.friction is fixed at 1.0, got {}",
                self.friction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// m from the start of the road.
    pub position: f64,
    /// m/s, never negative.
    pub velocity: f64,
    /// m/s², realized over the last step.
    pub accel: f64,
    /// Clamped pedal applied on the last step.
    pub prev_action: f64,
    pub step_index: u32,
    /// Consecutive steps spent below [`STOP_SPEED`].
    pub slow_steps: u32,
}

impl SimState {
    fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.velocity.is_finite()
            && self.accel.is_finite()
            && self.prev_action.is_finite()
    }
}

/// Merged pedal/brake command. Negative brakes, positive accelerates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub pedal: f64,
}

impl Action {
    pub fn new(pedal: f64) -> Self {
        Action { pedal }
    }

    pub fn clamped(self) -> Self {
        Action {
            pedal: self.pedal.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Running,
    Stopped,
    CrossedSign,
    TimeOut,
}

impl Terminal {
    pub fn is_terminal(self) -> bool {
        self != Terminal::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Running => "running",
            Terminal::Stopped => "stopped",
            Terminal::CrossedSign => "crossed_sign",
            Terminal::TimeOut => "time_out",
        }
    }
}

impl std::str::FromStr for Terminal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "running" => Ok(Terminal::Running),
            "stopped" => Ok(Terminal::Stopped),
            "crossed_sign" => Ok(Terminal::CrossedSign),
            "time_out" => Ok(Terminal::TimeOut),
            other => Err(Error::InvalidArgument(format!("unknown terminal kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: SimState,
    pub terminal: Terminal,
    /// Position is past the stop sign.
    pub overshoot: bool,
}

/// What the driver (or a policy) sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub velocity: f64,
    /// Remaining distance to the sign; negative once crossed.
    pub d_stop: f64,
    pub speed_limit: f64,
    pub prev_action: f64,
}

pub fn reset(road: &RoadConfig, initial_velocity: f64) -> Result<SimState> {
    road.validate()?;
    if !initial_velocity.is_finite() || !(0.0..=30.0).contains(&initial_velocity) {
        return Err(Error::InvalidArgument(format!(
            "initial velocity must lie in [0, 30] m/s, got {initial_velocity}"
        )));
    }
    Ok(SimState {
        position: 0.0,
        velocity: initial_velocity,
        accel: 0.0,
        prev_action: 0.0,
        step_index: 0,
        slow_steps: 0,
    })
}

pub fn step(
    state: &SimState,
    action: Action,
    params: &VehicleParams,
    road: &RoadConfig,
    dt: f64,
) -> Result<StepResult> {
    step_with_horizon(state, action, params, road, dt, MAX_EPISODE_STEPS)
}

pub fn step_with_horizon(
    state: &SimState,
    action: Action,
    params: &VehicleParams,
    road: &RoadConfig,
    dt: f64,
    max_steps: u32,
) -> Result<StepResult> {
    if !action.pedal.is_finite() {
        return Err(Error::Fault(format!("non-finite action {}", action.pedal)));
    }
    if !state.is_finite() {
        return Err(Error::Fault(format!("non-finite state {state:?}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }

    let pedal = action.clamped().pedal;
    let v = state.velocity;
    let traction = pedal.max(0.0) * params.max_traction_force;
    let brake = (-pedal).max(0.0) * params.max_brake_force;
    let drag = params.drag_coeff * v * v;
    // At rest, rolling resistance only opposes an attempt to move.
    let rolling = if v > 0.0 || traction > 0.0 {
        params.rolling_resist_force
    } else {
        0.0
    };
    let net_force = traction - brake - drag - rolling;

    let v_next = (v + dt * net_force / params.mass).max(0.0);
    let position = state.position + dt * v_next;
    let accel = (v_next - v) / dt;

    let slow_steps = if v_next < STOP_SPEED {
        state.slow_steps + 1
    } else {
        0
    };
    let next_state = SimState {
        position,
        velocity: v_next,
        accel,
        prev_action: pedal,
        step_index: state.step_index + 1,
        slow_steps,
    };
    if !next_state.is_finite() {
        return Err(Error::Fault(format!("non-finite state after step {next_state:?}")));
    }

    let overshoot = position > road.length;
    let terminal = if overshoot {
        Terminal::CrossedSign
    } else if slow_steps >= STOP_HOLD_STEPS {
        Terminal::Stopped
    } else if next_state.step_index >= max_steps {
        Terminal::TimeOut
    } else {
        Terminal::Running
    };

    Ok(StepResult {
        next_state,
        terminal,
        overshoot,
    })
}

pub fn observe(state: &SimState, road: &RoadConfig) -> Observation {
    Observation {
        velocity: state.velocity,
        d_stop: road.length - state.position,
        speed_limit: road.speed_limit,
        prev_action: state.prev_action,
    }
}

/// Bundles vehicle, road and integration settings for rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Env {
    pub vehicle: VehicleParams,
    pub road: RoadConfig,
    pub dt: f64,
    pub max_steps: u32,
}

impl Default for Env {
    fn default() -> Self {
        Env {
            vehicle: VehicleParams::default(),
            road: RoadConfig::default(),
            dt: DEFAULT_DT,
            max_steps: MAX_EPISODE_STEPS,
        }
    }
}

impl Env {
    pub fn with_road(self, road: RoadConfig) -> Self {
        Env { road, ..self }
    }

    pub fn reset(&self, initial_velocity: f64) -> Result<SimState> {
        reset(&self.road, initial_velocity)
    }

    pub fn step(&self, state: &SimState, pedal: f64) -> Result<StepResult> {
        step_with_horizon(
            state,
            Action::new(pedal),
            &self.vehicle,
            &self.road,
            self.dt,
            self.max_steps,
        )
    }

    pub fn observe(&self, state: &SimState) -> Observation {
        observe(state, &self.road)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env() -> Env {
        Env::default()
    }

    #[test]
    fn reset_at_sixty_kmh() {
        let s = reset(&RoadConfig::default(), 16.667).unwrap();
        assert_eq!(s.position, 0.0);
        assert_eq!(s.velocity, 16.667);
        assert_eq!(s.accel, 0.0);
        assert_eq!(s.prev_action, 0.0);
        assert_eq!(s.step_index, 0);
    }

    #[test]
    fn reset_at_rest_and_rejects_negative() {
        let s = reset(&RoadConfig::default(), 0.0).unwrap();
        assert_eq!(s.velocity, 0.0);
        assert!(matches!(
            reset(&RoadConfig::default(), -1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(reset(&RoadConfig::default(), 31.0).is_err());
    }

    #[test]
    fn rest_with_zero_pedal_stays_at_rest() {
        let e = env();
        let s = e.reset(0.0).unwrap();
        let r = e.step(&s, 0.0).unwrap();
        assert_eq!(r.next_state.velocity, 0.0);
        assert_eq!(r.next_state.position, 0.0);
        let r = e.step(&s, -1.0).unwrap();
        assert_eq!(r.next_state.velocity, 0.0);
    }

    #[test]
    fn full_traction_from_rest() {
        let e = env();
        let s = e.reset(0.0).unwrap();
        let r = e.step(&s, 1.0).unwrap();
        let expected = 0.1 * (4500.0 - 176.0) / 1498.0;
        assert!((r.next_state.velocity - expected).abs() < 1e-12);
        assert!((r.next_state.velocity - 0.2886).abs() < 1e-4);
    }

    #[test]
    fn full_brake_at_sixty_exceeds_half_g() {
        let e = env();
        let s = e.reset(16.667).unwrap();
        let r = e.step(&s, -1.0).unwrap();
        let expected = (12000.0 + 0.42 * 16.667 * 16.667 + 176.0) / 1498.0;
        assert!((-r.next_state.accel - expected).abs() < 1e-9);
        assert!((-r.next_state.accel - 8.20).abs() < 0.01);
        assert!(-r.next_state.accel > 0.5 * GRAVITY);
    }

    #[test]
    fn action_is_clamped() {
        let e = env();
        let s = e.reset(10.0).unwrap();
        let a = e.step(&s, 5.0).unwrap();
        let b = e.step(&s, 1.0).unwrap();
        assert_eq!(a.next_state, b.next_state);
        assert_eq!(a.next_state.prev_action, 1.0);
    }

    #[test]
    fn non_finite_action_is_a_fault() {
        let e = env();
        let s = e.reset(10.0).unwrap();
        assert!(matches!(e.step(&s, f64::NAN), Err(Error::Fault(_))));
        let mut bad = s;
        bad.velocity = f64::INFINITY;
        assert!(matches!(e.step(&bad, 0.0), Err(Error::Fault(_))));
    }

    #[test]
    fn observe_distance_to_sign() {
        let road = RoadConfig::default();
        let mut s = reset(&road, 0.0).unwrap();
        assert_eq!(observe(&s, &road).d_stop, 300.0);
        s.position = 300.0;
        assert_eq!(observe(&s, &road).d_stop, 0.0);
        s.position = 305.0;
        assert_eq!(observe(&s, &road).d_stop, -5.0);
    }

    #[test]
    fn stopped_needs_three_slow_steps() {
        let e = env();
        let s = e.reset(0.0).unwrap();
        let r1 = e.step(&s, 0.0).unwrap();
        assert_eq!(r1.terminal, Terminal::Running);
        let r2 = e.step(&r1.next_state, 0.0).unwrap();
        assert_eq!(r2.terminal, Terminal::Running);
        let r3 = e.step(&r2.next_state, 0.0).unwrap();
        assert_eq!(r3.terminal, Terminal::Stopped);
    }

    #[test]
    fn full_pedal_crosses_sign() {
        let e = env();
        let mut s = e.reset(16.667).unwrap();
        loop {
            let r = e.step(&s, 1.0).unwrap();
            s = r.next_state;
            if r.terminal.is_terminal() {
                assert_eq!(r.terminal, Terminal::CrossedSign);
                assert!(r.overshoot);
                break;
            }
        }
    }

    #[test]
    fn timeout_after_horizon() {
        let e = Env {
            max_steps: 5,
            ..Env::default()
        };
        let mut s = e.reset(1.0).unwrap();
        let mut last = Terminal::Running;
        for _ in 0..5 {
            let r = e.step(&s, 0.05).unwrap();
            s = r.next_state;
            last = r.terminal;
        }
        assert_eq!(last, Terminal::TimeOut);
    }

    #[test]
    fn default_params_are_valid() {
        VehicleParams::default().validate().unwrap();
        RoadConfig::default().validate().unwrap();
        let weak = VehicleParams {
            max_brake_force: 5000.0,
            ..VehicleParams::default()
        };
        assert!(weak.validate().is_err());
    }

    proptest! {
        #[test]
        fn velocity_nonnegative_and_position_monotone(
            v0 in 0.0f64..30.0,
            actions in proptest::collection::vec(-3.0f64..3.0, 1..300),
        ) {
            let e = env();
            let bound = e.vehicle.accel_bound();
            let mut s = e.reset(v0).unwrap();
            for a in actions {
                let r = e.step(&s, a).unwrap();
                prop_assert!(r.next_state.velocity >= 0.0);
                prop_assert!(r.next_state.position >= s.position);
                prop_assert!(r.next_state.accel.abs() <= bound);
                prop_assert!((-1.0..=1.0).contains(&r.next_state.prev_action));
                let crossed = r.terminal == Terminal::CrossedSign;
                prop_assert_eq!(crossed, r.next_state.position > e.road.length);
                s = r.next_state;
                if r.terminal.is_terminal() {
                    break;
                }
            }
        }

        #[test]
        fn full_pedal_monotone_and_bounded(v0 in 0.0f64..30.0) {
            let e = Env { road: RoadConfig::with_length(1e7), ..Env::default() };
            let top = e.vehicle.top_speed();
            let mut s = e.reset(v0.min(top)).unwrap();
            for _ in 0..900 {
                let r = e.step(&s, 1.0).unwrap();
                prop_assert!(r.next_state.velocity >= s.velocity);
                prop_assert!(r.next_state.velocity <= top + 1e-9);
                s = r.next_state;
            }
        }

        #[test]
        fn deterministic(v0 in 0.0f64..30.0, actions in proptest::collection::vec(-1.0f64..1.0, 1..50)) {
            let e = env();
            let run = || {
                let mut s = e.reset(v0).unwrap();
                let mut out = Vec::new();
                for &a in &actions {
                    s = e.step(&s, a).unwrap().next_state;
                    out.push((s.position.to_bits(), s.velocity.to_bits(), s.accel.to_bits()));
                }
                out
            };
            prop_assert_eq!(run(), run());
        }
    }
}
