use serde::{Deserialize, Serialize};

/// Exploration schedule: the Gaussian action noise keeps its initial scale
/// until the step counter passes the replay memory size, then shrinks by
/// `decay` on every step.
///
/// The counter starts at 1 and is incremented once per action. The scale is
/// used as the standard deviation of the action perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub initial: f64,
    pub decay: f64,
    pub counter: u64,
    pub memory_size: u64,
}

impl NoiseSchedule {
    pub fn new(initial: f64, decay: f64, memory_size: u64) -> Self {
        NoiseSchedule {
            initial,
            decay,
            counter: 1,
            memory_size,
        }
    }

    /// Number of decays applied so far.
    pub fn decays(&self) -> u64 {
        self.counter.saturating_sub(self.memory_size)
    }

    pub fn variance(&self) -> f64 {
        let k = self.decays();
        if k == 0 {
            self.initial
        } else {
            self.initial * self.decay.powf(k as f64)
        }
    }

    pub fn step(&mut self) {
        self.counter += 1;
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::new(3.0, 0.999, 10_000)
    }
}
