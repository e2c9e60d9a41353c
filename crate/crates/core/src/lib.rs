//! Apprenticeship learning for a longitudinal driving task.
//!
//! A scripted expert produces demonstrations of approaching a stop sign under
//! a speed limit. A linear-Gaussian policy is fitted to them, gradient inverse
//! reinforcement learning recovers the weights of a linear reward over three
//! hand-designed features, and REINFORCE or DDPG then optimizes that reward.
//!
//! ```
//! use apprentice_drive::sim::Env;
//!
//! let env = Env::default();
//! let state = env.reset(16.667).unwrap();
//! let next = env.step(&state, -1.0).unwrap();
//! assert!(next.next_state.velocity < 16.667);
//! ```

pub mod config;
pub mod demos;
pub mod error;
pub mod eval;
pub mod features;
pub mod girl;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod stages;
pub mod trainers;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/demonstrations.md")]
    mod demonstrations {}
    #[doc = include_str!("../../../book/src/reward-recovery.md")]
    mod reward_recovery {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
