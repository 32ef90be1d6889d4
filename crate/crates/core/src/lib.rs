//! Value prediction networks on the Collect gridworld.
//!
//! A value prediction network learns an abstract-state dynamics model
//! (encoding, value, outcome, transition modules) and plans by unrolling the
//! composed core module a few steps ahead, backing up value estimates along
//! the best option sequence. This crate contains everything below the CLI:
//!
//! * [`netcore`] — tensors, the differentiable layer set, reverse-mode
//!   gradients, Adam, checkpoints, and a finite-difference oracle.
//! * [`gridworld`] — the Collect domain (deterministic and stochastic).
//! * [`oracles`] — greedy and shortest-path reference policies.
//! * [`model`] — the VPN modules plus DQN and OPN baselines.
//! * [`planner`] — d-step expansion and uniform-average backup with
//!   b-best pruning.
//! * [`trainer`] — n-step Q-learning with k-step prediction losses,
//!   planner-based targets, and random-policy outcome replay.
//! * [`verify`] — the property suite behind the CLI `verify` verb.

pub mod config;
pub mod error;
pub mod gridworld;
pub mod netcore;
pub mod oracles;
pub mod rng;

pub use config::{ModelKind, RunSetup, TrainConfig};
pub use error::{Error, Result};
pub use gridworld::{GridConfig, GridState, Observation, OptionId, OptionOutcome};
pub use netcore::{AdamState, Evaluator, Exec, ParamId, ParamStore, Real, Tape, Tensor};
