//! Reward-model evaluation laboratory.
//!
//! A synthetic world of prompts and candidate responses carries a golden reward.
//! Proxy reward models are either noisy copies of it or Bradley-Terry fits on
//! label-flipped preference data. The crate measures how well offline metrics of
//! a proxy predict the downstream cost of optimizing against it.

pub mod annotator;
pub mod error;
pub mod goodhart;
pub mod harness;
pub mod metrics;
pub mod policyopt;
pub mod rmtrain;
pub mod rng;
pub mod synthworld;

pub use error::{Error, Result};
pub use rmtrain::RewardModel;
pub use synthworld::{generate_world, ScoreTable, World, WorldSpec};
