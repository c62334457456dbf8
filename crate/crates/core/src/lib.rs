//! Text-level ASR error simulation with confidence-score prediction and
//! out-of-vocabulary mapping, realism evaluation of the simulated output,
//! and clarification-policy learning on top of the simulator.

pub mod alignment;
pub mod catalog;
pub mod cli;
pub mod confusion;
pub mod corpus;
pub mod dialog_env;
pub mod discriminator;
pub mod error;
pub mod evalstats;
pub mod learners;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod score_model;

pub use error::{Error, Result};
