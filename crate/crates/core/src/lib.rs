pub mod arrivals;
pub mod cli;
pub mod config;
pub mod error;
pub mod expansions;
pub mod harness;
pub mod markov_env;
pub mod queue_sim;
pub mod sampling;

pub use error::{Error, Result};
