pub mod agents;
pub mod error;
pub mod experiments;
mod par;
pub mod policy_tree;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod tree_analysis;

pub use error::{Error, Result};
