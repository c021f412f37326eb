//! Latent relation-aware graph networks with reinforcement-learned age
//! estimation on imbalanced data.

pub mod attention;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod rl;
pub mod walk;

pub use error::{Error, Result};
