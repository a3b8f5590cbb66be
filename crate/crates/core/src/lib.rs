//! Multi-scene reinforcement-learning laboratory for sparse-attention dynamic
//! value estimation.

pub mod analysis;
pub mod cli;
pub mod dvehead;
pub mod envkit;
pub mod netcore;
pub mod rng;
pub mod trainer;
