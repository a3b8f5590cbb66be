//! Reverse-mode differentiable kernels for the actor-critic networks.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod net;
mod params;
mod tape;

use thiserror::Error;

pub use adam::Adam;
pub use gradcheck::{grad_check, grad_check_with_fault, rel_err, GradCheckReport, FD_STEP};
pub use net::{forward, CriticSpec, CriticVars, HeadOutputs, NetSpec, RecurrentState, RecurrentVars};
pub use params::{ParamShape, ParamVector};
pub use tape::{sigmoid, softmax, RuleKind, Tape, Var};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite network input")]
    NonFiniteInput,
    #[error("non-finite gradient")]
    NonFiniteGrad,
    #[error("tape already consumed by a backward pass")]
    TapeReused,
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
