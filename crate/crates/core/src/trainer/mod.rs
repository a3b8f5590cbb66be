//! PPO over a multi-scene pool with an optional dynamic value head and
//! confusion-contribution sparsity loss.

mod config;
mod gae;
mod plateau;
mod ppo;
mod rollout;
mod train;

use thiserror::Error;

pub use config::{CriticMode, TrainConfig};
pub use gae::{compute_gae, normalize, AdvantageEstimate};
pub use plateau::{ols_slope, plateau_detector};
pub use ppo::{clipped_surrogate, minibatch_loss, ppo_update, ppo_update_with_targets, prepare_targets, LossReport, LossVars, Targets};
pub use rollout::{collect_rollouts, run_episode, ActionSelection, RolloutBatch, Trajectory};
pub use train::{cc_weight_at, log_csv, train, train_with, write_log_csv, LogRow, TrainReport};

pub(crate) use rollout::eval_step;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("LENGTH_MISMATCH: {rewards} rewards vs {values} values")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("INSUFFICIENT_HISTORY: have {have} points, need {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("NON_FINITE_LOSS at update {update}")]
    NonFiniteLoss { update: usize },
    #[error(transparent)]
    Net(#[from] crate::netcore::NetError),
    #[error(transparent)]
    Dve(#[from] crate::dvehead::DveError),
    #[error(transparent)]
    Env(#[from] crate::envkit::EnvError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
