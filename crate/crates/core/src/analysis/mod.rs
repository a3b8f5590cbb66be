//! Exact oracles and statistics: per-scene policy values, value-mixture
//! fitting, enumeration checks of baseline invariance and minimality, the
//! variance decomposition and attention-cluster exports.

mod clusters;
mod enumerate;
mod finetune;
mod gmm;
mod values;

use thiserror::Error;

pub use clusters::{cluster_csv, cluster_shares, export_cluster_assignments, family_majority, ClusterRow, DELTA_AMBIGUOUS};
pub use enumerate::{
    baseline_variance_scan, policy_gradient_enumerate, stock_toy_scenes, toy_policy, tree_oracle, tree_samples,
    variance_decomposition, BaselineScan, EnumTree, TreeEval, TreeNode, VarSample, VarianceReport, ENUMERATION_BUDGET,
    STOCK_TOY_SEED,
};
pub use finetune::{finetune_scene_critic, FinetuneConfig, FinetuneResult};
pub use gmm::{aic, fit_gmm, sample_mixture, select_clusters, var_floor, AicPoint, GmmModel, EM_RESTARTS};
pub use values::{
    exact_state_values, AlwaysRight, NetPolicy, Policy, ScenePolicyValues, StateGraph, Transition, UniformPolicy,
    MAX_SWEEPS,
};

use crate::trainer::LogRow;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("NO_CONVERGENCE after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("TOO_FEW_SAMPLES: have {have}, need {need}")]
    TooFewSamples { have: usize, need: usize },
    #[error("ENUMERATION_BUDGET_EXCEEDED: more than {budget} trajectories")]
    EnumerationBudgetExceeded { budget: usize },
    #[error("MISSING_ORACLE: no exact value for a sampled state")]
    MissingOracle,
    #[error("ZERO_LENGTH: mean episode length is zero")]
    ZeroLength,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Net(#[from] crate::netcore::NetError),
    #[error(transparent)]
    Env(#[from] crate::envkit::EnvError),
    #[error(transparent)]
    Dve(#[from] crate::dvehead::DveError),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
}

/// Mean reward divided by mean episode length over `rows`.
pub fn navigation_efficiency(rows: &[LogRow]) -> Result<f64, AnalysisError> {
    let n = rows.len() as f64;
    let reward = rows.iter().map(|r| r.mean_reward).sum::<f64>() / n;
    let len = rows.iter().map(|r| r.mean_ep_len).sum::<f64>() / n;
    efficiency(reward, len)
}

pub fn efficiency(mean_reward: f64, mean_ep_len: f64) -> Result<f64, AnalysisError> {
    if !(mean_ep_len > 0.0) {
        return Err(AnalysisError::ZeroLength);
    }
    Ok(mean_reward / mean_ep_len)
}
