//! Dynamic value estimation head and its sparsity machinery.
//!
//! The dynamic critic predicts `N_b` value hypotheses `mu_i(s)` and blends
//! them with softmax attention `alpha_i`, giving `v_hat = sum_i alpha_i mu_i`.
//! Confusion `delta = 1 / (N_b * sum_i alpha_i^2)` is 1 at uniform attention
//! and `1/N_b` at one-hot attention. Contribution
//! `rho_i = mean_t delta_t * alpha_{i,t}` measures how much each hypothesis is
//! used over a trajectory. The confusion-contribution loss
//! `k1 * E[ln delta] + k2 * E_traj[ln sum_i rho_i^2]` rewards attention that is
//! sharp at every step yet spread across hypotheses over a trajectory.
//!
//! Every quantity has a plain-value form and a tape form; the tape forms are
//! the ones training differentiates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::{softmax, Tape, Var};

#[derive(Debug, Error, PartialEq)]
pub enum DveError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("attention weights do not lie on the simplex (sum {0})")]
    NotSimplex(f64),
    #[error("empty attention trace")]
    EmptyTrace,
    #[error("empty trace batch")]
    EmptyBatch,
    #[error("invalid sparsity config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DveOutput {
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    pub v_hat: f64,
    pub delta: f64,
}

pub fn dve_forward(mu: &[f64], attention_logits: &[f64]) -> Result<DveOutput, DveError> {
    if mu.len() != attention_logits.len() {
        return Err(DveError::DimMismatch(mu.len(), attention_logits.len()));
    }
    if mu.is_empty() {
        return Err(DveError::DimMismatch(0, 0));
    }
    let alpha = softmax(attention_logits);
    let v_hat = alpha.iter().zip(mu).map(|(a, m)| a * m).sum();
    let delta = confusion(&alpha)?;
    Ok(DveOutput { mu: mu.to_vec(), alpha, v_hat, delta })
}

pub fn confusion(alpha: &[f64]) -> Result<f64, DveError> {
    let sum: f64 = alpha.iter().sum();
    if alpha.is_empty() || (sum - 1.0).abs() > 1e-6 || alpha.iter().any(|&a| a < 0.0) {
        return Err(DveError::NotSimplex(sum));
    }
    let sq: f64 = alpha.iter().map(|a| a * a).sum();
    Ok(1.0 / (alpha.len() as f64 * sq))
}

/// Per-step attention and confusion along one trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub alphas: Vec<Vec<f64>>,
    pub deltas: Vec<f64>,
}

impl AttentionTrace {
    pub fn from_alphas(alphas: Vec<Vec<f64>>) -> Result<Self, DveError> {
        let deltas = alphas.iter().map(|a| confusion(a)).collect::<Result<_, _>>()?;
        Ok(AttentionTrace { alphas, deltas })
    }

    pub fn push(&mut self, alpha: Vec<f64>, delta: f64) {
        self.alphas.push(alpha);
        self.deltas.push(delta);
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn n_b(&self) -> usize {
        self.alphas.first().map_or(0, Vec::len)
    }

    pub fn mean_delta(&self) -> f64 {
        self.deltas.iter().sum::<f64>() / self.deltas.len() as f64
    }
}

pub fn contribution(trace: &AttentionTrace) -> Result<Vec<f64>, DveError> {
    if trace.is_empty() {
        return Err(DveError::EmptyTrace);
    }
    let n_b = trace.n_b();
    let mut rho = vec![0.0; n_b];
    for (alpha, &delta) in trace.alphas.iter().zip(&trace.deltas) {
        if alpha.len() != n_b {
            return Err(DveError::DimMismatch(alpha.len(), n_b));
        }
        for (r, a) in rho.iter_mut().zip(alpha) {
            *r += delta * a;
        }
    }
    let t = trace.len() as f64;
    Ok(rho.into_iter().map(|r| r / t).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CcMode {
    /// Loss active from the first update.
    Class1,
    /// Loss held at zero until exploration has plateaued.
    Class2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcConfig {
    pub k1: f64,
    pub k2: f64,
    pub epsilon_log: f64,
    pub mode: CcMode,
    /// Minimum environment steps before a CLASS2 schedule may switch on.
    pub pretrain_steps: u64,
}

impl Default for CcConfig {
    fn default() -> Self {
        CcConfig { k1: 0.1, k2: 1.0, epsilon_log: 1e-8, mode: CcMode::Class1, pretrain_steps: 0 }
    }
}

impl CcConfig {
    pub fn validate(&self) -> Result<(), DveError> {
        if !(self.k1 >= 0.0 && self.k2 >= 0.0) {
            return Err(DveError::InvalidConfig("k1 and k2 must be non-negative".into()));
        }
        if !(self.epsilon_log > 0.0 && self.epsilon_log <= 1e-6) {
            return Err(DveError::InvalidConfig(format!("epsilon_log {} outside (0, 1e-6]", self.epsilon_log)));
        }
        Ok(())
    }

    pub fn is_null(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0
    }
}

/// Both weighted terms of the confusion-contribution loss and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcLoss {
    pub total: f64,
    pub confusion_term: f64,
    pub contribution_term: f64,
}

pub fn cc_loss(traces: &[AttentionTrace], cfg: &CcConfig) -> Result<CcLoss, DveError> {
    if traces.is_empty() {
        return Err(DveError::EmptyBatch);
    }
    let mut log_delta = 0.0;
    let mut steps = 0usize;
    let mut log_rho = 0.0;
    for tr in traces {
        let rho = contribution(tr)?;
        for &d in &tr.deltas {
            log_delta += d.max(cfg.epsilon_log).ln();
        }
        steps += tr.len();
        log_rho += rho.iter().map(|r| r * r).sum::<f64>().max(cfg.epsilon_log).ln();
    }
    let confusion_term = cfg.k1 * log_delta / steps as f64;
    let contribution_term = cfg.k2 * log_rho / traces.len() as f64;
    Ok(CcLoss { total: confusion_term + contribution_term, confusion_term, contribution_term })
}

/// `w . features + b`.
pub fn baseline_value(weights: &[f64], bias: f64, features: &[f64]) -> f64 {
    weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + bias
}

/// Tape nodes of one dynamic-head evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DveVars {
    pub alpha: Var,
    pub v_hat: Var,
    pub delta: Var,
}

pub fn dve_forward_tape(tape: &mut Tape, mu: Var, attention_logits: Var) -> Result<DveVars, DveError> {
    let (n, m) = (tape.value(mu).len(), tape.value(attention_logits).len());
    if n != m || n == 0 {
        return Err(DveError::DimMismatch(n, m));
    }
    let alpha = tape.softmax(attention_logits);
    let v_hat = tape.dot(alpha, mu);
    let delta = confusion_tape(tape, alpha);
    Ok(DveVars { alpha, v_hat, delta })
}

pub fn confusion_tape(tape: &mut Tape, alpha: Var) -> Var {
    let n_b = tape.value(alpha).len() as f64;
    let sq = tape.dot(alpha, alpha);
    let scaled = tape.scale(sq, n_b);
    tape.recip(scaled)
}

/// Tape nodes of the loss; `total = confusion_term + contribution_term`.
#[derive(Debug, Clone, Copy)]
pub struct CcVars {
    pub total: Var,
    pub confusion_term: Var,
    pub contribution_term: Var,
}

/// Differentiable loss over trajectories given as `(alpha, delta)` node pairs.
/// Gradients reach only the attention path; the hypothesis means are never
/// read.
pub fn cc_loss_tape(tape: &mut Tape, traces: &[Vec<(Var, Var)>], cfg: &CcConfig) -> Result<CcVars, DveError> {
    if traces.is_empty() {
        return Err(DveError::EmptyBatch);
    }
    let mut log_deltas = Vec::new();
    let mut log_rhos = Vec::with_capacity(traces.len());
    for tr in traces {
        if tr.is_empty() {
            return Err(DveError::EmptyTrace);
        }
        let mut weighted = Vec::with_capacity(tr.len());
        for &(alpha, delta) in tr {
            log_deltas.push(tape.log_floor(delta, cfg.epsilon_log));
            weighted.push(tape.mul_scalar(alpha, delta));
        }
        let summed = tape.sum_all(&weighted);
        let rho = tape.scale(summed, 1.0 / tr.len() as f64);
        let sq = tape.dot(rho, rho);
        log_rhos.push(tape.log_floor(sq, cfg.epsilon_log));
    }
    let n_steps = log_deltas.len() as f64;
    let s1 = tape.sum_all(&log_deltas);
    let confusion_term = tape.scale(s1, cfg.k1 / n_steps);
    let s2 = tape.sum_all(&log_rhos);
    let contribution_term = tape.scale(s2, cfg.k2 / traces.len() as f64);
    let total = tape.add(confusion_term, contribution_term);
    Ok(CcVars { total, confusion_term, contribution_term })
}
