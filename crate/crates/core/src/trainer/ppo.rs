use rand::seq::SliceRandom;

use super::gae::{compute_gae, normalize};
use super::{RolloutBatch, TrainConfig, TrainError, Trajectory};
use crate::dvehead::{cc_loss_tape, dve_forward_tape};
use crate::netcore::{forward, Adam, CriticVars, NetSpec, ParamVector, RecurrentState, Tape, Var};
use crate::rng;

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

/// Mean loss terms of one update (averaged over its minibatch passes).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Applied (gate-weighted) confusion term.
    pub cc_term1: f64,
    /// Applied (gate-weighted) contribution term.
    pub cc_term2: f64,
    pub total: f64,
    pub minibatches: usize,
}

/// Tape nodes of a minibatch loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub cc: Option<(Var, Var)>,
}

/// Advantage and return targets aligned with each trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

/// GAE per trajectory (terminal, no bootstrap), then optional batch-wide
/// advantage normalization. Returns keep the raw advantages.
pub fn prepare_targets(batch: &RolloutBatch, cfg: &TrainConfig) -> Result<Targets, TrainError> {
    let mut advantages = Vec::with_capacity(batch.trajectories.len());
    let mut returns = Vec::with_capacity(batch.trajectories.len());
    for t in &batch.trajectories {
        let e = compute_gae(&t.rewards, &t.values, None, cfg.gamma, cfg.gae_lambda)?;
        advantages.push(e.advantages);
        returns.push(e.returns);
    }
    if cfg.normalize_advantages {
        let mut flat: Vec<f64> = advantages.iter().flatten().copied().collect();
        normalize(&mut flat);
        let mut it = flat.into_iter();
        for a in advantages.iter_mut() {
            a.iter_mut().for_each(|x| *x = it.next().expect("same length"));
        }
    }
    Ok(Targets { advantages, returns })
}

/// Records the PPO loss of a set of whole trajectories, replayed from a zero
/// recurrent state with full backpropagation through time.
///
/// `cc_weight` scales the confusion-contribution loss; at zero the term is
/// not built at all.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_loss(
    tape: &mut Tape,
    params: &ParamVector,
    spec: &NetSpec,
    trajs: &[&Trajectory],
    advantages: &[&[f64]],
    returns: &[&[f64]],
    cfg: &TrainConfig,
    cc_weight: f64,
) -> Result<LossVars, TrainError> {
    let use_cc = cc_weight > 0.0 && !cfg.cc.is_null();
    let (mut surr, mut ents, mut verrs) = (Vec::new(), Vec::new(), Vec::new());
    let mut traces: Vec<Vec<(Var, Var)>> = Vec::new();
    for ((traj, adv), ret) in trajs.iter().zip(advantages).zip(returns) {
        let mut rs = RecurrentState::zeros(spec.hidden).on_tape(tape);
        let mut trace = Vec::new();
        for t in 0..traj.len() {
            let (out, next) = forward(params, spec, &traj.observations[t], rs, tape)?;
            rs = next;
            let lp = tape.log_softmax(out.logits);
            let lpa = tape.pick(lp, traj.actions[t]);
            let shifted = tape.add_const(lpa, -traj.log_probs[t]);
            let ratio = tape.exp(shifted);
            let s1 = tape.scale(ratio, adv[t]);
            let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            let s2 = tape.scale(clipped, adv[t]);
            surr.push(tape.min(s1, s2));
            let p = tape.exp(lp);
            let plp = tape.dot(p, lp);
            ents.push(tape.scale(plp, -1.0));
            let v = match out.critic {
                CriticVars::Baseline { value } => value,
                CriticVars::Dynamic { mu, attn_logits } => {
                    let d = dve_forward_tape(tape, mu, attn_logits)?;
                    if use_cc {
                        trace.push((d.alpha, d.delta));
                    }
                    d.v_hat
                }
            };
            let err = tape.add_const(v, -ret[t]);
            verrs.push(tape.square(err));
        }
        if use_cc && !trace.is_empty() {
            traces.push(trace);
        }
    }
    let n = surr.len() as f64;
    let s = tape.sum_all(&surr);
    let policy = tape.scale(s, -1.0 / n);
    let s = tape.sum_all(&verrs);
    let value = tape.scale(s, 1.0 / n);
    let s = tape.sum_all(&ents);
    let entropy = tape.scale(s, 1.0 / n);
    let vpart = tape.scale(value, cfg.value_coef);
    let epart = tape.scale(entropy, -cfg.entropy_coef);
    let mut total = tape.sum_all(&[policy, vpart, epart]);
    let mut cc = None;
    if use_cc && !traces.is_empty() {
        let l = cc_loss_tape(tape, &traces, &cfg.cc)?;
        let c1 = tape.scale(l.confusion_term, cc_weight);
        let c2 = tape.scale(l.contribution_term, cc_weight);
        total = tape.sum_all(&[total, c1, c2]);
        cc = Some((c1, c2));
    }
    Ok(LossVars { total, policy, value, entropy, cc })
}

fn clip_grad_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
}

/// `epochs_per_update` passes over shuffled whole-trajectory minibatches.
pub fn ppo_update(
    params: &mut ParamVector,
    opt: &mut Adam,
    spec: &NetSpec,
    batch: &RolloutBatch,
    cfg: &TrainConfig,
    update: usize,
    cc_weight: f64,
) -> Result<LossReport, TrainError> {
    let targets = prepare_targets(batch, cfg)?;
    ppo_update_with_targets(params, opt, spec, batch, &targets, cfg, update, cc_weight)
}

#[allow(clippy::too_many_arguments)]
pub fn ppo_update_with_targets(
    params: &mut ParamVector,
    opt: &mut Adam,
    spec: &NetSpec,
    batch: &RolloutBatch,
    targets: &Targets,
    cfg: &TrainConfig,
    update: usize,
    cc_weight: f64,
) -> Result<LossReport, TrainError> {
    let mut r = rng::stream(cfg.seed, &format!("minibatch/u{update}"));
    let mut order: Vec<usize> = (0..batch.trajectories.len()).collect();
    let mut report = LossReport::default();
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.minibatch_size) {
            let trajs: Vec<&Trajectory> = chunk.iter().map(|&i| &batch.trajectories[i]).collect();
            let adv: Vec<&[f64]> = chunk.iter().map(|&i| targets.advantages[i].as_slice()).collect();
            let ret: Vec<&[f64]> = chunk.iter().map(|&i| targets.returns[i].as_slice()).collect();
            let mut tape = Tape::new();
            let l = minibatch_loss(&mut tape, params, spec, &trajs, &adv, &ret, cfg, cc_weight)?;
            let total = tape.scalar(l.total);
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss { update });
            }
            report.policy_loss += tape.scalar(l.policy);
            report.value_loss += tape.scalar(l.value);
            report.entropy += tape.scalar(l.entropy);
            if let Some((c1, c2)) = l.cc {
                report.cc_term1 += tape.scalar(c1);
                report.cc_term2 += tape.scalar(c2);
            }
            report.total += total;
            report.minibatches += 1;
            tape.backward(&[(l.total, &[1.0])], &params.values, &mut params.grads)?;
            clip_grad_norm(&mut params.grads, cfg.max_grad_norm);
            opt.step(params)?;
        }
    }
    let k = report.minibatches.max(1) as f64;
    for v in [
        &mut report.policy_loss,
        &mut report.value_loss,
        &mut report.entropy,
        &mut report.cc_term1,
        &mut report.cc_term2,
        &mut report.total,
    ] {
        *v /= k;
    }
    Ok(report)
}
