//! Central finite-difference verification of the network's reverse pass.

use rand::Rng as _;

use super::{forward, CriticVars, NetSpec, ParamVector, RecurrentState, RuleKind, Tape};
use crate::rng;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    pub params_checked: usize,
    pub max_rel_err: f64,
    /// Parameter block holding the worst entry.
    pub worst_block: String,
    pub passed: bool,
}

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

const SEQ_LEN: usize = 2;

struct Trial {
    obs: Vec<Vec<f64>>,
    rs0: RecurrentState,
    coef: Vec<f64>,
}

/// Scalar probe over a short sequence: a fixed random linear functional of
/// every head output, with the attention logits passed through softmax.
fn probe(params: &ParamVector, spec: &NetSpec, trial: &Trial, tape: &mut Tape) -> super::Var {
    let mut rs = trial.rs0.on_tape(tape);
    let mut terms = Vec::new();
    for obs in &trial.obs {
        let (out, next) = forward(params, spec, obs, rs, tape).expect("dims are consistent");
        rs = next;
        let mut heads = vec![out.logits];
        match out.critic {
            CriticVars::Baseline { value } => heads.push(value),
            CriticVars::Dynamic { mu, attn_logits } => {
                heads.push(mu);
                heads.push(tape.softmax(attn_logits));
            }
        }
        heads.push(rs.cell);
        let joined = tape.concat(&heads);
        terms.push(joined);
    }
    let all = tape.concat(&terms);
    let c = tape.leaf(&trial.coef[..tape.value(all).len()]);
    tape.dot(all, c)
}

fn probe_value(params: &ParamVector, spec: &NetSpec, trial: &Trial) -> f64 {
    let mut tape = Tape::new();
    let v = probe(params, spec, trial, &mut tape);
    tape.scalar(v)
}

/// Compares every parameter's analytic gradient against central differences
/// over `n_trials` random parameter/input draws.
pub fn grad_check(spec: &NetSpec, n_trials: usize, tolerance: f64, seed: u64) -> GradCheckReport {
    grad_check_with_fault(spec, n_trials, tolerance, seed, None)
}

#[doc(hidden)]
pub fn grad_check_with_fault(
    spec: &NetSpec,
    n_trials: usize,
    tolerance: f64,
    seed: u64,
    fault: Option<(RuleKind, f64)>,
) -> GradCheckReport {
    let mut r = rng::stream(seed, "grad-check");
    let mut params = ParamVector::zeros(spec.shapes());
    let n_out = SEQ_LEN * (spec.n_actions + 2 * spec.critic.n_b() + spec.hidden + 1);
    let mut max_rel_err: f64 = 0.0;
    let mut worst = 0;
    for _ in 0..n_trials {
        params.values.iter_mut().for_each(|v| *v = r.gen_range(-0.5..0.5));
        params.zero_grads();
        let trial = Trial {
            obs: (0..SEQ_LEN).map(|_| (0..spec.input_dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect(),
            rs0: RecurrentState {
                hidden: (0..spec.hidden).map(|_| r.gen_range(-0.5..0.5)).collect(),
                cell: (0..spec.hidden).map(|_| r.gen_range(-0.5..0.5)).collect(),
            },
            coef: (0..n_out).map(|_| r.gen_range(-1.0..1.0)).collect(),
        };
        let mut tape = Tape::new();
        if let Some((k, f)) = fault {
            tape.corrupt_rule(k, f);
        }
        let out = probe(&params, spec, &trial, &mut tape);
        let mut grads = vec![0.0; params.len()];
        tape.backward(&[(out, &[1.0])], &params.values, &mut grads).expect("fresh tape");
        for i in 0..params.len() {
            let orig = params.values[i];
            params.values[i] = orig + FD_STEP;
            let up = probe_value(&params, spec, &trial);
            params.values[i] = orig - FD_STEP;
            let down = probe_value(&params, spec, &trial);
            params.values[i] = orig;
            let e = rel_err(grads[i], (up - down) / (2.0 * FD_STEP));
            if e > max_rel_err {
                max_rel_err = e;
                worst = i;
            }
        }
    }
    let mut acc = 0;
    let mut worst_block = String::new();
    for s in params.shapes() {
        if worst < acc + s.numel() {
            worst_block = s.name.clone();
            break;
        }
        acc += s.numel();
    }
    GradCheckReport {
        trials: n_trials,
        params_checked: params.len(),
        max_rel_err,
        worst_block,
        passed: max_rel_err < tolerance,
    }
}
