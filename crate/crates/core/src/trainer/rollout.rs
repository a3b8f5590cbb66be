use rand::Rng as _;

use super::{TrainConfig, TrainError};
use crate::dvehead::{dve_forward_tape, AttentionTrace};
use crate::envkit::{Action, Cell, EnvState, SceneDescriptor, Termination};
use crate::netcore::{forward, CriticVars, NetSpec, ParamVector, RecurrentState, Tape};
use crate::rng;

/// One full episode, from reset to termination.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scene_id: usize,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// LSTM state at the start of each step.
    pub recurrent_states: Vec<RecurrentState>,
    /// Agent cell at the start of each step.
    pub positions: Vec<Cell>,
    pub attention: Option<AttentionTrace>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    /// Update index of the parameter snapshot that produced the batch.
    pub snapshot_id: usize,
}

impl RolloutBatch {
    pub fn env_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        self.trajectories.iter().map(Trajectory::total_reward).sum::<f64>() / self.trajectories.len() as f64
    }

    pub fn mean_len(&self) -> f64 {
        self.env_steps() as f64 / self.trajectories.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSelection {
    Sample,
    Greedy,
}

/// Policy and critic readout of one step.
pub(crate) struct StepEval {
    pub log_probs: Vec<f64>,
    pub value: f64,
    pub alpha: Option<(Vec<f64>, f64)>,
    pub next: RecurrentState,
}

pub(crate) fn eval_step(
    params: &ParamVector,
    spec: &NetSpec,
    obs: &[f64],
    rs: &RecurrentState,
    tape: &mut Tape,
) -> Result<StepEval, TrainError> {
    *tape = Tape::new();
    let vars = rs.on_tape(tape);
    let (out, next) = forward(params, spec, obs, vars, tape)?;
    let lp = tape.log_softmax(out.logits);
    let (value, alpha) = match out.critic {
        CriticVars::Baseline { value } => (tape.scalar(value), None),
        CriticVars::Dynamic { mu, attn_logits } => {
            let d = dve_forward_tape(tape, mu, attn_logits)?;
            (tape.scalar(d.v_hat), Some((tape.value(d.alpha).to_vec(), tape.scalar(d.delta))))
        }
    };
    Ok(StepEval { log_probs: tape.value(lp).to_vec(), value, alpha, next: next.values(tape) })
}

fn pick_action(log_probs: &[f64], how: ActionSelection, r: &mut rng::Rng) -> usize {
    match how {
        ActionSelection::Greedy => {
            // First maximum wins ties.
            let mut best = 0;
            for (i, &lp) in log_probs.iter().enumerate() {
                if lp > log_probs[best] {
                    best = i;
                }
            }
            best
        }
        ActionSelection::Sample => {
            let u: f64 = r.gen();
            let mut acc = 0.0;
            for (i, lp) in log_probs.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    return i;
                }
            }
            log_probs.len() - 1
        }
    }
}

/// Runs one episode on `scene` under a frozen snapshot.
pub fn run_episode(
    params: &ParamVector,
    spec: &NetSpec,
    scene: &SceneDescriptor,
    how: ActionSelection,
    r: &mut rng::Rng,
) -> Result<Trajectory, TrainError> {
    let (mut env, mut obs) = EnvState::reset(scene);
    let mut rs = RecurrentState::zeros(spec.hidden);
    let mut tape = Tape::new();
    let dynamic = matches!(spec.critic, crate::netcore::CriticSpec::Dynamic { .. });
    let mut traj = Trajectory {
        scene_id: scene.scene_id,
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        log_probs: Vec::new(),
        values: Vec::new(),
        recurrent_states: Vec::new(),
        positions: Vec::new(),
        attention: dynamic.then(AttentionTrace::default),
        termination: Termination::Running,
    };
    loop {
        let ev = eval_step(params, spec, obs.as_slice(), &rs, &mut tape)?;
        let a = pick_action(&ev.log_probs, how, r);
        traj.positions.push(env.position());
        let step = env.step(Action::from_index(a))?;
        traj.observations.push(obs.0);
        traj.actions.push(a);
        traj.rewards.push(step.reward);
        traj.log_probs.push(ev.log_probs[a]);
        traj.values.push(ev.value);
        traj.recurrent_states.push(std::mem::replace(&mut rs, ev.next));
        if let (Some(tr), Some((alpha, delta))) = (traj.attention.as_mut(), ev.alpha) {
            tr.push(alpha, delta);
        }
        obs = step.observation;
        if step.done {
            traj.termination = step.termination_cause;
            return Ok(traj);
        }
    }
}

fn worker(
    params: &ParamVector,
    spec: &NetSpec,
    pool: &[SceneDescriptor],
    cfg: &TrainConfig,
    update: usize,
    w: usize,
    how: ActionSelection,
) -> Result<Vec<Trajectory>, TrainError> {
    let mut r = rng::stream(cfg.seed, &format!("rollout/u{update}/w{w}"));
    let mut out = Vec::new();
    let mut steps = 0;
    while steps < cfg.steps_per_worker_per_update {
        let scene = &pool[r.gen_range(0..pool.len())];
        let t = run_episode(params, spec, scene, how, &mut r)?;
        steps += t.len();
        out.push(t);
    }
    Ok(out)
}

/// Collects complete episodes from `n_workers` workers, each with its own
/// seeded stream, and concatenates them in worker order.
pub fn collect_rollouts(
    params: &ParamVector,
    spec: &NetSpec,
    pool: &[SceneDescriptor],
    cfg: &TrainConfig,
    update: usize,
    how: ActionSelection,
) -> Result<RolloutBatch, TrainError> {
    if pool.is_empty() {
        return Err(TrainError::Config("empty scene pool".into()));
    }
    let per_worker: Vec<Result<Vec<Trajectory>, TrainError>> = if cfg.n_workers == 1 {
        vec![worker(params, spec, pool, cfg, update, 0, how)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.n_workers)
                .map(|w| s.spawn(move || worker(params, spec, pool, cfg, update, w, how)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
        })
    };
    let mut trajectories = Vec::new();
    for r in per_worker {
        trajectories.extend(r?);
    }
    Ok(RolloutBatch { trajectories, snapshot_id: update })
}
