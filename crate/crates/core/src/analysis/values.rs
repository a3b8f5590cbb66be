use std::collections::HashMap;

use super::AnalysisError;
use crate::envkit::{Action, EnvState, SceneDescriptor, StateKey};
use crate::netcore::{NetSpec, ParamVector, RecurrentState, Tape};
use crate::trainer::eval_step;

/// Outcome of taking one action in one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    /// `None` when the step ends the episode.
    pub next: Option<usize>,
}

/// Every running state reachable from the start under some action sequence,
/// in breadth-first order. Time is part of the state, so the order is
/// topological.
#[derive(Debug, Clone)]
pub struct StateGraph {
    pub keys: Vec<StateKey>,
    pub transitions: Vec<[Transition; 4]>,
    index: HashMap<StateKey, usize>,
}

impl StateGraph {
    pub fn build(scene: &SceneDescriptor) -> Self {
        let (start, _) = EnvState::reset(scene);
        let mut keys = vec![start.key()];
        let mut index = HashMap::from([(start.key(), 0)]);
        let mut transitions = Vec::new();
        let mut i = 0;
        while i < keys.len() {
            let mut row = [Transition { reward: 0.0, next: None }; 4];
            for a in Action::ALL {
                let mut env = EnvState::from_key(scene, keys[i]).expect("graph holds running states");
                let step = env.step(a).expect("running state");
                let next = if step.done {
                    None
                } else {
                    let k = env.key();
                    Some(*index.entry(k).or_insert_with(|| {
                        keys.push(k);
                        keys.len() - 1
                    }))
                };
                row[a.index()] = Transition { reward: step.reward, next };
            }
            transitions.push(row);
            i += 1;
        }
        StateGraph { keys, transitions, index }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn index_of(&self, key: &StateKey) -> Option<usize> {
        self.index.get(key).copied()
    }
}

/// Produces an action distribution for every state of a scene's graph.
pub trait Policy {
    fn tabulate(&self, scene: &SceneDescriptor, graph: &StateGraph) -> Result<Vec<[f64; 4]>, AnalysisError>;
}

/// Always moves right.
pub struct AlwaysRight;

impl Policy for AlwaysRight {
    fn tabulate(&self, _: &SceneDescriptor, graph: &StateGraph) -> Result<Vec<[f64; 4]>, AnalysisError> {
        let mut p = [0.0; 4];
        p[Action::Right.index()] = 1.0;
        Ok(vec![p; graph.len()])
    }
}

pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn tabulate(&self, _: &SceneDescriptor, graph: &StateGraph) -> Result<Vec<[f64; 4]>, AnalysisError> {
        Ok(vec![[0.25; 4]; graph.len()])
    }
}

/// A recurrent network policy. The hidden state at each grid state is the
/// one reached along the most probable action path from the start; ties keep
/// the first path found in breadth-first order.
pub struct NetPolicy<'a> {
    pub params: &'a ParamVector,
    pub spec: &'a NetSpec,
}

impl NetPolicy<'_> {
    /// Hidden state and log path probability for every state of the graph.
    pub fn most_probable_states(
        &self,
        scene: &SceneDescriptor,
        graph: &StateGraph,
    ) -> Result<(Vec<[f64; 4]>, Vec<RecurrentState>, Vec<f64>), AnalysisError> {
        let n = graph.len();
        let mut best: Vec<Option<(f64, RecurrentState)>> = vec![None; n];
        best[0] = Some((0.0, RecurrentState::zeros(self.spec.hidden)));
        let mut probs = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        let mut logp = Vec::with_capacity(n);
        let mut tape = Tape::new();
        for i in 0..n {
            let (lp, rs) = best[i].take().expect("predecessors precede successors");
            let obs = EnvState::from_key(scene, graph.keys[i]).expect("running state").observe();
            let ev = eval_step(self.params, self.spec, obs.as_slice(), &rs, &mut tape)?;
            for (a, t) in graph.transitions[i].iter().enumerate() {
                if let Some(j) = t.next {
                    let cand = lp + ev.log_probs[a];
                    if best[j].as_ref().map_or(true, |(b, _)| cand > *b) {
                        best[j] = Some((cand, ev.next.clone()));
                    }
                }
            }
            let mut p = [0.0; 4];
            p.iter_mut().zip(&ev.log_probs).for_each(|(p, l)| *p = l.exp());
            probs.push(p);
            states.push(rs);
            logp.push(lp);
        }
        Ok((probs, states, logp))
    }
}

impl Policy for NetPolicy<'_> {
    fn tabulate(&self, scene: &SceneDescriptor, graph: &StateGraph) -> Result<Vec<[f64; 4]>, AnalysisError> {
        Ok(self.most_probable_states(scene, graph)?.0)
    }
}

/// `V_M(s)` for every reachable running state of one scene.
#[derive(Debug, Clone)]
pub struct ScenePolicyValues {
    pub scene_id: usize,
    pub gamma: f64,
    pub graph: StateGraph,
    pub policy: Vec<[f64; 4]>,
    pub values: Vec<f64>,
    pub sweeps: usize,
}

impl ScenePolicyValues {
    pub fn value(&self, key: &StateKey) -> Option<f64> {
        self.graph.index_of(key).map(|i| self.values[i])
    }

    pub fn start_value(&self) -> f64 {
        self.values[0]
    }

    /// `Q(s, a)` from the stored values.
    pub fn q(&self, i: usize, a: usize) -> f64 {
        let t = self.graph.transitions[i][a];
        t.reward + t.next.map_or(0.0, |j| self.gamma * self.values[j])
    }

    /// Largest violation of `V(s) = sum_a pi(a|s) Q(s, a)`.
    pub fn bellman_residual(&self) -> f64 {
        (0..self.graph.len())
            .map(|i| {
                let backup: f64 = (0..4).map(|a| self.policy[i][a] * self.q(i, a)).sum();
                (backup - self.values[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub const MAX_SWEEPS: usize = 100_000;
pub const SWEEP_TOLERANCE: f64 = 1e-12;

/// Iterative policy evaluation with in-place sweeps in reverse state order.
pub fn exact_state_values(
    scene: &SceneDescriptor,
    policy: &dyn Policy,
    gamma: f64,
) -> Result<ScenePolicyValues, AnalysisError> {
    let graph = StateGraph::build(scene);
    let probs = policy.tabulate(scene, &graph)?;
    evaluate(scene.scene_id, graph, probs, gamma, MAX_SWEEPS)
}

pub(crate) fn evaluate(
    scene_id: usize,
    graph: StateGraph,
    policy: Vec<[f64; 4]>,
    gamma: f64,
    max_sweeps: usize,
) -> Result<ScenePolicyValues, AnalysisError> {
    let mut values = vec![0.0; graph.len()];
    for sweep in 1..=max_sweeps {
        let mut change: f64 = 0.0;
        for i in (0..graph.len()).rev() {
            let v: f64 = (0..4)
                .map(|a| {
                    let t = graph.transitions[i][a];
                    policy[i][a] * (t.reward + t.next.map_or(0.0, |j| gamma * values[j]))
                })
                .sum();
            change = change.max((v - values[i]).abs());
            values[i] = v;
        }
        if change < SWEEP_TOLERANCE {
            return Ok(ScenePolicyValues { scene_id, gamma, graph, policy, values, sweeps: sweep });
        }
    }
    Err(AnalysisError::NoConvergence { sweeps: max_sweeps })
}
