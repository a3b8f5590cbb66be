//! Exhaustive trajectory trees over tiny scene pools.

use std::collections::HashMap;
use std::hash::Hash;

use rand::Rng as _;
use serde::Serialize;

use super::AnalysisError;
use crate::envkit::{Action, Cell, EnvRules, EnvState, Family, SceneDescriptor};
use crate::netcore::{forward, CriticSpec, NetSpec, ParamVector, RecurrentState, RecurrentVars, Tape};
use crate::rng;
use crate::trainer::eval_step;

pub const ENUMERATION_BUDGET: usize = 100_000;

/// Four 3x3 scenes seen through a 1x1 window: every scene starts on the same
/// empty-looking cell, so histories are shared across scenes while values
/// are not.
pub fn stock_toy_scenes() -> Vec<SceneDescriptor> {
    let rules = EnvRules { obs_window: 1, r_sub: 3.0, r_goal: 10.0, t_max: 5 };
    let open = || vec![vec![false; 3]; 3];
    let mk = |id: usize, family, goal: Cell, subgoals: Vec<Cell>, walls: &[Cell], hazards: &[Cell]| {
        let mut w = open();
        walls.iter().for_each(|c| w[c.y][c.x] = true);
        let mut h = open();
        hazards.iter().for_each(|c| h[c.y][c.x] = true);
        SceneDescriptor {
            scene_id: id,
            seed: id as u64,
            family,
            width: 3,
            height: 3,
            walls: w,
            hazards: h,
            subgoals,
            goal,
            start: Cell::new(0, 0),
            rules,
        }
    };
    vec![
        mk(0, Family::Maze, Cell::new(1, 0), vec![], &[], &[]),
        mk(1, Family::Maze, Cell::new(2, 2), vec![Cell::new(1, 1)], &[], &[]),
        mk(2, Family::Hazard, Cell::new(0, 2), vec![], &[], &[Cell::new(1, 0), Cell::new(1, 1)]),
        mk(3, Family::Maze, Cell::new(2, 0), vec![], &[Cell::new(1, 0)], &[]),
    ]
}

/// Seed of the toy policy used by the stock checks; under it the scenes'
/// root values sit at least 0.5 apart.
pub const STOCK_TOY_SEED: u64 = 1;

/// Small recurrent policy with a randomized, non-uniform action head.
pub fn toy_policy(seed: u64) -> (NetSpec, ParamVector) {
    let spec = NetSpec { input_dim: 7, trunk: vec![8], hidden: 8, n_actions: 4, critic: CriticSpec::Baseline };
    let mut p = spec.init_params(seed);
    let mut r = rng::stream(seed, "toy-policy");
    for name in ["policy.w", "policy.b"] {
        p.block_mut(name).iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
    }
    (spec, p)
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    /// Index into the pool.
    pub scene: usize,
    pub depth: usize,
    pub parent: Option<(usize, usize)>,
    pub observation: Vec<f64>,
    /// Identifies the observation-action history; equal across scenes when
    /// the agent cannot tell them apart.
    pub history: usize,
    pub children: [Option<usize>; 4],
    pub rewards: [f64; 4],
}

/// Every action sequence of every scene, in parent-before-child order.
#[derive(Debug, Clone)]
pub struct EnumTree {
    pub nodes: Vec<TreeNode>,
    pub n_scenes: usize,
    pub n_trajectories: usize,
    pub n_histories: usize,
}

impl EnumTree {
    pub fn build(scenes: &[SceneDescriptor], budget: usize) -> Result<Self, AnalysisError> {
        let mut nodes: Vec<TreeNode> = Vec::new();
        let mut envs: Vec<EnvState> = Vec::new();
        let mut histories: HashMap<(usize, usize, Vec<u64>), usize> = HashMap::new();
        let mut intern = |parent: usize, action: usize, obs: &[f64]| {
            let n = histories.len();
            *histories.entry((parent, action, obs.iter().map(|v| v.to_bits()).collect())).or_insert(n + 1)
        };
        let mut leaves = 0;
        for (si, scene) in scenes.iter().enumerate() {
            let (env, obs) = EnvState::reset(scene);
            let history = intern(0, 0, obs.as_slice());
            nodes.push(TreeNode {
                scene: si,
                depth: 0,
                parent: None,
                observation: obs.0,
                history,
                children: [None; 4],
                rewards: [0.0; 4],
            });
            envs.push(env);
            let mut i = nodes.len() - 1;
            while i < nodes.len() {
                for a in 0..4 {
                    let mut env = envs[i].clone();
                    let step = env.step(Action::from_index(a))?;
                    nodes[i].rewards[a] = step.reward;
                    if step.done {
                        leaves += 1;
                        if leaves > budget {
                            return Err(AnalysisError::EnumerationBudgetExceeded { budget });
                        }
                        continue;
                    }
                    let history = intern(nodes[i].history, a, step.observation.as_slice());
                    nodes.push(TreeNode {
                        scene: si,
                        depth: nodes[i].depth + 1,
                        parent: Some((i, a)),
                        observation: step.observation.0,
                        history,
                        children: [None; 4],
                        rewards: [0.0; 4],
                    });
                    envs.push(env);
                    let j = nodes.len() - 1;
                    nodes[i].children[a] = Some(j);
                }
                i += 1;
            }
        }
        Ok(EnumTree { nodes, n_scenes: scenes.len(), n_trajectories: leaves, n_histories: histories.len() })
    }
}

/// Policy-dependent quantities on a tree. Scenes are equally likely.
#[derive(Debug, Clone)]
pub struct TreeEval {
    pub probs: Vec<[f64; 4]>,
    /// `P(M) * P(reach node | M)`.
    pub reach: Vec<f64>,
    pub values: Vec<f64>,
    pub q: Vec<[f64; 4]>,
    pub gamma: f64,
}

impl TreeEval {
    pub fn from_probs(tree: &EnumTree, probs: Vec<[f64; 4]>, gamma: f64) -> Self {
        let n = tree.nodes.len();
        let mut reach = vec![0.0; n];
        for (i, node) in tree.nodes.iter().enumerate() {
            reach[i] = match node.parent {
                None => 1.0 / tree.n_scenes as f64,
                Some((p, a)) => reach[p] * probs[p][a],
            };
        }
        let mut values = vec![0.0; n];
        let mut q = vec![[0.0; 4]; n];
        for i in (0..n).rev() {
            let node = &tree.nodes[i];
            for a in 0..4 {
                q[i][a] = node.rewards[a] + node.children[a].map_or(0.0, |c| gamma * values[c]);
            }
            values[i] = (0..4).map(|a| probs[i][a] * q[i][a]).sum();
        }
        TreeEval { probs, reach, values, q, gamma }
    }

    pub fn from_net(tree: &EnumTree, params: &ParamVector, spec: &NetSpec, gamma: f64) -> Result<Self, AnalysisError> {
        let mut states: Vec<RecurrentState> = Vec::with_capacity(tree.nodes.len());
        let mut probs = Vec::with_capacity(tree.nodes.len());
        let mut tape = Tape::new();
        for node in &tree.nodes {
            let rs = match node.parent {
                None => RecurrentState::zeros(spec.hidden),
                Some((p, _)) => states[p].clone(),
            };
            let ev = eval_step(params, spec, &node.observation, &rs, &mut tape)?;
            let mut pr = [0.0; 4];
            pr.iter_mut().zip(&ev.log_probs).for_each(|(p, l)| *p = l.exp());
            probs.push(pr);
            states.push(ev.next);
        }
        Ok(Self::from_probs(tree, probs, gamma))
    }

    /// Per-scene value of the root.
    pub fn root_values(&self, tree: &EnumTree) -> Vec<f64> {
        tree.nodes.iter().enumerate().filter(|(_, n)| n.parent.is_none()).map(|(i, _)| self.values[i]).collect()
    }

    /// Best baseline that sees only the history: the reach-weighted mean of
    /// `V(h, M)` over scenes sharing `h`.
    pub fn scene_generic_values(&self, tree: &EnumTree) -> Vec<f64> {
        let mut acc: HashMap<usize, (f64, f64)> = HashMap::new();
        for (i, node) in tree.nodes.iter().enumerate() {
            let e = acc.entry(node.history).or_default();
            e.0 += self.reach[i] * self.values[i];
            e.1 += self.reach[i];
        }
        tree.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let (s, w) = acc[&n.history];
                if w > 0.0 {
                    s / w
                } else {
                    self.values[i]
                }
            })
            .collect()
    }

    /// Step-weighted `E[(Q - f)^2]` over the tree.
    pub fn sq_error(&self, baseline: &[f64]) -> f64 {
        let (mut s, mut w) = (0.0, 0.0);
        for i in 0..self.values.len() {
            for a in 0..4 {
                let wa = self.reach[i] * self.probs[i][a];
                s += wa * (self.q[i][a] - baseline[i]).powi(2);
                w += wa;
            }
        }
        s / w
    }
}

/// Replays the path from the root on a fresh tape; returns the recurrent
/// input of `node`.
fn replay_path(
    tree: &EnumTree,
    node: usize,
    params: &ParamVector,
    spec: &NetSpec,
    tape: &mut Tape,
) -> Result<RecurrentVars, AnalysisError> {
    let mut path = vec![];
    let mut cur = tree.nodes[node].parent;
    while let Some((p, _)) = cur {
        path.push(p);
        cur = tree.nodes[p].parent;
    }
    let mut rs = RecurrentState::zeros(spec.hidden).on_tape(tape);
    for &p in path.iter().rev() {
        rs = forward(params, spec, &tree.nodes[p].observation, rs, tape)?.1;
    }
    Ok(rs)
}

/// Exact `sum_{M, tau} P(tau, M) sum_t grad log pi(a_t | h_t) (Q - f(h_t, M))`
/// from one tape over the whole tree.
pub fn policy_gradient_enumerate(
    tree: &EnumTree,
    eval: &TreeEval,
    params: &ParamVector,
    spec: &NetSpec,
    baseline: &[f64],
) -> Result<Vec<f64>, AnalysisError> {
    let mut tape = Tape::new();
    let mut next: Vec<Option<RecurrentVars>> = vec![None; tree.nodes.len()];
    let mut terms = Vec::with_capacity(tree.nodes.len());
    for (i, node) in tree.nodes.iter().enumerate() {
        let rs = match node.parent {
            None => RecurrentState::zeros(spec.hidden).on_tape(&mut tape),
            Some((p, _)) => next[p].expect("parent first"),
        };
        let (out, nrs) = forward(params, spec, &node.observation, rs, &mut tape)?;
        if node.children.iter().any(Option::is_some) {
            next[i] = Some(nrs);
        }
        let lp = tape.log_softmax(out.logits);
        let coef: Vec<f64> =
            (0..4).map(|a| eval.reach[i] * eval.probs[i][a] * (eval.q[i][a] - baseline[i])).collect();
        let c = tape.leaf(&coef);
        terms.push(tape.dot(c, lp));
    }
    let total = tape.sum_all(&terms);
    let mut grads = vec![0.0; params.len()];
    tape.backward(&[(total, &[1.0])], &params.values, &mut grads)?;
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineScan {
    /// `E[(Q - f)^2]` at `f = V(h, M)`.
    pub at_oracle: f64,
    /// `(eta, direction index, E[(Q - f - eta d)^2])`.
    pub perturbed: Vec<(f64, usize, f64)>,
    /// At the best history-only baseline.
    pub scene_generic: f64,
}

impl BaselineScan {
    /// Smallest excess of any perturbed or scene-generic variant over the
    /// oracle.
    pub fn min_margin(&self) -> f64 {
        self.perturbed.iter().map(|p| p.2).chain([self.scene_generic]).fold(f64::INFINITY, f64::min) - self.at_oracle
    }
}

pub fn baseline_variance_scan(
    tree: &EnumTree,
    eval: &TreeEval,
    etas: &[f64],
    n_directions: usize,
    seed: u64,
) -> BaselineScan {
    let v = &eval.values;
    let mut perturbed = Vec::new();
    for d in 0..n_directions {
        let mut r = rng::stream(seed, &format!("scan/dir{d}"));
        let dir: Vec<f64> = (0..v.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        for &eta in etas {
            let f: Vec<f64> = v.iter().zip(&dir).map(|(v, d)| v + eta * d).collect();
            perturbed.push((eta, d, eval.sq_error(&f)));
        }
    }
    BaselineScan { at_oracle: eval.sq_error(v), perturbed, scene_generic: eval.sq_error(&eval.scene_generic_values(tree)) }
}

/// One weighted `(state, action)` sample of a policy-gradient batch.
#[derive(Debug, Clone, PartialEq)]
pub struct VarSample<K> {
    pub weight: f64,
    pub key: K,
    pub q: f64,
    /// `|grad log pi(a | s)|^2`.
    pub score_sq: f64,
}

/// The three-way split of `E[(Q - V_hat)^2]`. Terms are not scaled by `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceReport {
    /// `minimal + prediction_error + cross_term`.
    pub total_variance: f64,
    /// `E[(Q - V)^2]`.
    pub minimal_variance: f64,
    /// `E[(V - V_hat)^2]`.
    pub prediction_error: f64,
    /// `2 E[(Q - V)(V - V_hat)]`.
    pub cross_term: f64,
    /// `E[(Q - V_hat)^2]` computed directly.
    pub direct_total: f64,
    /// `kappa = E[|grad log pi|^2]`.
    pub score_sq_mean: f64,
}

pub fn variance_decomposition<K: Eq + Hash>(
    samples: &[VarSample<K>],
    predictor: impl Fn(&K) -> f64,
    oracle: &HashMap<K, f64>,
) -> Result<VarianceReport, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::InvalidInput("empty batch".into()));
    }
    let (mut w, mut min, mut pred, mut cross, mut direct, mut kappa) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let v = *oracle.get(&s.key).ok_or(AnalysisError::MissingOracle)?;
        let vh = predictor(&s.key);
        w += s.weight;
        min += s.weight * (s.q - v) * (s.q - v);
        pred += s.weight * (v - vh) * (v - vh);
        cross += s.weight * 2.0 * (s.q - v) * (v - vh);
        direct += s.weight * (s.q - vh) * (s.q - vh);
        kappa += s.weight * s.score_sq;
    }
    let (min, pred, cross) = (min / w, pred / w, cross / w);
    Ok(VarianceReport {
        total_variance: min + pred + cross,
        minimal_variance: min,
        prediction_error: pred,
        cross_term: cross,
        direct_total: direct / w,
        score_sq_mean: kappa / w,
    })
}

/// Every `(node, action)` pair of the tree as an exactly weighted sample.
pub fn tree_samples(
    tree: &EnumTree,
    eval: &TreeEval,
    params: &ParamVector,
    spec: &NetSpec,
) -> Result<Vec<VarSample<usize>>, AnalysisError> {
    let mut out = Vec::with_capacity(4 * tree.nodes.len());
    for i in 0..tree.nodes.len() {
        for a in 0..4 {
            let mut tape = Tape::new();
            let rs = replay_path(tree, i, params, spec, &mut tape)?;
            let (o, _) = forward(params, spec, &tree.nodes[i].observation, rs, &mut tape)?;
            let lp = tape.log_softmax(o.logits);
            let la = tape.pick(lp, a);
            let mut g = vec![0.0; params.len()];
            tape.backward(&[(la, &[1.0])], &params.values, &mut g)?;
            out.push(VarSample {
                weight: eval.reach[i] * eval.probs[i][a],
                key: i,
                q: eval.q[i][a],
                score_sq: g.iter().map(|x| x * x).sum(),
            });
        }
    }
    Ok(out)
}

/// Oracle map `node -> V(h, M)`.
pub fn tree_oracle(eval: &TreeEval) -> HashMap<usize, f64> {
    eval.values.iter().copied().enumerate().collect()
}
