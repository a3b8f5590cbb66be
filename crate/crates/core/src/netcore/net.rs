//! Shared tanh-MLP trunk, one LSTM cell, and linear heads.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{NetError, ParamShape, ParamVector, Tape, Var};
use crate::rng;

/// Shrinks the attention init so training starts near uniform attention.
pub const ATTN_INIT_SCALE: f64 = 0.01;

/// Which critic heads sit on top of the LSTM output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CriticSpec {
    /// One scalar value head.
    Baseline,
    /// `n_b` value hypotheses plus `n_b` attention logits.
    Dynamic { n_b: usize },
}

impl CriticSpec {
    pub fn n_b(self) -> usize {
        match self {
            CriticSpec::Baseline => 1,
            CriticSpec::Dynamic { n_b } => n_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub trunk: Vec<usize>,
    pub hidden: usize,
    pub n_actions: usize,
    pub critic: CriticSpec,
}

impl NetSpec {
    pub fn new(input_dim: usize, critic: CriticSpec) -> Self {
        NetSpec { input_dim, trunk: vec![64, 64], hidden: 64, n_actions: 4, critic }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.hidden == 0 || self.n_actions == 0 || self.trunk.contains(&0) {
            return Err(NetError::InvalidSpec("zero-sized layer".into()));
        }
        if self.critic.n_b() == 0 {
            return Err(NetError::InvalidSpec("n_b must be >= 1".into()));
        }
        Ok(())
    }

    fn trunk_out(&self) -> usize {
        self.trunk.last().copied().unwrap_or(self.input_dim)
    }

    pub fn shapes(&self) -> Vec<ParamShape> {
        let mut v = Vec::new();
        let mut add = |name: String, dims: Vec<usize>| v.push(ParamShape { name, dims });
        let mut fan_in = self.input_dim;
        for (i, &w) in self.trunk.iter().enumerate() {
            add(format!("trunk.{i}.w"), vec![w, fan_in]);
            add(format!("trunk.{i}.b"), vec![w]);
            fan_in = w;
        }
        let h = self.hidden;
        add("lstm.w".into(), vec![4 * h, self.trunk_out() + h]);
        add("lstm.b".into(), vec![4 * h]);
        add("policy.w".into(), vec![self.n_actions, h]);
        add("policy.b".into(), vec![self.n_actions]);
        match self.critic {
            CriticSpec::Baseline => {
                add("value.w".into(), vec![1, h]);
                add("value.b".into(), vec![1]);
            }
            CriticSpec::Dynamic { n_b } => {
                add("mu.w".into(), vec![n_b, h]);
                add("mu.b".into(), vec![n_b]);
                add("attn.w".into(), vec![n_b, h]);
                add("attn.b".into(), vec![n_b]);
            }
        }
        v
    }

    /// Names of the blocks belonging to the critic branch.
    pub fn critic_blocks(&self) -> &'static [&'static str] {
        match self.critic {
            CriticSpec::Baseline => &["value.w", "value.b"],
            CriticSpec::Dynamic { .. } => &["mu.w", "mu.b", "attn.w", "attn.b"],
        }
    }

    /// Glorot-uniform trunk and LSTM weights, zero biases except forget gate
    /// `+1`, zero policy and value heads. Attention weights are Glorot-uniform
    /// from their own stream: zero attention with zero means is a fixed point
    /// where every hypothesis receives the same gradient. Bodies therefore
    /// agree across critic variants for the same seed.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut p = ParamVector::zeros(self.shapes());
        let mut r = rng::stream(seed, "net-init");
        let shapes: Vec<ParamShape> = p.shapes().to_vec();
        for s in shapes.iter().filter(|s| s.name.starts_with("trunk") || s.name.starts_with("lstm")) {
            if s.name.ends_with(".w") {
                let bound = (6.0 / (s.dims[0] + s.dims[1]) as f64).sqrt();
                for v in p.block_mut(&s.name) {
                    *v = r.gen_range(-bound..bound);
                }
            }
        }
        if let Some((_, s)) = p.lookup("attn.w") {
            let bound = ATTN_INIT_SCALE * (6.0 / (s.dims[0] + s.dims[1]) as f64).sqrt();
            let mut r = rng::stream(seed, "net-init/attn");
            for v in p.block_mut("attn.w") {
                *v = r.gen_range(-bound..bound);
            }
        }
        let h = self.hidden;
        p.block_mut("lstm.b")[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        p
    }

    pub fn spec_hash(&self) -> u64 {
        rng::fnv1a(&serde_json::to_vec(self).expect("spec serializes"))
    }
}

/// LSTM state carried between steps, as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(h: usize) -> Self {
        RecurrentState { hidden: vec![0.0; h], cell: vec![0.0; h] }
    }

    pub fn on_tape(&self, tape: &mut Tape) -> RecurrentVars {
        RecurrentVars { hidden: tape.leaf(&self.hidden), cell: tape.leaf(&self.cell) }
    }
}

/// LSTM state as tape nodes, so gradients flow through time.
#[derive(Debug, Clone, Copy)]
pub struct RecurrentVars {
    pub hidden: Var,
    pub cell: Var,
}

impl RecurrentVars {
    pub fn values(&self, tape: &Tape) -> RecurrentState {
        RecurrentState { hidden: tape.value(self.hidden).to_vec(), cell: tape.value(self.cell).to_vec() }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CriticVars {
    Baseline { value: Var },
    Dynamic { mu: Var, attn_logits: Var },
}

#[derive(Debug, Clone, Copy)]
pub struct HeadOutputs {
    pub logits: Var,
    pub critic: CriticVars,
    /// LSTM output the heads read.
    pub features: Var,
}

/// One step: trunk, LSTM cell (gate order input, forget, candidate, output),
/// then every head.
pub fn forward(
    params: &ParamVector,
    spec: &NetSpec,
    obs: &[f64],
    rs: RecurrentVars,
    tape: &mut Tape,
) -> Result<(HeadOutputs, RecurrentVars), NetError> {
    if obs.len() != spec.input_dim {
        return Err(NetError::DimMismatch { what: "observation", expected: spec.input_dim, got: obs.len() });
    }
    let expected: usize = spec.shapes().iter().map(ParamShape::numel).sum();
    if params.len() != expected {
        return Err(NetError::DimMismatch { what: "parameters", expected, got: params.len() });
    }
    let h = spec.hidden;
    for v in [rs.hidden, rs.cell] {
        if tape.value(v).len() != h {
            return Err(NetError::DimMismatch { what: "recurrent state", expected: h, got: tape.value(v).len() });
        }
    }
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFiniteInput);
    }
    let pv = &params.values;
    let mut x = tape.leaf(obs);
    for (i, &w) in spec.trunk.iter().enumerate() {
        let z = tape.dense(pv, params.offset(&format!("trunk.{i}.w")), params.offset(&format!("trunk.{i}.b")), w, x);
        x = tape.tanh(z);
    }
    let xin = tape.concat(&[x, rs.hidden]);
    let z = tape.dense(pv, params.offset("lstm.w"), params.offset("lstm.b"), 4 * h, xin);
    let zi = tape.slice(z, 0, h);
    let zf = tape.slice(z, h, h);
    let zg = tape.slice(z, 2 * h, h);
    let zo = tape.slice(z, 3 * h, h);
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, rs.cell);
    let ig = tape.mul(i, g);
    let cell = tape.add(fc, ig);
    let tc = tape.tanh(cell);
    let hidden = tape.mul(o, tc);

    let logits = tape.dense(pv, params.offset("policy.w"), params.offset("policy.b"), spec.n_actions, hidden);
    let critic = match spec.critic {
        CriticSpec::Baseline => {
            CriticVars::Baseline { value: tape.dense(pv, params.offset("value.w"), params.offset("value.b"), 1, hidden) }
        }
        CriticSpec::Dynamic { n_b } => CriticVars::Dynamic {
            mu: tape.dense(pv, params.offset("mu.w"), params.offset("mu.b"), n_b, hidden),
            attn_logits: tape.dense(pv, params.offset("attn.w"), params.offset("attn.b"), n_b, hidden),
        },
    };
    Ok((HeadOutputs { logits, critic, features: hidden }, RecurrentVars { hidden, cell }))
}
