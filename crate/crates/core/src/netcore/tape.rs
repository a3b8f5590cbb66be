//! Vector-valued reverse-mode tape.
//!
//! Node values live in one flat arena. Nodes only reference earlier nodes, so
//! reverse index order is a reverse topological order and the backward sweep
//! visits every node exactly once.

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param { offset: usize },
    /// `y = W x + b`; `w`/`b` are offsets into the parameter vector.
    Dense { w: usize, b: usize, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Vector times a length-1 node.
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    LogFloor(Var, f64),
    Recip(Var),
    Square(Var),
    Slice(Var, usize),
    Concat(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
    Dot(Var, Var),
    Sum(Var),
    SumAll(Vec<Var>),
    Pick(Var, usize),
    Min(Var, Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    start: usize,
    len: usize,
}

/// Which backward rule a [`Tape::corrupt_rule`] fault targets.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Sigmoid,
    Tanh,
    Softmax,
    Dense,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    data: Vec<f64>,
    grads: Vec<f64>,
    consumed: bool,
    fault: Option<(RuleKind, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        &self.data[n.start..n.start + n.len]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Gradient of the seeded output with respect to `v`; zeros before
    /// [`Tape::backward`] has run.
    pub fn grad(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        if self.grads.is_empty() {
            return &[];
        }
        &self.grads[n.start..n.start + n.len]
    }

    /// Scales the gradient produced by one backward rule. Only used by the
    /// gradient-check negative control.
    #[doc(hidden)]
    pub fn corrupt_rule(&mut self, kind: RuleKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    fn push(&mut self, op: Op, values: impl IntoIterator<Item = f64>) -> Var {
        let start = self.data.len();
        self.data.extend(values);
        let len = self.data.len() - start;
        self.nodes.push(Node { op, start, len });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = &self.nodes[x.0];
        let (s, l) = (n.start, n.len);
        let start = self.data.len();
        self.data.reserve(l);
        for i in 0..l {
            let y = f(self.data[s + i]);
            self.data.push(y);
        }
        self.nodes.push(Node { op, start, len: l });
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        assert_eq!(na.len, nb.len, "elementwise operands differ in length");
        let (sa, sb, l) = (na.start, nb.start, na.len);
        let start = self.data.len();
        self.data.reserve(l);
        for i in 0..l {
            let y = f(self.data[sa + i], self.data[sb + i]);
            self.data.push(y);
        }
        self.nodes.push(Node { op, start, len: l });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, values: &[f64]) -> Var {
        self.push(Op::Leaf, values.iter().copied())
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, [value])
    }

    /// A parameter slice as a differentiable node.
    pub fn param(&mut self, params: &[f64], offset: usize, len: usize) -> Var {
        self.push(Op::Param { offset }, params[offset..offset + len].iter().copied())
    }

    /// `W x + b` with `W` stored row-major at `w` (`rows x cols`) and `b` at `b`.
    pub fn dense(&mut self, params: &[f64], w: usize, b: usize, rows: usize, x: Var) -> Var {
        let xn = &self.nodes[x.0];
        let cols = xn.len;
        let xs = xn.start;
        let start = self.data.len();
        self.data.reserve(rows);
        for r in 0..rows {
            let row = &params[w + r * cols..w + (r + 1) * cols];
            let xv = &self.data[xs..xs + cols];
            let acc: f64 = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            self.data.push(acc + params[b + r]);
        }
        self.nodes.push(Node { op: Op::Dense { w, b, x }, start, len: rows });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Min(a, b), f64::min)
    }

    pub fn mul_scalar(&mut self, v: Var, s: Var) -> Var {
        let k = self.scalar(s);
        self.unary(v, Op::MulScalar(v, s), |x| x * k)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, Op::Scale(x, k), |v| v * k)
    }

    pub fn add_const(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, Op::AddConst(x), |v| v + k)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// `ln(max(x, floor))`; no gradient where the floor is active.
    pub fn log_floor(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Op::LogFloor(x, floor), |v| v.max(floor).ln())
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, Op::Recip(x), f64::recip)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.nodes[x.0].start + start;
        assert!(start + len <= self.nodes[x.0].len, "slice out of range");
        let begin = self.data.len();
        self.data.extend_from_within(s..s + len);
        self.nodes.push(Node { op: Op::Slice(x, start), start: begin, len });
        Var(self.nodes.len() - 1)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let begin = self.data.len();
        for p in parts {
            let n = &self.nodes[p.0];
            let (s, l) = (n.start, n.len);
            self.data.extend_from_within(s..s + l);
        }
        let len = self.data.len() - begin;
        self.nodes.push(Node { op: Op::Concat(parts.to_vec()), start: begin, len });
        Var(self.nodes.len() - 1)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let y = softmax(self.value(x));
        self.push(Op::Softmax(x), y)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let y: Vec<f64> = xs.iter().map(|v| v - lse).collect();
        self.push(Op::LogSoftmax(x), y)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let d: f64 = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), [d])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        self.push(Op::Sum(x), [s])
    }

    /// Elementwise sum of equally sized nodes, accumulated in slice order.
    pub fn sum_all(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum_all of nothing");
        let mut acc = self.value(parts[0]).to_vec();
        for p in &parts[1..] {
            for (a, v) in acc.iter_mut().zip(self.value(*p)) {
                *a += v;
            }
        }
        self.push(Op::SumAll(parts.to_vec()), acc)
    }

    pub fn pick(&mut self, x: Var, i: usize) -> Var {
        let v = self.value(x)[i];
        self.push(Op::Pick(x, i), [v])
    }

    /// Reverse sweep from `seeds`, accumulating parameter gradients into
    /// `param_grads`. `param_values` must be the values the forward pass read.
    pub fn backward(
        &mut self,
        seeds: &[(Var, &[f64])],
        param_values: &[f64],
        param_grads: &mut [f64],
    ) -> Result<(), NetError> {
        if self.consumed {
            return Err(NetError::TapeReused);
        }
        self.consumed = true;
        let mut g = vec![0.0; self.data.len()];
        for (v, seed) in seeds {
            let n = &self.nodes[v.0];
            if seed.len() != n.len {
                return Err(NetError::DimMismatch { what: "output gradient", expected: n.len, got: seed.len() });
            }
            for (gi, s) in g[n.start..n.start + n.len].iter_mut().zip(seed.iter()) {
                *gi += s;
            }
        }
        let fault = |k: RuleKind| match self.fault {
            Some((f, s)) if f == k => s,
            _ => 1.0,
        };
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            let (start, len) = (node.start, node.len);
            if g[start..start + len].iter().all(|&x| x == 0.0) {
                continue;
            }
            let span = |v: &Var| {
                let n = &self.nodes[v.0];
                (n.start, n.len)
            };
            let data = &self.data;
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    for i in 0..len {
                        param_grads[offset + i] += g[start + i];
                    }
                }
                Op::Dense { w, b, x } => {
                    let (xs, cols) = span(x);
                    let k = fault(RuleKind::Dense);
                    for r in 0..len {
                        let gy = g[start + r] * k;
                        if gy == 0.0 {
                            continue;
                        }
                        param_grads[b + r] += gy;
                        let wrow = w + r * cols;
                        let (gw, xv) = (&mut param_grads[wrow..wrow + cols], &data[xs..xs + cols]);
                        for (gwi, xi) in gw.iter_mut().zip(xv) {
                            *gwi += gy * xi;
                        }
                        let wv = &param_values[wrow..wrow + cols];
                        for (gx, wi) in g[xs..xs + cols].iter_mut().zip(wv) {
                            *gx += gy * wi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let ((sa, _), (sb, _)) = (span(a), span(b));
                    for i in 0..len {
                        let gi = g[start + i];
                        g[sa + i] += gi;
                        g[sb + i] += gi;
                    }
                }
                Op::Sub(a, b) => {
                    let ((sa, _), (sb, _)) = (span(a), span(b));
                    for i in 0..len {
                        let gi = g[start + i];
                        g[sa + i] += gi;
                        g[sb + i] -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let ((sa, _), (sb, _)) = (span(a), span(b));
                    for i in 0..len {
                        let gi = g[start + i];
                        let (va, vb) = (data[sa + i], data[sb + i]);
                        g[sa + i] += gi * vb;
                        g[sb + i] += gi * va;
                    }
                }
                Op::MulScalar(v, s) => {
                    let ((sv, _), (ss, _)) = (span(v), span(s));
                    let k = data[ss];
                    let mut gs = 0.0;
                    for i in 0..len {
                        let gi = g[start + i];
                        gs += gi * data[sv + i];
                        g[sv + i] += gi * k;
                    }
                    g[ss] += gs;
                }
                Op::Scale(x, k) => {
                    let (sx, _) = span(x);
                    for i in 0..len {
                        g[sx + i] += g[start + i] * k;
                    }
                }
                Op::AddConst(x) => {
                    let (sx, _) = span(x);
                    for i in 0..len {
                        g[sx + i] += g[start + i];
                    }
                }
                Op::Tanh(x) => {
                    let (sx, _) = span(x);
                    let k = fault(RuleKind::Tanh);
                    for i in 0..len {
                        let y = data[start + i];
                        g[sx + i] += g[start + i] * (1.0 - y * y) * k;
                    }
                }
                Op::Sigmoid(x) => {
                    let (sx, _) = span(x);
                    let k = fault(RuleKind::Sigmoid);
                    for i in 0..len {
                        let y = data[start + i];
                        g[sx + i] += g[start + i] * y * (1.0 - y) * k;
                    }
                }
                Op::Exp(x) => {
                    let (sx, _) = span(x);
                    for i in 0..len {
                        g[sx + i] += g[start + i] * data[start + i];
                    }
                }
                Op::LogFloor(x, floor) => {
                    let (sx, _) = span(x);
                    for i in 0..len {
                        let v = data[sx + i];
                        if v > *floor {
                            g[sx + i] += g[start + i] / v;
                        }
                    }
                }
                Op::Recip(x) => {
                    let (sx, _) = span(x);
                    for i in 0..len {
                        let y = data[start + i];
                        g[sx + i] -= g[start + i] * y * y;
                    }
                }
                Op::Square(x) => {
                    let (sx, _) = span(x);
                    for i in 0..len {
                        g[sx + i] += g[start + i] * 2.0 * data[sx + i];
                    }
                }
                Op::Clamp(x, lo, hi) => {
                    let (sx, _) = span(x);
                    for i in 0..len {
                        let v = data[sx + i];
                        if v > *lo && v < *hi {
                            g[sx + i] += g[start + i];
                        }
                    }
                }
                Op::Min(a, b) => {
                    let ((sa, _), (sb, _)) = (span(a), span(b));
                    for i in 0..len {
                        let gi = g[start + i];
                        if data[sa + i] <= data[sb + i] {
                            g[sa + i] += gi;
                        } else {
                            g[sb + i] += gi;
                        }
                    }
                }
                Op::Slice(x, off) => {
                    let (sx, _) = span(x);
                    for i in 0..len {
                        g[sx + off + i] += g[start + i];
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (sp, lp) = span(p);
                        for i in 0..lp {
                            g[sp + i] += g[start + off + i];
                        }
                        off += lp;
                    }
                }
                Op::Softmax(x) => {
                    let (sx, _) = span(x);
                    let k = fault(RuleKind::Softmax);
                    let inner: f64 = (0..len).map(|i| g[start + i] * data[start + i]).sum();
                    for i in 0..len {
                        let y = data[start + i];
                        g[sx + i] += y * (g[start + i] - inner) * k;
                    }
                }
                Op::LogSoftmax(x) => {
                    let (sx, _) = span(x);
                    let total: f64 = g[start..start + len].iter().sum();
                    for i in 0..len {
                        let p = data[start + i].exp();
                        g[sx + i] += g[start + i] - p * total;
                    }
                }
                Op::Dot(a, b) => {
                    let ((sa, la), (sb, _)) = (span(a), span(b));
                    let gi = g[start];
                    for i in 0..la {
                        let (va, vb) = (data[sa + i], data[sb + i]);
                        g[sa + i] += gi * vb;
                        g[sb + i] += gi * va;
                    }
                }
                Op::Sum(x) => {
                    let (sx, lx) = span(x);
                    let gi = g[start];
                    for i in 0..lx {
                        g[sx + i] += gi;
                    }
                }
                Op::SumAll(parts) => {
                    for p in parts {
                        let (sp, _) = span(p);
                        for i in 0..len {
                            g[sp + i] += g[start + i];
                        }
                    }
                }
                Op::Pick(x, i) => {
                    let (sx, _) = span(x);
                    g[sx + i] += g[start];
                }
            }
        }
        self.grads = g;
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
