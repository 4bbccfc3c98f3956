//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a define-by-run tape: every operation appends a node,
//! values are computed eagerly, and [`Graph::backward`] replays the tape in
//! reverse to accumulate gradients. Each graph is confined to one thread;
//! parameters are copied into leaf nodes when first referenced, so a
//! parameter referenced twice (weight tying) is a single shared node.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParameterSet};
use crate::tensor::Tensor;

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Elementwise `scale * x + shift`; only the scale matters backward.
    Affine {
        x: NodeId,
        scale: f64,
    },
    /// `M (r,c) . v (c) -> (r)`
    MatVec {
        m: NodeId,
        v: NodeId,
    },
    /// `M (r,c)^T . v (r) -> (c)`
    MatTVec {
        m: NodeId,
        v: NodeId,
    },
    /// Row of a matrix (embedding lookup).
    PickRow {
        m: NodeId,
        row: usize,
    },
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// `softmax(x / temperature)`
    SoftmaxTemp {
        x: NodeId,
        temperature: f64,
    },
    /// Scalar `log softmax(x / temperature)[index]`.
    LogSoftmaxPick {
        x: NodeId,
        temperature: f64,
        index: usize,
    },
    /// J equal-length vectors stacked into a (J, h) matrix.
    StackVecs(Vec<NodeId>),
    /// J scalars stacked into a (J,) vector.
    StackScalars(Vec<NodeId>),
    Dot(NodeId, NodeId),
    /// Element-wise root-mean-square over a sequence of vectors.
    L2Pool(Vec<NodeId>),
    Concat(NodeId, NodeId),
    /// Sum of all elements -> scalar.
    Sum(NodeId),
    /// Binary cross-entropy of a scalar score in (0,1) against a constant
    /// label; the score is clamped to [1e-7, 1-1e-7] before the logs.
    Bce {
        score: NodeId,
        label: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

const BCE_CLAMP: f64 = 1e-7;

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        id
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf holding a constant; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that participates in differentiation.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Node for a named parameter, created on first use and shared after:
    /// binding the same name twice yields the same node, which is what makes
    /// weight tying structural rather than a copy.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let entry = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        let id = self.push(Op::Leaf, entry.tensor.clone(), true);
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    /// Node id previously bound for `name`, if any.
    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.param_nodes.get(name).copied()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let values = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(va.shape().to_vec(), values).unwrap();
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Add(a, b), t, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let values = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(va.shape().to_vec(), values).unwrap();
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Mul(a, b), t, rg)
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let vx = self.value(x);
        let values = vx.values().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(vx.shape().to_vec(), values).unwrap();
        let rg = self.requires(x);
        self.push(Op::Affine { x, scale }, t, rg)
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (vm, vv) = (self.value(m), self.value(v));
        assert!(vm.is_matrix() && vv.is_vector(), "matvec: want matrix and vector");
        assert_eq!(vm.cols(), vv.numel(), "matvec: dimension mismatch");
        let (r, c) = (vm.rows(), vm.cols());
        let mv = vm.values();
        let xs = vv.values();
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &mv[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * xs[j];
            }
            out[i] = acc;
        }
        let rg = self.requires(m) || self.requires(v);
        self.push(Op::MatVec { m, v }, Tensor::vector(out), rg)
    }

    pub fn mat_t_vec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (vm, vv) = (self.value(m), self.value(v));
        assert!(vm.is_matrix() && vv.is_vector(), "mat_t_vec: want matrix and vector");
        assert_eq!(vm.rows(), vv.numel(), "mat_t_vec: dimension mismatch");
        let (r, c) = (vm.rows(), vm.cols());
        let mv = vm.values();
        let xs = vv.values();
        let mut out = vec![0.0; c];
        for i in 0..r {
            let row = &mv[i * c..(i + 1) * c];
            let xi = xs[i];
            for j in 0..c {
                out[j] += row[j] * xi;
            }
        }
        let rg = self.requires(m) || self.requires(v);
        self.push(Op::MatTVec { m, v }, Tensor::vector(out), rg)
    }

    pub fn pick_row(&mut self, m: NodeId, row: usize) -> NodeId {
        let vm = self.value(m);
        assert!(vm.is_matrix(), "pick_row: want matrix");
        assert!(row < vm.rows(), "pick_row: row {row} out of range");
        let t = Tensor::vector(vm.row(row).to_vec());
        let rg = self.requires(m);
        self.push(Op::PickRow { m, row }, t, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let values = vx.values().iter().map(|v| sigmoid(*v)).collect();
        let t = Tensor::new(vx.shape().to_vec(), values).unwrap();
        let rg = self.requires(x);
        self.push(Op::Sigmoid(x), t, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let values = vx.values().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(vx.shape().to_vec(), values).unwrap();
        let rg = self.requires(x);
        self.push(Op::Tanh(x), t, rg)
    }

    /// `softmax(x / temperature)`: a strictly positive probability vector.
    pub fn softmax_temp(&mut self, x: NodeId, temperature: f64) -> Result<NodeId> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let vx = self.value(x);
        assert!(vx.is_vector(), "softmax_temp: want vector");
        let p = softmax_scaled(vx.values(), temperature);
        let rg = self.requires(x);
        Ok(self.push(Op::SoftmaxTemp { x, temperature }, Tensor::vector(p), rg))
    }

    /// Scalar log-probability of `index` under `softmax(x / temperature)`.
    pub fn log_softmax_pick(&mut self, x: NodeId, temperature: f64, index: usize) -> Result<NodeId> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let vx = self.value(x);
        assert!(vx.is_vector(), "log_softmax_pick: want vector");
        assert!(index < vx.numel(), "log_softmax_pick: index out of range");
        let xs = vx.values();
        let lse = log_sum_exp_scaled(xs, temperature);
        let value = xs[index] / temperature - lse;
        let rg = self.requires(x);
        Ok(self.push(
            Op::LogSoftmaxPick { x, temperature, index },
            Tensor::scalar(value),
            rg,
        ))
    }

    pub fn stack_vecs(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "stack_vecs: empty sequence");
        let h = self.value(parts[0]).numel();
        let mut values = Vec::with_capacity(parts.len() * h);
        let mut rg = false;
        for &p in parts {
            let vp = self.value(p);
            assert!(vp.is_vector() && vp.numel() == h, "stack_vecs: ragged input");
            values.extend_from_slice(vp.values());
            rg |= self.requires(p);
        }
        let t = Tensor::new(vec![parts.len(), h], values).unwrap();
        self.push(Op::StackVecs(parts.to_vec()), t, rg)
    }

    pub fn stack_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "stack_scalars: empty sequence");
        let mut values = Vec::with_capacity(parts.len());
        let mut rg = false;
        for &p in parts {
            values.push(self.value(p).item());
            rg |= self.requires(p);
        }
        self.push(Op::StackScalars(parts.to_vec()), Tensor::vector(values), rg)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.is_vector() && vb.is_vector(), "dot: want vectors");
        assert_eq!(va.numel(), vb.numel(), "dot: dimension mismatch");
        let mut acc = 0.0;
        for (x, y) in va.values().iter().zip(vb.values()) {
            acc += x * y;
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Dot(a, b), Tensor::scalar(acc), rg)
    }

    /// Element-wise RMS over a non-empty sequence of equal-length vectors:
    /// `out_d = sqrt(mean_j v[j][d]^2)`. Sign information is lost.
    pub fn l2_pool(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("l2_pool over empty sequence".into()));
        }
        let h = self.value(parts[0]).numel();
        let mut sumsq = vec![0.0; h];
        let mut rg = false;
        for &p in parts {
            let vp = self.value(p);
            assert!(vp.is_vector() && vp.numel() == h, "l2_pool: ragged input");
            for (acc, v) in sumsq.iter_mut().zip(vp.values()) {
                *acc += v * v;
            }
            rg |= self.requires(p);
        }
        let inv_j = 1.0 / parts.len() as f64;
        let out: Vec<f64> = sumsq.iter().map(|s| (s * inv_j).sqrt()).collect();
        Ok(self.push(Op::L2Pool(parts.to_vec()), Tensor::vector(out), rg))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.is_vector() && vb.is_vector(), "concat: want vectors");
        let mut values = Vec::with_capacity(va.numel() + vb.numel());
        values.extend_from_slice(va.values());
        values.extend_from_slice(vb.values());
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Concat(a, b), Tensor::vector(values), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).values().iter().sum();
        let rg = self.requires(x);
        self.push(Op::Sum(x), Tensor::scalar(total), rg)
    }

    /// Binary cross-entropy of a scalar score against a constant label.
    /// The label never receives gradient.
    pub fn bce(&mut self, score: NodeId, label: f64) -> NodeId {
        let q = self.value(score).item();
        let qc = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(label * qc.ln() + (1.0 - label) * (1.0 - qc).ln());
        let rg = self.requires(score);
        self.push(Op::Bce { score, label }, Tensor::scalar(loss), rg)
    }

    /// Reverse pass from a scalar loss. Every node reachable from the loss
    /// gets a gradient; leaves that never influence it simply stay `None`
    /// (callers collecting parameter gradients substitute zeros).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().unwrap();
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients for every parameter of `group` (all groups when `None`)
    /// in the given set; parameters the loss never touched get zeros.
    pub fn collect_param_grads(
        &self,
        params: &ParameterSet,
        grads: &Gradients,
        group: Option<ParamGroup>,
    ) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, entry) in params.iter() {
            if let Some(g) = group {
                if entry.group != g {
                    continue;
                }
            }
            let grad = self
                .param_nodes
                .get(name)
                .and_then(|&id| grads.get(id).cloned())
                .unwrap_or_else(|| Tensor::zeros(entry.tensor.shape().to_vec()));
            out.insert(name.clone(), grad);
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, delta_shape: &[usize], f: impl FnOnce(&mut [f64])) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let slot = &mut grads[target.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(delta_shape.to_vec()));
        }
        f(slot.as_mut().unwrap().values_mut());
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gv = g.values();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, &shape, |d| {
                    for (x, y) in d.iter_mut().zip(gv) {
                        *x += y;
                    }
                });
                self.accumulate(grads, *b, &shape, |d| {
                    for (x, y) in d.iter_mut().zip(gv) {
                        *x += y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                self.accumulate(grads, *a, va.shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gv[i] * vb.values()[i];
                    }
                });
                self.accumulate(grads, *b, vb.shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gv[i] * va.values()[i];
                    }
                });
            }
            Op::Affine { x, scale } => {
                let shape = self.value(*x).shape().to_vec();
                let s = *scale;
                self.accumulate(grads, *x, &shape, |d| {
                    for (dx, gy) in d.iter_mut().zip(gv) {
                        *dx += s * gy;
                    }
                });
            }
            Op::MatVec { m, v } => {
                let vm = self.value(*m);
                let vv = self.value(*v);
                let (r, c) = (vm.rows(), vm.cols());
                let mvals = vm.values().to_vec();
                let xvals = vv.values().to_vec();
                self.accumulate(grads, *m, &[r, c], |d| {
                    for i in 0..r {
                        let gi = gv[i];
                        let row = &mut d[i * c..(i + 1) * c];
                        for j in 0..c {
                            row[j] += gi * xvals[j];
                        }
                    }
                });
                self.accumulate(grads, *v, &[c], |d| {
                    for i in 0..r {
                        let gi = gv[i];
                        let row = &mvals[i * c..(i + 1) * c];
                        for j in 0..c {
                            d[j] += row[j] * gi;
                        }
                    }
                });
            }
            Op::MatTVec { m, v } => {
                let vm = self.value(*m);
                let vv = self.value(*v);
                let (r, c) = (vm.rows(), vm.cols());
                let mvals = vm.values().to_vec();
                let xvals = vv.values().to_vec();
                self.accumulate(grads, *m, &[r, c], |d| {
                    for i in 0..r {
                        let xi = xvals[i];
                        let row = &mut d[i * c..(i + 1) * c];
                        for j in 0..c {
                            row[j] += xi * gv[j];
                        }
                    }
                });
                self.accumulate(grads, *v, &[r], |d| {
                    for i in 0..r {
                        let row = &mvals[i * c..(i + 1) * c];
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += row[j] * gv[j];
                        }
                        d[i] += acc;
                    }
                });
            }
            Op::PickRow { m, row } => {
                let vm = self.value(*m);
                let (r, c) = (vm.rows(), vm.cols());
                let row = *row;
                self.accumulate(grads, *m, &[r, c], |d| {
                    let dst = &mut d[row * c..(row + 1) * c];
                    for (x, y) in dst.iter_mut().zip(gv) {
                        *x += y;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.values().to_vec();
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, &shape, |d| {
                    for i in 0..d.len() {
                        d[i] += gv[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = self.nodes[idx].value.values().to_vec();
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, &shape, |d| {
                    for i in 0..d.len() {
                        d[i] += gv[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::SoftmaxTemp { x, temperature } => {
                let p = self.nodes[idx].value.values().to_vec();
                let shape = self.value(*x).shape().to_vec();
                let inv_t = 1.0 / temperature;
                let inner: f64 = gv.iter().zip(&p).map(|(gi, pi)| gi * pi).sum();
                self.accumulate(grads, *x, &shape, |d| {
                    for i in 0..d.len() {
                        d[i] += p[i] * inv_t * (gv[i] - inner);
                    }
                });
            }
            Op::LogSoftmaxPick { x, temperature, index } => {
                let vx = self.value(*x);
                let p = softmax_scaled(vx.values(), *temperature);
                let shape = vx.shape().to_vec();
                let gs = gv[0];
                let inv_t = 1.0 / temperature;
                let index = *index;
                self.accumulate(grads, *x, &shape, |d| {
                    for (j, dj) in d.iter_mut().enumerate() {
                        let kron = if j == index { 1.0 } else { 0.0 };
                        *dj += gs * (kron - p[j]) * inv_t;
                    }
                });
            }
            Op::StackVecs(parts) => {
                let h = self.value(parts[0]).numel();
                for (j, &p) in parts.iter().enumerate() {
                    let seg = &gv[j * h..(j + 1) * h];
                    self.accumulate(grads, p, &[h], |d| {
                        for (x, y) in d.iter_mut().zip(seg) {
                            *x += y;
                        }
                    });
                }
            }
            Op::StackScalars(parts) => {
                for (j, &p) in parts.iter().enumerate() {
                    let gj = gv[j];
                    self.accumulate(grads, p, &[1], |d| {
                        d[0] += gj;
                    });
                }
            }
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                let gs = gv[0];
                self.accumulate(grads, *a, va.shape(), |d| {
                    for (x, y) in d.iter_mut().zip(vb.values()) {
                        *x += gs * y;
                    }
                });
                self.accumulate(grads, *b, vb.shape(), |d| {
                    for (x, y) in d.iter_mut().zip(va.values()) {
                        *x += gs * y;
                    }
                });
            }
            Op::L2Pool(parts) => {
                let out = self.nodes[idx].value.values().to_vec();
                let inv_j = 1.0 / parts.len() as f64;
                for &p in parts {
                    let vp = self.value(p).values().to_vec();
                    self.accumulate(grads, p, &[out.len()], |d| {
                        for i in 0..d.len() {
                            // d out_d / d v_d = v_d / (J * out_d); zero where the pool is zero
                            if out[i] > 0.0 {
                                d[i] += gv[i] * vp[i] * inv_j / out[i];
                            }
                        }
                    });
                }
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).numel();
                let nb = self.value(*b).numel();
                self.accumulate(grads, *a, &[na], |d| {
                    for (x, y) in d.iter_mut().zip(&gv[..na]) {
                        *x += y;
                    }
                });
                self.accumulate(grads, *b, &[nb], |d| {
                    for (x, y) in d.iter_mut().zip(&gv[na..na + nb]) {
                        *x += y;
                    }
                });
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                let gs = gv[0];
                self.accumulate(grads, *x, &shape, |d| {
                    for v in d.iter_mut() {
                        *v += gs;
                    }
                });
            }
            Op::Bce { score, label } => {
                let q = self.value(*score).item();
                let gs = gv[0];
                let label = *label;
                self.accumulate(grads, *score, &[1], |d| {
                    // clamped region has zero slope
                    if q > BCE_CLAMP && q < 1.0 - BCE_CLAMP {
                        d[0] += gs * (-label / q + (1.0 - label) / (1.0 - q));
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable `softmax(x / t)`.
fn softmax_scaled(xs: &[f64], t: f64) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t;
    let mut exps: Vec<f64> = xs.iter().map(|x| (x / t - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in exps.iter_mut() {
        *e /= total;
    }
    exps
}

/// `log sum_i exp(x_i / t)`, stable.
fn log_sum_exp_scaled(xs: &[f64], t: f64) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t;
    let total: f64 = xs.iter().map(|x| (x / t - max).exp()).sum();
    max + total.ln()
}

/// Index of the largest value; ties resolve to the lower index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
