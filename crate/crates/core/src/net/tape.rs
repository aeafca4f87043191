//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward computation; calling
//! [`Tape::backward`] once replays it in reverse and accumulates adjoints.
//! Tapes are single-use, single-thread objects: a second `backward` is a
//! usage error, and nothing here is `Sync`.
//!
//! The op set is exactly what the encoder/classifier stack, the interval
//! propagation and the two training losses need — nothing more. Non-smooth
//! ops (`relu`, `clamp_const`, `max_elem`, `sqrt` at zero) use fixed,
//! documented subgradient choices and report how close the forward pass came
//! to each kink via [`Tape::min_branch_margin`], which the finite-difference
//! tests use to stay away from active-set boundaries.

use super::tensor::{self, Tensor};
use super::{NetError, ParamRef};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

struct Node {
    value: Tensor,
    op: Op,
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Affine { w: NodeId, b: NodeId, x: NodeId },
    AbsMatVec { w: NodeId, x: NodeId },
    Conv1d { w: NodeId, b: NodeId, x: NodeId },
    AbsConv1d { w: NodeId, x: NodeId },
    Relu(NodeId),
    MeanPoolRows(NodeId),
    LogSoftmax(NodeId),
    Exp(NodeId),
    ClampConst { x: NodeId, lo: f64, hi: f64 },
    Gather { x: NodeId, index: usize },
    MaxElem(NodeId, NodeId),
    Square(NodeId),
    SumAll(NodeId),
    Sqrt(NodeId),
    NormalQuantile(NodeId),
    MeanOf(Vec<NodeId>),
}

pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamRef, NodeId)>,
    min_branch_margin: f64,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            min_branch_margin: f64::INFINITY,
            consumed: false,
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.scalar_value()
    }

    /// Smallest distance any branching op saw to its decision boundary during
    /// the forward pass. Infinity when no branching op ran.
    pub fn min_branch_margin(&self) -> f64 {
        self.min_branch_margin
    }

    /// Lets host code that makes data-dependent discrete choices (argmax
    /// selections) register how close the choice was to flipping.
    pub fn note_branch_margin(&mut self, margin: f64) {
        if margin < self.min_branch_margin {
            self.min_branch_margin = margin;
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf registered as a trainable parameter.
    pub fn param(&mut self, value: Tensor, pref: ParamRef) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push((pref, id));
        id
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), NetError> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(NetError::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape_of(a),
                self.shape_of(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        self.check_same_shape(a, b, "add")?;
        let data = self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape_of(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        self.check_same_shape(a, b, "sub")?;
        let data = self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape_of(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sub(a, b)))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let t = Tensor::from_parts(
            self.shape_of(a).to_vec(),
            self.value(a).data().iter().map(|v| -v).collect(),
        );
        self.push(t, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = Tensor::from_parts(
            self.shape_of(a).to_vec(),
            self.value(a).data().iter().map(|v| v * c).collect(),
        );
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = Tensor::from_parts(
            self.shape_of(a).to_vec(),
            self.value(a).data().iter().map(|v| v + c).collect(),
        );
        self.push(t, Op::AddScalar(a))
    }

    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId, NetError> {
        let (ws, xs) = (self.shape_of(w), self.shape_of(x));
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] || self.shape_of(b) != [ws[0]] {
            return Err(NetError::ShapeMismatch(format!(
                "affine: W {ws:?}, b {:?}, x {xs:?}",
                self.shape_of(b)
            )));
        }
        let mut out = Vec::new();
        tensor::affine(self.value(w), self.value(b), self.value(x).data(), &mut out);
        Ok(self.push(Tensor::vector(out), Op::Affine { w, b, x }))
    }

    pub fn abs_matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, NetError> {
        let (ws, xs) = (self.shape_of(w), self.shape_of(x));
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(NetError::ShapeMismatch(format!("abs_matvec: W {ws:?}, x {xs:?}")));
        }
        let mut out = Vec::new();
        tensor::affine_abs(self.value(w), self.value(x).data(), &mut out);
        Ok(self.push(Tensor::vector(out), Op::AbsMatVec { w, x }))
    }

    fn check_conv(&self, w: NodeId, x: NodeId) -> Result<(), NetError> {
        let (ws, xs) = (self.shape_of(w), self.shape_of(x));
        if ws.len() != 3 || xs.len() != 2 || ws[1] != xs[1] || xs[0] < ws[2] {
            return Err(NetError::ShapeMismatch(format!("conv1d: W {ws:?}, x {xs:?}")));
        }
        Ok(())
    }

    pub fn conv1d(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId, NetError> {
        self.check_conv(w, x)?;
        if self.shape_of(b) != [self.shape_of(w)[0]] {
            return Err(NetError::ShapeMismatch("conv1d bias".into()));
        }
        let y = tensor::conv1d(self.value(w), Some(self.value(b)), self.value(x), false);
        Ok(self.push(y, Op::Conv1d { w, b, x }))
    }

    pub fn abs_conv1d(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, NetError> {
        self.check_conv(w, x)?;
        let y = tensor::conv1d(self.value(w), None, self.value(x), true);
        Ok(self.push(y, Op::AbsConv1d { w, x }))
    }

    /// `max(x, 0)` elementwise; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut margin = f64::INFINITY;
        let data: Vec<f64> = self.value(a)
            .data()
            .iter()
            .map(|&v| {
                margin = margin.min(v.abs());
                v.max(0.0)
            })
            .collect();
        self.note_branch_margin(margin);
        let shape = self.shape_of(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Relu(a))
    }

    pub fn mean_pool_rows(&mut self, a: NodeId) -> Result<NodeId, NetError> {
        if self.shape_of(a).len() != 2 {
            return Err(NetError::ShapeMismatch("mean_pool expects a 2-D sequence".into()));
        }
        let y = tensor::mean_pool_rows(self.value(a));
        Ok(self.push(y, Op::MeanPoolRows(a)))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId, NetError> {
        if self.shape_of(a).len() != 1 {
            return Err(NetError::ShapeMismatch("log_softmax expects a vector".into()));
        }
        let mut out = Vec::new();
        tensor::log_softmax(self.value(a).data(), &mut out);
        Ok(self.push(Tensor::vector(out), Op::LogSoftmax(a)))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let t = Tensor::from_parts(
            self.shape_of(a).to_vec(),
            self.value(a).data().iter().map(|v| v.exp()).collect(),
        );
        self.push(t, Op::Exp(a))
    }

    /// Clamp into `[lo, hi]`; gradient is 1 inside (boundary included), 0 outside.
    pub fn clamp_const(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let mut margin = f64::INFINITY;
        let data: Vec<f64> = self.value(a)
            .data()
            .iter()
            .map(|&v| {
                margin = margin.min((v - lo).abs().min((hi - v).abs()));
                v.clamp(lo, hi)
            })
            .collect();
        self.note_branch_margin(margin);
        let shape = self.shape_of(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::ClampConst { x: a, lo, hi })
    }

    /// Picks one entry of a vector as a scalar node.
    pub fn gather(&mut self, a: NodeId, index: usize) -> Result<NodeId, NetError> {
        if index >= self.value(a).len() {
            return Err(NetError::ShapeMismatch(format!(
                "gather index {index} out of bounds for {:?}",
                self.shape_of(a)
            )));
        }
        let v = self.value(a).data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Gather { x: a, index }))
    }

    /// Elementwise max; on ties the gradient flows to the first argument.
    pub fn max_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        self.check_same_shape(a, b, "max_elem")?;
        let mut margin = f64::INFINITY;
        let data: Vec<f64> = self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| {
                margin = margin.min((x - y).abs());
                if x >= y {
                    x
                } else {
                    y
                }
            })
            .collect();
        self.note_branch_margin(margin);
        let shape = self.shape_of(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::MaxElem(a, b)))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let t = Tensor::from_parts(
            self.shape_of(a).to_vec(),
            self.value(a).data().iter().map(|v| v * v).collect(),
        );
        self.push(t, Op::Square(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Elementwise square root; the subgradient at 0 is defined as 0.
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let mut margin = f64::INFINITY;
        let data: Vec<f64> = self.value(a)
            .data()
            .iter()
            .map(|&v| {
                margin = margin.min(v.abs());
                v.max(0.0).sqrt()
            })
            .collect();
        self.note_branch_margin(margin);
        let shape = self.shape_of(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Sqrt(a))
    }

    /// Elementwise standard normal quantile; inputs must already be clamped
    /// strictly inside (0, 1).
    pub fn normal_quantile(&mut self, a: NodeId) -> Result<NodeId, NetError> {
        let mut data = Vec::with_capacity(self.value(a).len());
        for &p in self.value(a).data() {
            if !(p > 0.0 && p < 1.0) {
                return Err(NetError::ShapeMismatch(format!(
                    "normal_quantile input {p} outside (0, 1); clamp first"
                )));
            }
            data.push(stats::normal_quantile_raw(p));
        }
        let shape = self.shape_of(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::NormalQuantile(a)))
    }

    /// Mean of same-shaped nodes.
    pub fn mean_of(&mut self, ids: &[NodeId]) -> Result<NodeId, NetError> {
        let first = *ids.first().ok_or_else(|| {
            NetError::ShapeMismatch("mean_of needs at least one node".into())
        })?;
        for &id in &ids[1..] {
            self.check_same_shape(first, id, "mean_of")?;
        }
        let mut acc = vec![0.0f64; self.value(first).len()];
        for &id in ids {
            for (a, v) in acc.iter_mut().zip(self.value(id).data()) {
                *a += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
        let shape = self.shape_of(first).to_vec();
        Ok(self.push(Tensor::from_parts(shape, acc), Op::MeanOf(ids.to_vec())))
    }

    /// Runs reverse accumulation from a scalar node seeded with `seed`.
    ///
    /// Consumes the tape's gradient capability: calling it twice is an error.
    pub fn backward(&mut self, output: NodeId, seed: f64) -> Result<Gradients, NetError> {
        if self.consumed {
            return Err(NetError::TapeConsumed);
        }
        if !self.nodes[output.0].value.is_scalar() {
            return Err(NetError::ShapeMismatch(
                "backward seed must be a scalar node".into(),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(seed));

        for idx in (0..self.nodes.len()).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Reinstall: gradients of every node stay queryable afterwards.
            let apply = |grads: &mut Vec<Option<Tensor>>, id: NodeId, update: &mut dyn FnMut(&mut [f64])| {
                let slot = &mut grads[id.0];
                if slot.is_none() {
                    *slot = Some(Tensor::zeros(self.nodes[id.0].value.shape().to_vec()));
                }
                update(slot.as_mut().unwrap().data_mut());
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    apply(&mut grads, *a, &mut |ga| {
                        for (t, s) in ga.iter_mut().zip(g.data()) {
                            *t += s;
                        }
                    });
                    apply(&mut grads, *b, &mut |gb| {
                        for (t, s) in gb.iter_mut().zip(g.data()) {
                            *t += s;
                        }
                    });
                }
                Op::Sub(a, b) => {
                    apply(&mut grads, *a, &mut |ga| {
                        for (t, s) in ga.iter_mut().zip(g.data()) {
                            *t += s;
                        }
                    });
                    apply(&mut grads, *b, &mut |gb| {
                        for (t, s) in gb.iter_mut().zip(g.data()) {
                            *t -= s;
                        }
                    });
                }
                Op::Neg(a) => {
                    apply(&mut grads, *a, &mut |ga| {
                        for (t, s) in ga.iter_mut().zip(g.data()) {
                            *t -= s;
                        }
                    });
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    apply(&mut grads, *a, &mut |ga| {
                        for (t, s) in ga.iter_mut().zip(g.data()) {
                            *t += c * s;
                        }
                    });
                }
                Op::AddScalar(a) => {
                    apply(&mut grads, *a, &mut |ga| {
                        for (t, s) in ga.iter_mut().zip(g.data()) {
                            *t += s;
                        }
                    });
                }
                Op::Affine { w, b, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
                    apply(&mut grads, *w, &mut |gw| {
                        for r in 0..rows {
                            let gr = g.data()[r];
                            for c in 0..cols {
                                gw[r * cols + c] += gr * xt.data()[c];
                            }
                        }
                    });
                    apply(&mut grads, *b, &mut |gb| {
                        for (t, s) in gb.iter_mut().zip(g.data()) {
                            *t += s;
                        }
                    });
                    apply(&mut grads, *x, &mut |gx| {
                        for r in 0..rows {
                            let gr = g.data()[r];
                            for c in 0..cols {
                                gx[c] += gr * wt.data()[r * cols + c];
                            }
                        }
                    });
                }
                Op::AbsMatVec { w, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
                    apply(&mut grads, *w, &mut |gw| {
                        for r in 0..rows {
                            let gr = g.data()[r];
                            for c in 0..cols {
                                let s = wt.data()[r * cols + c].signum_or_zero();
                                gw[r * cols + c] += gr * s * xt.data()[c];
                            }
                        }
                    });
                    apply(&mut grads, *x, &mut |gx| {
                        for r in 0..rows {
                            let gr = g.data()[r];
                            for c in 0..cols {
                                gx[c] += gr * wt.data()[r * cols + c].abs();
                            }
                        }
                    });
                }
                Op::Conv1d { w, b, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let (oc, ic, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
                    let out_len = xt.shape()[0] - k + 1;
                    apply(&mut grads, *w, &mut |gw| {
                        for t in 0..out_len {
                            for o in 0..oc {
                                let go = g.data()[t * oc + o];
                                for c in 0..ic {
                                    for dt in 0..k {
                                        gw[(o * ic + c) * k + dt] += go * xt.data()[(t + dt) * ic + c];
                                    }
                                }
                            }
                        }
                    });
                    apply(&mut grads, *b, &mut |gb| {
                        for t in 0..out_len {
                            for o in 0..oc {
                                gb[o] += g.data()[t * oc + o];
                            }
                        }
                    });
                    apply(&mut grads, *x, &mut |gx| {
                        for t in 0..out_len {
                            for o in 0..oc {
                                let go = g.data()[t * oc + o];
                                for c in 0..ic {
                                    for dt in 0..k {
                                        gx[(t + dt) * ic + c] += go * wt.data()[(o * ic + c) * k + dt];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::AbsConv1d { w, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let (oc, ic, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
                    let out_len = xt.shape()[0] - k + 1;
                    apply(&mut grads, *w, &mut |gw| {
                        for t in 0..out_len {
                            for o in 0..oc {
                                let go = g.data()[t * oc + o];
                                for c in 0..ic {
                                    for dt in 0..k {
                                        let s = wt.data()[(o * ic + c) * k + dt].signum_or_zero();
                                        gw[(o * ic + c) * k + dt] += go * s * xt.data()[(t + dt) * ic + c];
                                    }
                                }
                            }
                        }
                    });
                    apply(&mut grads, *x, &mut |gx| {
                        for t in 0..out_len {
                            for o in 0..oc {
                                let go = g.data()[t * oc + o];
                                for c in 0..ic {
                                    for dt in 0..k {
                                        gx[(t + dt) * ic + c] += go * wt.data()[(o * ic + c) * k + dt].abs();
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Relu(a) => {
                    let xt = &self.nodes[a.0].value;
                    apply(&mut grads, *a, &mut |ga| {
                        for i in 0..ga.len() {
                            if xt.data()[i] > 0.0 {
                                ga[i] += g.data()[i];
                            }
                        }
                    });
                }
                Op::MeanPoolRows(a) => {
                    let xt = &self.nodes[a.0].value;
                    let (len, ch) = (xt.shape()[0], xt.shape()[1]);
                    let inv = 1.0 / len as f64;
                    apply(&mut grads, *a, &mut |ga| {
                        for t in 0..len {
                            for c in 0..ch {
                                ga[t * ch + c] += g.data()[c] * inv;
                            }
                        }
                    });
                }
                Op::LogSoftmax(a) => {
                    let yt = &self.nodes[idx].value;
                    let gsum: f64 = g.data().iter().sum();
                    apply(&mut grads, *a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g.data()[i] - yt.data()[i].exp() * gsum;
                        }
                    });
                }
                Op::Exp(a) => {
                    let yt = &self.nodes[idx].value;
                    apply(&mut grads, *a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += g.data()[i] * yt.data()[i];
                        }
                    });
                }
                Op::ClampConst { x, lo, hi } => {
                    let xt = &self.nodes[x.0].value;
                    let (lo, hi) = (*lo, *hi);
                    apply(&mut grads, *x, &mut |gx| {
                        for i in 0..gx.len() {
                            let v = xt.data()[i];
                            if v >= lo && v <= hi {
                                gx[i] += g.data()[i];
                            }
                        }
                    });
                }
                Op::Gather { x, index } => {
                    let index = *index;
                    apply(&mut grads, *x, &mut |gx| {
                        gx[index] += g.data()[0];
                    });
                }
                Op::MaxElem(a, b) => {
                    let at = &self.nodes[a.0].value;
                    let bt = &self.nodes[b.0].value;
                    apply(&mut grads, *a, &mut |ga| {
                        for i in 0..ga.len() {
                            if at.data()[i] >= bt.data()[i] {
                                ga[i] += g.data()[i];
                            }
                        }
                    });
                    apply(&mut grads, *b, &mut |gb| {
                        for i in 0..gb.len() {
                            if at.data()[i] < bt.data()[i] {
                                gb[i] += g.data()[i];
                            }
                        }
                    });
                }
                Op::Square(a) => {
                    let xt = &self.nodes[a.0].value;
                    apply(&mut grads, *a, &mut |ga| {
                        for i in 0..ga.len() {
                            ga[i] += 2.0 * xt.data()[i] * g.data()[i];
                        }
                    });
                }
                Op::SumAll(a) => {
                    let gs = g.data()[0];
                    apply(&mut grads, *a, &mut |ga| {
                        for t in ga.iter_mut() {
                            *t += gs;
                        }
                    });
                }
                Op::Sqrt(a) => {
                    let yt = &self.nodes[idx].value;
                    apply(&mut grads, *a, &mut |ga| {
                        for i in 0..ga.len() {
                            let y = yt.data()[i];
                            if y > 0.0 {
                                ga[i] += g.data()[i] / (2.0 * y);
                            }
                        }
                    });
                }
                Op::NormalQuantile(a) => {
                    let yt = &self.nodes[idx].value;
                    // d/dp quantile(p) = 1 / pdf(quantile(p))
                    apply(&mut grads, *a, &mut |ga| {
                        for i in 0..ga.len() {
                            let y = yt.data()[i];
                            let inv_pdf = (0.5 * y * y).exp() * SQRT_2PI;
                            ga[i] += g.data()[i] * inv_pdf;
                        }
                    });
                }
                Op::MeanOf(ids) => {
                    let inv = 1.0 / ids.len() as f64;
                    for id in ids.clone() {
                        apply(&mut grads, id, &mut |gi| {
                            for (t, s) in gi.iter_mut().zip(g.data()) {
                                *t += s * inv;
                            }
                        });
                    }
                }
            }
            grads[idx] = Some(g);
        }

        // Parameters untouched by the output still get explicit zero
        // gradients, so optimizer steps see every parameter.
        for (_, id) in &self.params {
            if grads[id.0].is_none() {
                grads[id.0] = Some(Tensor::zeros(self.nodes[id.0].value.shape().to_vec()));
            }
        }

        Ok(Gradients { grads, params: self.params.clone() })
    }
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    #[inline]
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Adjoints produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamRef, NodeId)>,
}

impl Gradients {
    /// Gradient of the seeded output with respect to `id`; zeros if the node
    /// did not influence the output.
    pub fn get(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }

    /// One entry per registered parameter leaf, in registration order.
    pub fn param_entries(&self) -> Vec<(ParamRef, Tensor)> {
        self.params
            .iter()
            .map(|(pref, id)| (*pref, self.grads[id.0].as_ref().expect("prefilled").clone()))
            .collect()
    }
}
