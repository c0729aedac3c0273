use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::graph::Adjacency;
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => fast_sigmoid(x),
            Activation::Tanh => fast_tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    fn apply_all(self, xs: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => xs.to_vec(),
            Activation::Sigmoid => map_elementwise(xs, fast_sigmoid),
            Activation::Tanh => map_elementwise(xs, fast_tanh),
            Activation::Relu => xs.iter().map(|&x| x.max(0.0)).collect(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

#[inline(always)]
fn map_into(xs: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = f(x);
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn map_into_avx2(xs: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    map_into(xs, f)
}

/// Applies `f` to every element, using wider vector registers when the CPU
/// has them. Results are identical on both paths: no operation is fused.
fn map_elementwise(xs: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { map_into_avx2(xs, f) };
    }
    map_into(xs, f)
}

/// Branch-free `exp` for `x` in roughly ±700, accurate to a couple of ulps.
/// Written so the compiler can vectorize loops over it.
#[inline(always)]
fn exp_approx(x: f64) -> f64 {
    const SHIFTER: f64 = 6755399441055744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.93147180369123816490e-01;
    const LN2_LO: f64 = 1.90821492927058770002e-10;
    let x = x.clamp(-700.0, 700.0);
    let kf = x * std::f64::consts::LOG2_E + SHIFTER;
    let k = kf - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 13 on |r| <= ln2 / 2.
    let mut p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let bits = kf.to_bits().wrapping_sub(SHIFTER.to_bits()).wrapping_shl(52);
    f64::from_bits(p.to_bits().wrapping_add(bits))
}

#[inline(always)]
fn fast_tanh(x: f64) -> f64 {
    let t = exp_approx(-2.0 * x.abs().min(20.0));
    ((1.0 - t) / (1.0 + t)).copysign(x)
}

#[inline(always)]
fn fast_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp_approx(-x))
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    ConcatCols(Var, Var),
    SoftmaxRows(Var),
    Mean(Var),
    MseLoss(Var, &'a Tensor),
    CrossEntropy {
        logits: Var,
        targets: &'a Tensor,
        weights: &'a [f64],
    },
    Propagate(Var, &'a Adjacency),
    EdgeScores(Var, &'a Adjacency),
    EdgeSoftmax(Var, &'a Adjacency),
    EdgeAggregate(Var, Var, &'a Adjacency),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Parameters are borrowed from a [`ParamStore`]; graph operators work on
/// batches whose rows are laid out as `sample * n_nodes + node`.
pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op<'a>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn input_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let params = self.params;
        self.push(Cow::Borrowed(params.value(id)), Op::Param(id), params.is_trainable(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    /// Adds a `1 × c` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NnError> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(NnError::shape("add_bias", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let rg = self.needs(&[a, bias]);
        Ok(self.push(Cow::Owned(out), Op::AddBias(a, bias), rg))
    }

    fn elementwise(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NnError::shape(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.elementwise("add", a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.elementwise("sub", a, b, |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.elementwise("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.needs(&[a]);
        self.push(Cow::Owned(out), Op::Scale(a, s), rg)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return a;
        }
        let v = self.value(a);
        let out = Tensor::from_vec(v.rows(), v.cols(), kind.apply_all(v.data())).expect("same shape");
        let rg = self.needs(&[a]);
        self.push(Cow::Owned(out), Op::Act(a, kind), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(NnError::shape("concat", va.shape(), vb.shape()));
        }
        let cols = va.cols() + vb.cols();
        let mut data = Vec::with_capacity(va.rows() * cols);
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let out = Tensor::from_vec(va.rows(), cols, data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::ConcatCols(a, b), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.needs(&[a]);
        self.push(Cow::Owned(out), Op::SoftmaxRows(a), rg)
    }

    /// Mean over all entries, as a `1 × 1` value.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.sum() / v.len().max(1) as f64;
        let rg = self.needs(&[a]);
        self.push(Cow::Owned(Tensor::scalar(m)), Op::Mean(a), rg)
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &'a Tensor) -> Result<Var, NnError> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return Err(NnError::shape("mse_loss", vp.shape(), target.shape()));
        }
        let sq: f64 = vp.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let m = sq / vp.len().max(1) as f64;
        let rg = self.needs(&[pred]);
        Ok(self.push(Cow::Owned(Tensor::scalar(m)), Op::MseLoss(pred, target), rg))
    }

    /// Row-weighted cross-entropy of `softmax(logits)` against target distributions:
    /// `−Σ_r w_r Σ_c t_rc log p_rc / Σ_r w_r`. Rows with zero weight are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &'a Tensor, weights: &'a [f64]) -> Result<Var, NnError> {
        let vl = self.value(logits);
        if vl.shape() != targets.shape() || weights.len() != vl.rows() {
            return Err(NnError::shape("cross_entropy", vl.shape(), targets.shape()));
        }
        let total_w: f64 = weights.iter().sum();
        let mut loss = 0.0;
        if total_w > 0.0 {
            for r in 0..vl.rows() {
                if weights[r] == 0.0 {
                    continue;
                }
                let lse = log_sum_exp(vl.row(r));
                let row: f64 = vl
                    .row(r)
                    .iter()
                    .zip(targets.row(r))
                    .map(|(&z, &t)| if t == 0.0 { 0.0 } else { t * (z - lse) })
                    .sum();
                loss -= weights[r] * row;
            }
            loss /= total_w;
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            },
            rg,
        ))
    }

    fn batch_of(&self, rows: usize, adj: &Adjacency, op: &str) -> Result<usize, NnError> {
        let n = adj.n_nodes();
        if n == 0 || rows % n != 0 {
            return Err(NnError::InvalidShape(format!(
                "{op}: {rows} rows is not a whole number of {n}-node graphs"
            )));
        }
        Ok(rows / n)
    }

    /// Weighted neighbor sum `out_i = Σ_e w_e x_{src(e)}` per sample.
    pub fn propagate(&mut self, x: Var, adj: &'a Adjacency) -> Result<Var, NnError> {
        let vx = self.value(x);
        let batch = self.batch_of(vx.rows(), adj, "propagate")?;
        let n = adj.n_nodes();
        let f = vx.cols();
        let mut out = Tensor::zeros(vx.rows(), f);
        for b in 0..batch {
            for i in 0..n {
                let o = (b * n + i) * f;
                for e in adj.edge_range(i) {
                    let w = adj.weight(e);
                    let s = (b * n + adj.source(e)) * f;
                    let src = &vx.data()[s..s + f];
                    for (acc, v) in out.data_mut()[o..o + f].iter_mut().zip(src) {
                        *acc += w * v;
                    }
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Propagate(x, adj), rg))
    }

    /// Edge logits `e = scores[target, 0] + scores[source, 1]`, one row per sample.
    pub fn edge_scores(&mut self, scores: Var, adj: &'a Adjacency) -> Result<Var, NnError> {
        let vs = self.value(scores);
        if vs.cols() != 2 {
            return Err(NnError::shape("edge_scores", vs.shape(), (vs.rows(), 2)));
        }
        let batch = self.batch_of(vs.rows(), adj, "edge_scores")?;
        let n = adj.n_nodes();
        let mut out = Tensor::zeros(batch, adj.n_edges());
        for b in 0..batch {
            for i in 0..n {
                let qi = vs[(b * n + i, 0)];
                for e in adj.edge_range(i) {
                    out[(b, e)] = qi + vs[(b * n + adj.source(e), 1)];
                }
            }
        }
        let rg = self.needs(&[scores]);
        Ok(self.push(Cow::Owned(out), Op::EdgeScores(scores, adj), rg))
    }

    /// Softmax over the incoming edges of every node, per sample.
    pub fn edge_softmax(&mut self, logits: Var, adj: &'a Adjacency) -> Result<Var, NnError> {
        let vl = self.value(logits);
        if vl.cols() != adj.n_edges() {
            return Err(NnError::shape("edge_softmax", vl.shape(), (vl.rows(), adj.n_edges())));
        }
        let mut out = vl.clone();
        for b in 0..out.rows() {
            let row = out.row_mut(b);
            for i in 0..adj.n_nodes() {
                softmax_in_place(&mut row[adj.edge_range(i)]);
            }
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(Cow::Owned(out), Op::EdgeSoftmax(logits, adj), rg))
    }

    /// `out_i = Σ_e coef_e · z_{src(e)}` per sample.
    pub fn edge_aggregate(&mut self, coef: Var, z: Var, adj: &'a Adjacency) -> Result<Var, NnError> {
        let (vc, vz) = (self.value(coef), self.value(z));
        let batch = self.batch_of(vz.rows(), adj, "edge_aggregate")?;
        if vc.shape() != (batch, adj.n_edges()) {
            return Err(NnError::shape("edge_aggregate", vc.shape(), (batch, adj.n_edges())));
        }
        let n = adj.n_nodes();
        let f = vz.cols();
        let mut out = Tensor::zeros(vz.rows(), f);
        for b in 0..batch {
            for i in 0..n {
                let o = (b * n + i) * f;
                for e in adj.edge_range(i) {
                    let w = vc[(b, e)];
                    let s = (b * n + adj.source(e)) * f;
                    let src = &vz.data()[s..s + f];
                    for (acc, v) in out.data_mut()[o..o + f].iter_mut().zip(src) {
                        *acc += w * v;
                    }
                }
            }
        }
        let rg = self.needs(&[coef, z]);
        Ok(self.push(Cow::Owned(out), Op::EdgeAggregate(coef, z, adj), rg))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(NnError::InvalidShape(format!(
                "backward needs a 1x1 loss, got {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::zeros_like(self.params);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node<'a>, g_owned: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let g = &g_owned;
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &t),
                slot => *slot = Some(t),
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate(id, g),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(a), val(b));
                if wants(a) {
                    let mut ga = Tensor::zeros(va.rows(), va.cols());
                    gemm(g, false, vb, true, &mut ga, 0.0);
                    acc(a, ga);
                }
                if wants(b) {
                    let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                    gemm(va, true, g, false, &mut gb, 0.0);
                    acc(b, gb);
                }
            }
            Op::AddBias(a, bias) => {
                if wants(bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    acc(bias, gb);
                }
                acc(a, g_owned);
            }
            Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g_owned);
            }
            Op::Sub(a, b) => {
                acc(b, g.map(|v| -v));
                acc(a, g_owned);
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    acc(a, zip_map(g, val(b), |x, y| x * y));
                }
                if wants(b) {
                    acc(b, zip_map(g, val(a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => {
                let mut t = g_owned;
                t.data_mut().iter_mut().for_each(|v| *v *= s);
                acc(a, t);
            }
            Op::Act(a, kind) => {
                let mut t = g_owned;
                for (gv, &y) in t.data_mut().iter_mut().zip(node.value.data()) {
                    *gv *= kind.derivative_at_output(y);
                }
                acc(a, t);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let cb = val(b).cols();
                let mut ga = Tensor::zeros(g.rows(), ca);
                let mut gb = Tensor::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                acc(a, ga);
                acc(b, gb);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    softmax_backward(y.row(r), g.row(r), ga.row_mut(r));
                }
                acc(a, ga);
            }
            Op::Mean(a) => {
                let va = val(a);
                let s = g.data()[0] / va.len().max(1) as f64;
                acc(a, Tensor::filled(va.rows(), va.cols(), s));
            }
            Op::MseLoss(pred, target) => {
                let vp = val(pred);
                let s = 2.0 * g.data()[0] / vp.len().max(1) as f64;
                acc(pred, zip_map(vp, target, |p, t| s * (p - t)));
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            } => {
                let vl = val(logits);
                let total_w: f64 = weights.iter().sum();
                let mut gl = Tensor::zeros(vl.rows(), vl.cols());
                if total_w > 0.0 {
                    let scale = g.data()[0] / total_w;
                    for r in 0..vl.rows() {
                        if weights[r] == 0.0 {
                            continue;
                        }
                        let mut p = vl.row(r).to_vec();
                        softmax_in_place(&mut p);
                        let t = targets.row(r);
                        let mass: f64 = t.iter().sum();
                        for (c, o) in gl.row_mut(r).iter_mut().enumerate() {
                            *o = scale * weights[r] * (p[c] * mass - t[c]);
                        }
                    }
                }
                acc(logits, gl);
            }
            Op::Propagate(x, adj) => {
                let n = adj.n_nodes();
                let f = g.cols();
                let mut gx = Tensor::zeros(g.rows(), f);
                for b in 0..g.rows() / n {
                    for i in 0..n {
                        let o = (b * n + i) * f;
                        for e in adj.edge_range(i) {
                            let w = adj.weight(e);
                            let s = (b * n + adj.source(e)) * f;
                            for k in 0..f {
                                gx.data_mut()[s + k] += w * g.data()[o + k];
                            }
                        }
                    }
                }
                acc(x, gx);
            }
            Op::EdgeScores(scores, adj) => {
                let n = adj.n_nodes();
                let mut gs = Tensor::zeros(g.rows() * n, 2);
                for b in 0..g.rows() {
                    for i in 0..n {
                        for e in adj.edge_range(i) {
                            let ge = g[(b, e)];
                            gs[(b * n + i, 0)] += ge;
                            gs[(b * n + adj.source(e), 1)] += ge;
                        }
                    }
                }
                acc(scores, gs);
            }
            Op::EdgeSoftmax(logits, adj) => {
                let y = &node.value;
                let mut gl = Tensor::zeros(y.rows(), y.cols());
                for b in 0..y.rows() {
                    for i in 0..adj.n_nodes() {
                        let range = adj.edge_range(i);
                        softmax_backward(&y.row(b)[range.clone()], &g.row(b)[range.clone()], &mut gl.row_mut(b)[range]);
                    }
                }
                acc(logits, gl);
            }
            Op::EdgeAggregate(coef, z, adj) => {
                let (vc, vz) = (val(coef), val(z));
                let n = adj.n_nodes();
                let f = vz.cols();
                let mut gc = Tensor::zeros(vc.rows(), vc.cols());
                let mut gz = Tensor::zeros(vz.rows(), f);
                for b in 0..vc.rows() {
                    for i in 0..n {
                        let o = (b * n + i) * f;
                        let go = &g.data()[o..o + f];
                        for e in adj.edge_range(i) {
                            let s = (b * n + adj.source(e)) * f;
                            let zs = &vz.data()[s..s + f];
                            gc[(b, e)] = go.iter().zip(zs).map(|(a, b)| a * b).sum();
                            let w = vc[(b, e)];
                            for (dst, gv) in gz.data_mut()[s..s + f].iter_mut().zip(go) {
                                *dst += w * gv;
                            }
                        }
                    }
                }
                acc(coef, gc);
                acc(z, gz);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes checked on the forward pass")
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn softmax_backward(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yv), &gv) in out.iter_mut().zip(y).zip(g) {
        *o = yv * (gv - dot);
    }
}
