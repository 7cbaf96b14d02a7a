use std::cell::{Ref, RefCell};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::rc::Rc;

use super::{axis_extents, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
///
/// A `Var` is only meaningful for the graph that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax {
        x: Var,
        temperature: f64,
    },
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    SumAxis {
        x: Var,
        axis: usize,
        mean: bool,
    },
    SumAll(Var),
    Gather {
        x: Var,
        indices: Rc<Vec<usize>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Gelu(..) => "gelu",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::SumAxis { mean: false, .. } => "sum_axis",
            Op::SumAxis { mean: true, .. } => "mean_axis",
            Op::SumAll(..) => "sum_all",
            Op::Gather { .. } => "gather",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only tape of primitive operations.
///
/// Nodes are pushed in evaluation order, so parents always precede children
/// and the reverse sweep is a single backwards walk over the tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Result of [`Graph::backward`]: the gradient of the root with respect to
/// every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when `var` does not reach the root.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Whether `var` lies on some path to the root.
    pub fn reaches(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn gelu_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
        None => *slot = Some(contribution.to_vec()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                context: op.name().to_string(),
            });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Ok(Var(nodes.len() - 1))
    }

    fn val(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    /// Borrowed view of a node's forward value.
    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        self.val(v)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.val(v).shape().to_vec()
    }

    /// Registers an input or parameter.
    pub fn leaf(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).zip_map(&self.val(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b))
    }

    /// Adds `bias[n]` to every length-`n` slice along the last axis of `x`.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let out = {
            let xv = self.val(x);
            let bv = self.val(bias);
            let n = *xv.shape().last().unwrap_or(&0);
            if bv.shape() != [n] {
                return Err(Error::shape(format!(
                    "bias {:?} for input {:?}",
                    bv.shape(),
                    xv.shape()
                )));
            }
            let data = xv
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + bv.data()[i % n])
                .collect();
            Tensor::new(xv.shape().to_vec(), data)?
        };
        self.push(out, Op::AddBias(x, bias))
    }

    pub fn scale(&self, a: Var, factor: f64) -> Result<Var> {
        let out = self.val(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).zip_map(&self.val(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let av = self.val(a);
            let bv = self.val(b);
            let (m, k, n) = match (av.shape(), bv.shape()) {
                ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
                (sa, sb) => {
                    return Err(Error::shape(format!("matmul of {sa:?} and {sb:?}")));
                }
            };
            let mut data = vec![0.0; m * n];
            let (ad, bd) = (av.data(), bv.data());
            for i in 0..m {
                let row = &mut data[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for (o, &b) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *o += aip * b;
                    }
                }
            }
            Tensor::new(vec![m, n], data)?
        };
        self.push(out, Op::MatMul(a, b))
    }

    /// Transpose of a matrix.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = {
            let av = self.val(a);
            let &[m, n] = av.shape() else {
                return Err(Error::shape(format!("transpose of {:?}", av.shape())));
            };
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    data[j * m + i] = av.data()[i * n + j];
                }
            }
            Tensor::new(vec![n, m], data)?
        };
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(a).reshape(shape)?;
        self.push(out, Op::Reshape(a))
    }

    /// Temperature softmax along the last axis, max-subtracted.
    pub fn softmax(&self, x: Var, temperature: f64) -> Result<Var> {
        let out = softmax_last(&self.val(x), temperature)?;
        self.push(out, Op::Softmax { x, temperature })
    }

    pub fn log_softmax(&self, x: Var) -> Result<Var> {
        let out = {
            let xv = self.val(x);
            let n = last_dim(&xv)?;
            let mut data = xv.data().to_vec();
            for row in data.chunks_mut(n) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            Tensor::new(xv.shape().to_vec(), data)?
        };
        self.push(out, Op::LogSoftmax(x))
    }

    pub fn layernorm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, normalized, inv_std) = {
            let xv = self.val(x);
            let gv = self.val(gain);
            let bv = self.val(bias);
            let d = last_dim(&xv)?;
            if gv.shape() != [d] || bv.shape() != [d] {
                return Err(Error::shape(format!(
                    "layernorm over {:?} with gain {:?} and bias {:?}",
                    xv.shape(),
                    gv.shape(),
                    bv.shape()
                )));
            }
            let mut normalized = Vec::with_capacity(xv.numel());
            let mut inv_std = Vec::with_capacity(xv.numel() / d.max(1));
            for row in xv.data().chunks(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std.push(istd);
                normalized.extend(row.iter().map(|v| (v - mean) * istd));
            }
            let data = normalized
                .iter()
                .enumerate()
                .map(|(i, &h)| h * gv.data()[i % d] + bv.data()[i % d])
                .collect();
            (Tensor::new(xv.shape().to_vec(), data)?, normalized, inv_std)
        };
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        )
    }

    /// Exact (erf) Gaussian error linear unit.
    pub fn gelu(&self, x: Var) -> Result<Var> {
        let out = self.val(x).map(|v| v * gelu_cdf(v));
        self.push(out, Op::Gelu(x))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let out = {
            let vals: Vec<_> = parts.iter().map(|&p| self.val(p)).collect();
            let first = vals
                .first()
                .ok_or_else(|| Error::shape("concat of zero tensors"))?;
            let base = first.shape();
            if axis >= base.len() {
                return Err(Error::shape(format!("concat axis {axis} for {base:?}")));
            }
            let mut total = 0;
            for v in &vals {
                let s = v.shape();
                let compatible = s.len() == base.len()
                    && s.iter()
                        .zip(base)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::shape(format!("concat of {base:?} with {s:?}")));
                }
                total += s[axis];
            }
            let mut shape = base.to_vec();
            shape[axis] = total;
            let (outer, _, inner) = axis_extents(&shape, axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for v in &vals {
                    let chunk = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::new(shape, data)?
        };
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    pub fn concat_last(&self, parts: &[Var]) -> Result<Var> {
        let axis = parts
            .first()
            .map(|&p| self.val(p).rank().saturating_sub(1))
            .unwrap_or(0);
        self.concat(parts, axis)
    }

    /// `len` entries of `x` along `axis`, starting at `start`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = {
            let xv = self.val(x);
            let shape = xv.shape();
            if axis >= shape.len() || start + len > shape[axis] {
                return Err(Error::shape(format!(
                    "slice [{start}, {}) on axis {axis} of {shape:?}",
                    start + len
                )));
            }
            let (outer, n, inner) = axis_extents(shape, axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                data.extend_from_slice(&xv.data()[base..base + len * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            Tensor::new(out_shape, data)?
        };
        self.push(out, Op::Slice { x, axis, start })
    }

    pub fn slice_last(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let axis = self.val(x).rank().saturating_sub(1);
        self.slice(x, axis, start, len)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    fn reduce_axis(&self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let out = {
            let xv = self.val(x);
            let shape = xv.shape();
            if axis >= shape.len() {
                return Err(Error::shape(format!("reduce axis {axis} of {shape:?}")));
            }
            let (outer, n, inner) = axis_extents(shape, axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..n {
                    let src = &xv.data()[(o * n + i) * inner..(o * n + i + 1) * inner];
                    for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            if mean {
                data.iter_mut().for_each(|v| *v /= n as f64);
            }
            let mut out_shape = shape.to_vec();
            out_shape.remove(axis);
            Tensor::new(out_shape, data)?
        };
        self.push(out, Op::SumAxis { x, axis, mean })
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(x).sum());
        self.push(out, Op::SumAll(x))
    }

    /// `out[i] = x.flat[indices[i]]`, reshaped to `shape`.
    pub fn gather(&self, x: Var, indices: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let out = {
            let xv = self.val(x);
            if let Some(&bad) = indices.iter().find(|&&i| i >= xv.numel()) {
                return Err(Error::shape(format!(
                    "gather index {bad} into {} elements",
                    xv.numel()
                )));
            }
            let data = indices.iter().map(|&i| xv.data()[i]).collect();
            Tensor::new(shape.to_vec(), data)?
        };
        self.push(out, Op::Gather { x, indices })
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_node = nodes
            .get(root.0)
            .ok_or_else(|| Error::Contract(format!("root {root:?} is not on this graph")))?;
        if root_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::AddBias(x, b) => {
                    let n = nodes[b.0].value.numel();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    accumulate(&mut grads[x.0], &g);
                    accumulate(&mut grads[b.0], &gb);
                }
                Op::Scale(a, s) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * s).collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(&mut grads[a.0], &ga);
                    accumulate(&mut grads[b.0], &gb);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    let (ad, bd) = (av.data(), bv.data());
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            let aip = ad[i * k + p];
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], &ga);
                    accumulate(&mut grads[b.0], &gb);
                }
                Op::Transpose(a) => {
                    // out is [n, m]; input was [m, n]
                    let (n, m) = (out.shape()[0], out.shape()[1]);
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = g[j * m + i];
                        }
                    }
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Reshape(a) => accumulate(&mut grads[a.0], &g),
                Op::Softmax { x, temperature } => {
                    let n = *out.shape().last().unwrap();
                    let mut gx = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(n).zip(out.data().chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        gx.extend(
                            gr.iter()
                                .zip(yr)
                                .map(|(gi, yi)| yi * (gi - dot) / temperature),
                        );
                    }
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::LogSoftmax(x) => {
                    let n = *out.shape().last().unwrap();
                    let mut gx = Vec::with_capacity(g.len());
                    for (gr, lr) in g.chunks(n).zip(out.data().chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        gx.extend(gr.iter().zip(lr).map(|(gi, li)| gi - li.exp() * total));
                    }
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let gain_v = nodes[gain.0].value.data();
                    let d = gain_v.len();
                    let mut gx = Vec::with_capacity(g.len());
                    let mut gg = vec![0.0; d];
                    let mut gbias = vec![0.0; d];
                    for ((gr, hr), istd) in g.chunks(d).zip(normalized.chunks(d)).zip(inv_std) {
                        let dh: Vec<f64> = gr.iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h =
                            dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        gx.extend(
                            dh.iter()
                                .zip(hr)
                                .map(|(dhi, hi)| istd * (dhi - mean_dh - hi * mean_dh_h)),
                        );
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                            gbias[j] += gr[j];
                        }
                    }
                    accumulate(&mut grads[x.0], &gx);
                    accumulate(&mut grads[gain.0], &gg);
                    accumulate(&mut grads[bias.0], &gbias);
                }
                Op::Gelu(x) => {
                    let xv = nodes[x.0].value.data();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(gi, &v)| gi * (gelu_cdf(v) + v * gelu_pdf(v)))
                        .collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = axis_extents(out.shape(), *axis);
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.shape()[*axis];
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        accumulate(&mut grads[p.0], &gp);
                        offset += len;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xshape = nodes[x.0].value.shape();
                    let (outer, n, inner) = axis_extents(xshape, *axis);
                    let len = out.shape()[*axis];
                    let mut gx = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        let dst = (o * n + start) * inner;
                        let src = o * len * inner;
                        gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::SumAxis { x, axis, mean } => {
                    let (outer, n, inner) = axis_extents(nodes[x.0].value.shape(), *axis);
                    let factor = if *mean { 1.0 / n as f64 } else { 1.0 };
                    let mut gx = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        for _ in 0..n {
                            gx.extend(g[o * inner..(o + 1) * inner].iter().map(|v| v * factor));
                        }
                    }
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::SumAll(x) => {
                    let gx = vec![g[0]; nodes[x.0].value.numel()];
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Gather { x, indices } => {
                    let mut gx = vec![0.0; nodes[x.0].value.numel()];
                    for (gi, &idx) in g.iter().zip(indices.iter()) {
                        gx[idx] += gi;
                    }
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn last_dim(t: &Tensor) -> Result<usize> {
    match t.shape().last() {
        Some(&n) if n > 0 => Ok(n),
        _ => Err(Error::shape(format!(
            "operation needs a non-empty last axis, got {:?}",
            t.shape()
        ))),
    }
}

/// Temperature softmax over the last axis of a plain tensor.
pub(crate) fn softmax_last(x: &Tensor, temperature: f64) -> Result<Tensor> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::param(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let n = last_dim(x)?;
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(x.shape().to_vec(), data)
}
