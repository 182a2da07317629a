use rayon::prelude::*;

use super::{matmul_into, Tensor};
use crate::error::{GscError, Result};
use crate::ot::{self, PlanGradient, SinkhornTrace, TransportPlan};

pub use crate::ot::SinkhornOptions;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    LeakyRelu(Var, f64),
    Prelu(Var, Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    RowNorms(Var),
    NormalizeRows(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    AddN(Vec<Var>),
    Sinkhorn { cost: Var, trace: Option<Box<SinkhornTrace>> },
    Gromov { c1: Var, c2: Var, plan: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Linear record of executed primitives.
///
/// Nodes are appended in execution order, so every node appears after the
/// nodes it reads; [`Tape::backward`] walks the vector in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    zero_norm_rows: usize,
}

/// Gradients of a scalar root with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    numel: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; self.numel[v.0]], <[f64]>::to_vec)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GscError::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = t.clone();
    out.requires_grad = false;
    out.grad = None;
    out.data.iter_mut().for_each(|v| *v = f(*v));
    out
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Rows that hit a zero norm in [`Tape::normalize_rows`] so far.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a leaf; gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad;
        self.push(t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    /// Records a leaf that always tracks gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let needs = self.needs(&[a]);
        self.push(out, Op::Transpose(a), needs)
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape.clone(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = map(self.value(a), |x| c * x);
        let needs = self.needs(&[a]);
        self.push(out, Op::Scale(a, c), needs)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = map(self.value(a), |x| x + c);
        let needs = self.needs(&[a]);
        self.push(out, Op::AddScalar(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::exp);
        let needs = self.needs(&[a]);
        self.push(out, Op::Exp(a), needs)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::ln);
        let needs = self.needs(&[a]);
        self.push(out, Op::Log(a), needs)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = map(self.value(a), |x| if x > 0.0 { x } else { slope * x });
        let needs = self.needs(&[a]);
        self.push(out, Op::LeakyRelu(a, slope), needs)
    }

    /// PReLU with a learnable single-element slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.value(slope).numel() != 1 {
            return Err(GscError::dim("prelu", "slope must have one element"));
        }
        let s = self.value(slope).item();
        let out = map(self.value(a), |x| if x > 0.0 { x } else { s * x });
        let needs = self.needs(&[a, slope]);
        Ok(self.push(out, Op::Prelu(a, slope), needs))
    }

    /// Softmax over all elements, treated as one sequence.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let max = x.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = map(x, |v| (v - max).exp());
        let z: f64 = out.data.iter().sum();
        out.data.iter_mut().for_each(|v| *v /= z);
        let needs = self.needs(&[a]);
        self.push(out, Op::Softmax(a), needs)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(GscError::dim("concat", "no inputs"));
        };
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(GscError::dim("concat", "row counts differ"));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        let needs = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(GscError::dim("concat_rows", "no inputs"));
        };
        let cols = self.value(*first).cols();
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(GscError::dim("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::matrix(data.len() / cols, cols, data)?;
        let needs = self.needs(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2();
        if idx.is_empty() {
            return Err(GscError::dim("gather_rows", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(GscError::dim("gather_rows", format!("row {bad} out of {r}")));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::matrix(idx.len(), c, data)?;
        let needs = self.needs(&[a]);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), needs))
    }

    /// Euclidean norm of each row, as an `n x 1` column.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data: Vec<f64> = (0..x.rows()).map(|r| l2(x.row(r))).collect();
        let out = Tensor { shape: vec![data.len(), 1], data, requires_grad: false, grad: None };
        let needs = self.needs(&[a]);
        self.push(out, Op::RowNorms(a), needs)
    }

    /// Scales each row to unit norm. Zero rows stay zero and are counted.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.dims2();
        let mut out = map(x, |v| v);
        let mut zeros = 0;
        for i in 0..r {
            let row = &mut out.data[i * c..(i + 1) * c];
            let n = l2(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            } else {
                zeros += 1;
            }
        }
        self.zero_norm_rows += zeros;
        let needs = self.needs(&[a]);
        self.push(out, Op::NormalizeRows(a), needs)
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = map(self.value(a), |x| x.clamp(lo, hi));
        let needs = self.needs(&[a]);
        self.push(out, Op::Clamp(a, lo, hi), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data.iter().sum::<f64>() / x.numel() as f64;
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Sum of same-shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(GscError::dim("add_n", "no inputs"));
        };
        let mut out = map(self.value(*first), |v| v);
        for p in &parts[1..] {
            let t = self.value(*p);
            same_shape("add_n", &out, t)?;
            out.data.iter_mut().zip(&t.data).for_each(|(o, v)| *o += v);
        }
        let needs = self.needs(parts);
        Ok(self.push(out, Op::AddN(parts.to_vec()), needs))
    }

    /// Entropic transport plan for `cost` with uniform marginals.
    ///
    /// Under [`PlanGradient::Unrolled`] the backward pass differentiates
    /// through every recorded Sinkhorn iteration; under
    /// [`PlanGradient::Fixed`] the plan is a constant of the loss.
    pub fn sinkhorn(&mut self, cost: Var, opts: &SinkhornOptions, mode: PlanGradient) -> Result<(Var, TransportPlan)> {
        let mut out = self.sinkhorn_many(&[cost], opts, mode)?;
        Ok(out.pop().expect("one plan per cost"))
    }

    /// Solves several independent transport problems in parallel.
    pub fn sinkhorn_many(
        &mut self,
        costs: &[Var],
        opts: &SinkhornOptions,
        mode: PlanGradient,
    ) -> Result<Vec<(Var, TransportPlan)>> {
        let keep = mode == PlanGradient::Unrolled;
        let solved: Vec<Result<(TransportPlan, SinkhornTrace)>> = costs
            .par_iter()
            .map(|&c| {
                let cost = &self.nodes[c.0].value;
                let (n, m) = cost.dims2();
                ot::sinkhorn_traced(cost, &ot::uniform(n), &ot::uniform(m), opts, keep)
            })
            .collect();
        let mut out = Vec::with_capacity(costs.len());
        for (&c, res) in costs.iter().zip(solved) {
            let (plan, trace) = res?;
            let needs = keep && self.needs(&[c]);
            let trace = needs.then(|| Box::new(trace));
            let v = self.push(plan.plan.clone(), Op::Sinkhorn { cost: c, trace }, needs);
            out.push((v, plan));
        }
        Ok(out)
    }

    /// Gromov-Wasserstein discrepancy of intra-distance matrices under a
    /// given plan (absolute-difference ground cost).
    pub fn gromov_wasserstein(&mut self, c1: Var, c2: Var, plan: Var) -> Result<Var> {
        let d = ot::gromov_wasserstein(self.value(c1), self.value(c2), self.value(plan))?;
        let needs = self.needs(&[c1, c2, plan]);
        Ok(self.push(Tensor::scalar(d), Op::Gromov { c1, c2, plan }, needs))
    }

    /// Reverse pass from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.numel() != 1 {
            return Err(GscError::contract(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let numel: Vec<usize> = self.nodes.iter().map(|n| n.value.numel()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(vec![1.0]);
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads, numel })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (n, k) = ta.dims2();
                let m = tb.cols();
                acc(*a, &mut |ga| {
                    // dA = G * B^T
                    for i in 0..n {
                        for p in 0..k {
                            let brow = &tb.data[p * m..(p + 1) * m];
                            let grow = &g[i * m..(i + 1) * m];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    // dB = A^T * G
                    let at = ta.transpose();
                    matmul_into(&at.data, g, gb, k, n, m);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = y.dims2();
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * tb[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * ta[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += c * v)),
            Op::AddScalar(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Exp(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * y.data[i];
                }
            }),
            Op::Log(a) => {
                let x = &nodes[a.0].value.data;
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / x[i];
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = &nodes[a.0].value.data;
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += if x[i] > 0.0 { g[i] } else { slope * g[i] };
                    }
                });
            }
            Op::Prelu(a, s) => {
                let x = &nodes[a.0].value.data;
                let slope = nodes[s.0].value.item();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += if x[i] > 0.0 { g[i] } else { slope * g[i] };
                    }
                });
                acc(*s, &mut |gs| {
                    gs[0] += x.iter().zip(g).filter(|(x, _)| **x <= 0.0).map(|(x, g)| x * g).sum::<f64>();
                });
            }
            Op::Softmax(a) => {
                let dot: f64 = g.iter().zip(&y.data).map(|(g, y)| g * y).sum();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += y.data[i] * (g[i] - dot);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = y.dims2();
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].value.cols();
                    acc(*p, &mut |gp| {
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.numel();
                    acc(*p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GatherRows(a, idx) => {
                let c = y.cols();
                acc(*a, &mut |ga| {
                    for (k, &i) in idx.iter().enumerate() {
                        add_into(&mut ga[i * c..(i + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::RowNorms(a) => {
                let x = &nodes[a.0].value;
                let c = x.cols();
                acc(*a, &mut |ga| {
                    for r in 0..x.rows() {
                        let n = y.data[r];
                        if n > 0.0 {
                            for j in 0..c {
                                ga[r * c + j] += g[r] * x.data[r * c + j] / n;
                            }
                        }
                    }
                });
            }
            Op::NormalizeRows(a) => {
                let x = &nodes[a.0].value;
                let c = x.cols();
                acc(*a, &mut |ga| {
                    for r in 0..x.rows() {
                        let n = l2(x.row(r));
                        if n == 0.0 {
                            continue;
                        }
                        let yr = &y.data[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            ga[r * c + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = &nodes[a.0].value.data;
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] >= *lo && x[i] <= *hi {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].value.numel() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::AddN(parts) => {
                for p in parts {
                    acc(*p, &mut |gp| add_into(gp, g));
                }
            }
            Op::Sinkhorn { cost, trace } => {
                if let Some(trace) = trace {
                    let c = &nodes[cost.0].value;
                    let gc = ot::sinkhorn_vjp(c, trace, y, g);
                    acc(*cost, &mut |o| add_into(o, &gc));
                }
            }
            Op::Gromov { c1, c2, plan } => {
                let (t1, t2, tp) = (&nodes[c1.0].value, &nodes[c2.0].value, &nodes[plan.0].value);
                let vjp = ot::gromov_vjp(t1, t2, tp);
                acc(*c1, &mut |o| o.iter_mut().zip(&vjp.c1).for_each(|(o, v)| *o += g[0] * v));
                acc(*c2, &mut |o| o.iter_mut().zip(&vjp.c2).for_each(|(o, v)| *o += g[0] * v));
                acc(*plan, &mut |o| o.iter_mut().zip(&vjp.plan).for_each(|(o, v)| *o += g[0] * v));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
