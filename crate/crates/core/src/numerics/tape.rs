//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value and whatever it
//! needs for the backward pass. Node ids are assigned in creation order, so the
//! tape is acyclic by construction and reverse id order is a valid reverse
//! topological order.

use super::tensor::{gemm, Tensor};
use crate::error::{CraneError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Running statistics for one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl BnStats {
    pub fn new(dim: usize) -> Self {
        BnStats { mean: vec![0.0; dim], var: vec![1.0; dim] }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Outer(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Mean(Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    Index(Var, usize),
    Stack(Vec<Var>),
    Row(Var, usize),
    MinRatio { m: Var, a: Var, argmin: usize },
    Mae { pred: Var, truth: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dim_err(what: &str, a: &[usize], b: &[usize]) -> CraneError {
    CraneError::Dimension(format!("{what}: {a:?} vs {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs, parameters and constants all enter as leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(dim_err("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `x[n×d] + bias[d]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tx.cols();
        if tb.len() != d {
            return Err(dim_err("add_row", tx.shape(), tb.shape()));
        }
        let mut value = tx.clone();
        for row in value.data_mut().chunks_exact_mut(d) {
            row.iter_mut().zip(tb.data()).for_each(|(v, b)| *v += b);
        }
        Ok(self.push(value, Op::AddRow(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Per-feature normalization of `x[batch×d]` with scale `gamma[d]` and
    /// shift `beta[d]`. Train mode uses batch statistics and updates `stats`;
    /// infer mode reads `stats` only.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats,
        mode: BnMode,
    ) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(CraneError::Dimension(format!("batchnorm input {:?}", tx.shape())));
        }
        let (n, d) = (tx.shape()[0], tx.shape()[1]);
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.len() != d || tb.len() != d || stats.mean.len() != d || stats.var.len() != d {
            return Err(dim_err("batchnorm params", tx.shape(), tg.shape()));
        }
        let train = mode == BnMode::Train;
        if train && n < 2 {
            return Err(CraneError::DegenerateBatch(n));
        }
        let (mean, var) = if train {
            let mut mean = vec![0.0; d];
            for r in 0..n {
                for (j, m) in mean.iter_mut().enumerate() {
                    *m += tx.data()[r * d + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for r in 0..n {
                for (j, v) in var.iter_mut().enumerate() {
                    let c = tx.data()[r * d + j] - mean[j];
                    *v += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for j in 0..d {
                let h = (tx.data()[r * d + j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                out[r * d + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        if train {
            let unbiased = n as f64 / (n as f64 - 1.0);
            for j in 0..d {
                stats.mean[j] = (1.0 - BN_MOMENTUM) * stats.mean[j] + BN_MOMENTUM * mean[j];
                stats.var[j] = (1.0 - BN_MOMENTUM) * stats.var[j] + BN_MOMENTUM * var[j] * unbiased;
            }
        }
        let value = Tensor::matrix(n, d, out)?;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }))
    }

    /// `u ⊗ v` for vectors `u[H]`, `v[W]`, giving `[H×W]`.
    pub fn outer(&mut self, u: Var, v: Var) -> Var {
        let (tu, tv) = (self.value(u), self.value(v));
        let (h, w) = (tu.len(), tv.len());
        let mut out = Vec::with_capacity(h * w);
        for &a in tu.data() {
            out.extend(tv.data().iter().map(|&b| a * b));
        }
        let value = Tensor::new(vec![h, w], out).expect("outer shape");
        self.push(value, Op::Outer(u, v))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddConst(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(dim_err("add", ta.shape(), tb.shape()));
        }
        let mut value = ta.clone();
        value.axpy(1.0, tb);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(dim_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(value, Op::Mean(x))
    }

    /// `x * s` where `s` is a single-element node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(CraneError::Dimension(format!("mul_scalar by {:?}", ts.shape())));
        }
        let k = ts.item();
        let value = self.value(x).map(|v| v * k);
        Ok(self.push(value, Op::MulScalar(x, s)))
    }

    /// `x / s` where `s` is a single-element node.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(CraneError::Dimension(format!("div_scalar by {:?}", ts.shape())));
        }
        let k = ts.item();
        if k == 0.0 {
            return Err(CraneError::Domain("division by zero".into()));
        }
        let value = self.value(x).map(|v| v / k);
        Ok(self.push(value, Op::DivScalar(x, s)))
    }

    /// Flat element `i` as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if i >= t.len() {
            return Err(CraneError::Dimension(format!("index {i} of {:?}", t.shape())));
        }
        let value = Tensor::scalar(t.data()[i]);
        Ok(self.push(value, Op::Index(x, i)))
    }

    /// Concatenates equally sized nodes. Scalars stack into a vector `[n]`,
    /// vectors of length `d` stack into a matrix `[n×d]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| CraneError::Dimension("stack of nothing".into()))?;
        let d = self.value(*first).len();
        let mut data = Vec::with_capacity(d * parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.len() != d {
                return Err(dim_err("stack", self.value(*first).shape(), t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let shape = if d == 1 && self.value(*first).shape().is_empty() {
            vec![parts.len()]
        } else {
            vec![parts.len(), d]
        };
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Stack(parts.to_vec())))
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        let t = self.value(x);
        if r >= t.rows() {
            return Err(CraneError::Dimension(format!("row {r} of {:?}", t.shape())));
        }
        let value = Tensor::vector(t.row(r).to_vec());
        Ok(self.push(value, Op::Row(x, r)))
    }

    /// `min_{p,q} m[p][q] / a[p][q]`. The gradient flows through the first
    /// argmin in row-major order only.
    pub fn min_ratio(&mut self, m: Var, a: Var) -> Result<Var> {
        let (tm, ta) = (self.value(m), self.value(a));
        if tm.shape() != ta.shape() {
            return Err(dim_err("min_ratio", tm.shape(), ta.shape()));
        }
        let (q, argmin) = min_ratio_values(tm.data(), ta.data())?;
        Ok(self.push(Tensor::scalar(q), Op::MinRatio { m, a, argmin }))
    }

    /// Mean absolute error against constant targets.
    pub fn mae_loss(&mut self, pred: Var, truth: &[f64]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.is_empty() {
            return Err(CraneError::Parameter("mae_loss of an empty prediction".into()));
        }
        if tp.len() != truth.len() {
            return Err(CraneError::Dimension(format!(
                "mae_loss: {} predictions, {} targets",
                tp.len(),
                truth.len()
            )));
        }
        let loss = mae(tp.data(), truth);
        Ok(self.push(Tensor::scalar(loss), Op::Mae { pred, truth: truth.to_vec() }))
    }

    /// Backpropagates a unit seed from `root`.
    pub fn backward(&self, root: Var) -> Grads {
        let seed = Tensor::filled(self.value(root).shape(), 1.0);
        self.backward_seeded(&[(root, seed)])
    }

    /// Backpropagates explicit upstream gradients. Used when part of the graph
    /// was differentiated outside the tape.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Grads {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g);
            top = top.max(v.0 + 1);
        }
        for id in (0..top).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads { grads }
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, 1.0, g.data(), false, tb.data(), true, 0.0, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, 1.0, ta.data(), true, g.data(), false, 0.0, &mut gb);
                accumulate_raw(grads, *a, ta.shape(), ga);
                accumulate_raw(grads, *b, tb.shape(), gb);
            }
            Op::AddRow(x, bias) => {
                let tb = self.value(*bias);
                let d = tb.len();
                let mut gb = vec![0.0; d];
                for row in g.data().chunks_exact(d) {
                    gb.iter_mut().zip(row).for_each(|(b, v)| *b += v);
                }
                accumulate(grads, *x, g);
                accumulate_raw(grads, *bias, tb.shape(), gb);
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let gx = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate_raw(grads, *x, tx.shape(), gx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let (n, d) = (tx.shape()[0], tx.shape()[1]);
                let mut ggamma = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                for r in 0..n {
                    for j in 0..d {
                        let gv = g.data()[r * d + j];
                        ggamma[j] += gv * xhat[r * d + j];
                        gbeta[j] += gv;
                    }
                }
                let mut gx = vec![0.0; n * d];
                for r in 0..n {
                    for j in 0..d {
                        let gh = g.data()[r * d + j] * tg.data()[j];
                        gx[r * d + j] = if *train {
                            // d/dx of (x - mean)/std with batch statistics
                            let gsum = gbeta[j] * tg.data()[j];
                            let ghx = ggamma[j] * tg.data()[j];
                            inv_std[j] / n as f64
                                * (n as f64 * gh - gsum - xhat[r * d + j] * ghx)
                        } else {
                            gh * inv_std[j]
                        };
                    }
                }
                accumulate_raw(grads, *x, tx.shape(), gx);
                accumulate_raw(grads, *gamma, tg.shape(), ggamma);
                accumulate_raw(grads, *beta, self.value(*beta).shape(), gbeta);
            }
            Op::Outer(u, v) => {
                let (tu, tv) = (self.value(*u), self.value(*v));
                let (h, w) = (tu.len(), tv.len());
                let mut gu = vec![0.0; h];
                let mut gv = vec![0.0; w];
                for p in 0..h {
                    let row = &g.data()[p * w..(p + 1) * w];
                    gu[p] = row.iter().zip(tv.data()).map(|(a, b)| a * b).sum();
                    for (q, gq) in gv.iter_mut().enumerate() {
                        *gq += row[q] * tu.data()[p];
                    }
                }
                accumulate_raw(grads, *u, tu.shape(), gu);
                accumulate_raw(grads, *v, tv.shape(), gv);
            }
            Op::AddConst(x) => accumulate(grads, *x, g),
            Op::Scale(x, c) => {
                let gx = g.map(|v| v * c);
                accumulate(grads, *x, &gx);
            }
            Op::Add(a, b) => {
                accumulate_raw(grads, *a, self.value(*a).shape(), g.data().to_vec());
                accumulate_raw(grads, *b, self.value(*b).shape(), g.data().to_vec());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                accumulate_raw(grads, *a, ta.shape(), ga);
                accumulate_raw(grads, *b, tb.shape(), gb);
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                accumulate(grads, *x, &Tensor::filled(tx.shape(), g.item()));
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                accumulate(grads, *x, &Tensor::filled(tx.shape(), g.item() / tx.len() as f64));
            }
            Op::MulScalar(x, s) => {
                let (tx, k) = (self.value(*x), self.value(*s).item());
                let dot: f64 = g.data().iter().zip(tx.data()).map(|(a, b)| a * b).sum();
                accumulate(grads, *x, &g.map(|v| v * k));
                accumulate_raw(grads, *s, self.value(*s).shape(), vec![dot]);
            }
            Op::DivScalar(x, s) => {
                let (tx, k) = (self.value(*x), self.value(*s).item());
                let dot: f64 = g.data().iter().zip(tx.data()).map(|(a, b)| a * b).sum();
                accumulate(grads, *x, &g.map(|v| v / k));
                accumulate_raw(grads, *s, self.value(*s).shape(), vec![-dot / (k * k)]);
            }
            Op::Index(x, i) => {
                let tx = self.value(*x);
                let mut gx = vec![0.0; tx.len()];
                gx[*i] = g.item();
                accumulate_raw(grads, *x, tx.shape(), gx);
            }
            Op::Stack(parts) => {
                let d = g.len() / parts.len();
                for (k, p) in parts.iter().enumerate() {
                    let part = g.data()[k * d..(k + 1) * d].to_vec();
                    accumulate_raw(grads, *p, self.value(*p).shape(), part);
                }
            }
            Op::Row(x, r) => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                gx[r * c..(r + 1) * c].copy_from_slice(g.data());
                accumulate_raw(grads, *x, tx.shape(), gx);
            }
            Op::MinRatio { m, a, argmin } => {
                let (tm, ta) = (self.value(*m), self.value(*a));
                let (mv, av) = (tm.data()[*argmin], ta.data()[*argmin]);
                let mut gm = vec![0.0; tm.len()];
                let mut ga = vec![0.0; ta.len()];
                gm[*argmin] = g.item() / av;
                ga[*argmin] = -g.item() * mv / (av * av);
                accumulate_raw(grads, *m, tm.shape(), gm);
                accumulate_raw(grads, *a, ta.shape(), ga);
            }
            Op::Mae { pred, truth } => {
                let tp = self.value(*pred);
                let gp = mae_grad(tp.data(), truth, g.item());
                accumulate_raw(grads, *pred, tp.shape(), gp);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.axpy(1.0, g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn accumulate_raw(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape")),
    }
}

/// Minimum ratio and its first row-major argmin.
pub fn min_ratio_values(m: &[f64], a: &[f64]) -> Result<(f64, usize)> {
    if m.is_empty() || m.len() != a.len() {
        return Err(CraneError::Dimension(format!("min_ratio over {} / {}", m.len(), a.len())));
    }
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (i, (&mv, &av)) in m.iter().zip(a).enumerate() {
        if av <= 0.0 || av.is_nan() {
            return Err(CraneError::Domain(format!("basis entry {av} at cell {i} is not positive")));
        }
        let r = mv / av;
        if r < best {
            best = r;
            arg = i;
        }
    }
    Ok((best, arg))
}

/// `max(floor(x / θ), 0)`. Treated as a constant by every backward pass.
pub fn floor_div_clip(x: f64, theta: f64) -> Result<u64> {
    if theta <= 0.0 || theta.is_nan() {
        return Err(CraneError::Parameter(format!("carry threshold must be positive, got {theta}")));
    }
    let t = (x / theta).floor();
    Ok(if t.is_nan() || t <= 0.0 { 0 } else { t.min(u64::MAX as f64) as u64 })
}

pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Subgradient of [`mae`] scaled by `upstream`; zero at exact ties.
pub fn mae_grad(pred: &[f64], truth: &[f64], upstream: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                upstream / n
            } else if d < 0.0 {
                -upstream / n
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_forward() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = tape.leaf(t(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);

        let a = tape.leaf(t(&[&[1.0, 2.0]]));
        let b = tape.leaf(t(&[&[3.0], &[4.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);

        assert!(matches!(tape.matmul(a, a), Err(CraneError::Dimension(_))));
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_bt() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let b = tape.leaf(t(&[&[1.0, -1.0], &[2.0, 0.5], &[0.0, 3.0]]));
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c);
        let g = tape.backward(s);
        // row sums of b, repeated for each row of a
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 2.5, 3.0, 0.0, 2.5, 3.0]);
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        let g = tape.backward(s);
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn batchnorm_constant_column_and_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[&[3.0, 1.0], &[3.0, 2.0], &[3.0, 6.0]]));
        let gamma = tape.leaf(Tensor::vector(vec![1.0, 1.0]));
        let beta = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let mut stats = BnStats::new(2);
        let y = tape.batchnorm(x, gamma, beta, &mut stats, BnMode::Train).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(y).row(r)[0], 0.0);
        }
        assert!(stats.mean[0] > 0.0);

        let mut fresh = BnStats::new(2);
        let y = tape.batchnorm(x, gamma, beta, &mut fresh, BnMode::Infer).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
        }
        assert_eq!(fresh, BnStats::new(2));

        let one = tape.leaf(t(&[&[1.0, 2.0]]));
        assert!(matches!(
            tape.batchnorm(one, gamma, beta, &mut stats, BnMode::Train),
            Err(CraneError::DegenerateBatch(1))
        ));
    }

    #[test]
    fn outer_forward() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let v = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let o = tape.outer(u, v);
        assert_eq!(tape.value(o).shape(), &[2, 2]);
        assert_eq!(tape.value(o).data(), &[3.0, 4.0, 6.0, 8.0]);
        let z = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let o = tape.outer(z, v);
        assert!(tape.value(o).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn min_ratio_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[&[3.0, 4.0], &[6.0, 8.0]]));
        let m = tape.leaf(t(&[&[6.0, 8.0], &[12.0, 16.0]]));
        let q = tape.min_ratio(m, a).unwrap();
        assert_eq!(tape.value(q).item(), 2.0);
        let g = tape.backward(q);
        // ties resolve to the first cell
        assert_eq!(g.get(m).unwrap().data(), &[1.0 / 3.0, 0.0, 0.0, 0.0]);

        let m = tape.leaf(t(&[&[6.0, 18.0], &[12.0, 16.0]]));
        let q = tape.min_ratio(m, a).unwrap();
        assert_eq!(tape.value(q).item(), 2.0);

        let m = tape.leaf(Tensor::zeros(&[2, 2]));
        let q = tape.min_ratio(m, a).unwrap();
        assert_eq!(tape.value(q).item(), 0.0);

        let bad = tape.leaf(t(&[&[3.0, 0.0], &[6.0, 8.0]]));
        assert!(matches!(tape.min_ratio(m, bad), Err(CraneError::Domain(_))));
    }

    #[test]
    fn floor_div_clip_examples() {
        assert_eq!(floor_div_clip(9.0, 4.0).unwrap(), 2);
        assert_eq!(floor_div_clip(3.0, 4.0).unwrap(), 0);
        assert_eq!(floor_div_clip(4.0, 4.0).unwrap(), 1);
        assert_eq!(floor_div_clip(-5.0, 4.0).unwrap(), 0);
        assert_eq!(floor_div_clip(1e9, f64::INFINITY).unwrap(), 0);
        assert!(floor_div_clip(1.0, 0.0).is_err());
        assert!(floor_div_clip(1.0, -2.0).is_err());
    }

    #[test]
    fn mae_examples() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, 3.0]));
        let l = tape.mae_loss(p, &[2.0, 5.0]).unwrap();
        assert_eq!(tape.value(l).item(), 1.5);
        let l0 = tape.mae_loss(p, &[1.0, 3.0]).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);
        let g = tape.backward(l0);
        assert_eq!(g.get(p).unwrap().data(), &[0.0, 0.0]);
        let e = tape.leaf(Tensor::vector(vec![]));
        assert!(matches!(tape.mae_loss(e, &[]), Err(CraneError::Parameter(_))));
    }
}
