//! One task's store-then-query pass with a hand-fused backward.
//!
//! Memories start at zero, the support stream is stored in mini-batches with
//! conservative carry, and every query edge is decoded. Carry counts are
//! constants for differentiation, so each final memory is a fixed linear
//! combination of the layer's basis patterns:
//!
//! ```text
//! M^(1) = Σ_e (w_e − θ·T¹_B(e)) A¹_e
//! M^(i) = Σ_e (T^(i−1)_B(e) − θ·T^(i)_B(e)) A^i_e
//! ```
//!
//! The backward pass uses this form: gradients land on the final memories
//! through the query argmins, then spread to every stored pattern with two
//! GEMMs per layer. Only the encoder MLPs run on the tape.

use std::collections::HashMap;

use crate::encoders::{binary_encode, BinaryCode, EncoderVars, EMBED_DIM};
use crate::error::{CraneError, Result};
use crate::numerics::{gemm, mae, BnMode, Tape, Tensor, Var};
use crate::sketch::{Cell, CraneSketch, CELLS};

use super::tasks::Task;

/// Gradients for every trainable parameter of a sketch model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    /// Indexed `[2·layer + role][block]`, role 0 = origin, 1 = destination.
    pub encoders: Vec<Vec<Vec<f64>>>,
    pub w: Vec<f64>,
    pub b: f64,
}

impl ModelGrads {
    pub fn zeros_like<C: Cell>(model: &CraneSketch<C>) -> Self {
        ModelGrads {
            encoders: model
                .encoders()
                .nets()
                .map(|n| n.blocks.iter().map(|b| vec![0.0; b.len()]).collect())
                .collect(),
            w: vec![0.0; model.decoder().w.len()],
            b: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGrads, k: f64) {
        for (a, b) in self.encoders.iter_mut().flatten().zip(other.encoders.iter().flatten()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
        self.w.iter_mut().zip(&other.w).for_each(|(x, y)| *x += k * y);
        self.b += k * other.b;
    }

    pub fn is_finite(&self) -> bool {
        self.encoders.iter().flatten().flatten().all(|v| v.is_finite())
            && self.w.iter().all(|v| v.is_finite())
            && self.b.is_finite()
    }
}

#[derive(Clone, Debug)]
pub struct TaskOutput {
    pub loss: f64,
    pub preds: Vec<f64>,
    /// Per-query, per-layer estimates.
    pub q: Vec<Vec<f64>>,
    pub grads: Option<ModelGrads>,
}

struct Indexer {
    ids: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl Indexer {
    fn new() -> Self {
        Indexer { ids: Vec::new(), index: HashMap::new() }
    }

    fn get(&mut self, id: u32) -> usize {
        *self.index.entry(id).or_insert_with(|| {
            self.ids.push(id);
            self.ids.len() - 1
        })
    }

    fn codes(&self) -> Vec<BinaryCode> {
        self.ids.iter().map(|&i| binary_encode(i)).collect()
    }
}

struct LayerEmbeddings {
    eo: Vec<f64>,
    ed: Vec<f64>,
    so: Vec<f64>,
    sd: Vec<f64>,
    var_o: Var,
    var_d: Var,
    vars: [EncoderVars; 2],
}

impl LayerEmbeddings {
    fn eo(&self, o: usize) -> &[f64] {
        &self.eo[o * EMBED_DIM..(o + 1) * EMBED_DIM]
    }

    fn ed(&self, d: usize) -> &[f64] {
        &self.ed[d * EMBED_DIM..(d + 1) * EMBED_DIM]
    }

    /// Normalizer `s = Σe_o·Σe_d / (H·W) + ε`.
    fn norm(&self, o: usize, d: usize, eps: f64) -> f64 {
        self.so[o] * self.sd[d] / CELLS as f64 + eps
    }

    fn basis(&self, o: usize, d: usize, eps: f64, out: &mut [f64]) {
        let inv = 1.0 / self.norm(o, d, eps);
        let (eo, ed) = (self.eo(o), self.ed(d));
        for (p, &a) in eo.iter().enumerate() {
            let row = &mut out[p * EMBED_DIM..(p + 1) * EMBED_DIM];
            for (x, &b) in row.iter_mut().zip(ed) {
                *x = (a * b + eps) * inv;
            }
        }
    }
}

/// `min_c M[c] / A[c]` for `A = (e_o ⊗ e_d + ε)·inv_s`, without materializing
/// `A`. Returns the first row-major argmin.
pub(crate) fn basis_min_ratio<C: Cell>(mem: &[C], eo: &[f64], ed: &[f64], eps: f64, inv_s: f64) -> (f64, usize) {
    const LANES: usize = 8;
    let mut best = [f64::INFINITY; LANES];
    let mut arg = [0usize; LANES];
    for (p, &a) in eo.iter().enumerate() {
        let row = &mem[p * EMBED_DIM..(p + 1) * EMBED_DIM];
        for (c, (mchunk, dchunk)) in row.chunks_exact(LANES).zip(ed.chunks_exact(LANES)).enumerate() {
            for l in 0..LANES {
                let r = mchunk[l].to_f64() / ((a * dchunk[l] + eps) * inv_s);
                if r < best[l] {
                    best[l] = r;
                    arg[l] = p * EMBED_DIM + c * LANES + l;
                }
            }
        }
    }
    let mut q = f64::INFINITY;
    let mut at = usize::MAX;
    for l in 0..LANES {
        if best[l] < q || (best[l] == q && arg[l] < at) {
            q = best[l];
            at = arg[l];
        }
    }
    (q, at)
}

fn min_ratio_dense(mem: &[f64], a: &[f64]) -> f64 {
    mem.iter().zip(a).map(|(m, x)| m / x).fold(f64::INFINITY, f64::min)
}

/// Runs one task. `mode` selects batch-norm behaviour for the encoders; with
/// `want_grad` the gradient of the task loss with respect to every parameter
/// is returned as well. The model's own memories are not touched.
pub fn run_task<C: Cell>(
    model: &mut CraneSketch<C>,
    task: &Task,
    mode: BnMode,
    want_grad: bool,
) -> Result<TaskOutput> {
    if task.queries.is_empty() || task.queries.len() != task.truths.len() {
        return Err(CraneError::Parameter("task needs a non-empty query set with truths".into()));
    }
    let cfg = *model.config();
    let n = cfg.n_max;
    let eps = cfg.epsilon;
    let theta = cfg.theta;

    let mut origins = Indexer::new();
    let mut dests = Indexer::new();
    let support: Vec<(usize, usize, f64)> = task
        .support
        .iter()
        .map(|e| (origins.get(e.origin), dests.get(e.dest), e.weight))
        .collect();
    let queries: Vec<(usize, usize)> =
        task.queries.iter().map(|&(o, d)| (origins.get(o), dests.get(d))).collect();
    let (codes_o, codes_d) = (origins.codes(), dests.codes());
    let (no, nd) = (codes_o.len(), codes_d.len());

    let mut tape = Tape::new();
    let mut layers = Vec::with_capacity(n);
    for pair in model.encoders_mut().layers.iter_mut() {
        let bn_o = if mode == BnMode::Train && no >= 2 { BnMode::Train } else { BnMode::Infer };
        let bn_d = if mode == BnMode::Train && nd >= 2 { BnMode::Train } else { BnMode::Infer };
        let vars_o = pair.origin.register(&mut tape);
        let var_o = pair.origin.forward(&mut tape, &vars_o, &codes_o, bn_o)?;
        let vars_d = pair.dest.register(&mut tape);
        let var_d = pair.dest.forward(&mut tape, &vars_d, &codes_d, bn_d)?;
        let eo = tape.value(var_o).data().to_vec();
        let ed = tape.value(var_d).data().to_vec();
        let so = eo.chunks_exact(EMBED_DIM).map(|r| r.iter().sum()).collect();
        let sd = ed.chunks_exact(EMBED_DIM).map(|r| r.iter().sum()).collect();
        layers.push(LayerEmbeddings { eo, ed, so, sd, var_o, var_d, vars: [vars_o, vars_d] });
    }

    // Store phase, recording each edge's final coefficient per layer.
    let mut mem = vec![vec![0.0; CELLS]; n];
    let mut coef = vec![0.0; support.len() * n];
    let mut a = vec![0.0; CELLS];
    let mut write = vec![0.0; CELLS];
    let mut pattern = vec![0.0; CELLS];
    let mut next = vec![0.0; CELLS];
    for (bi, batch) in support.chunks(cfg.b_size).enumerate() {
        let base = bi * cfg.b_size;
        if batch.iter().all(|e| e.2 == 0.0) {
            continue;
        }
        write.fill(0.0);
        pattern.fill(0.0);
        for &(o, d, w) in batch {
            layers[0].basis(o, d, eps, &mut a);
            for ((wc, pc), x) in write.iter_mut().zip(pattern.iter_mut()).zip(&a) {
                *wc += w * x;
                *pc += x;
            }
        }
        mem[0].iter_mut().zip(&write).for_each(|(m, x)| *m += x);
        for (k, &(_, _, w)) in batch.iter().enumerate() {
            coef[(base + k) * n] = w;
        }
        let mut i = 0;
        while i + 1 < n {
            let t = cfg.carry_count(min_ratio_dense(&mem[i], &pattern));
            if t == 0 {
                break;
            }
            let t = t as f64;
            next.fill(0.0);
            for &(o, d, _) in batch {
                layers[i + 1].basis(o, d, eps, &mut a);
                next.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
            }
            let (lo, hi) = mem.split_at_mut(i + 1);
            for ((m_hi, m_lo), (nx, pt)) in hi[0].iter_mut().zip(lo[i].iter_mut()).zip(next.iter().zip(&pattern)) {
                *m_hi += t * nx;
                *m_lo -= theta * t * pt;
            }
            for k in 0..batch.len() {
                coef[(base + k) * n + i] -= theta * t;
                coef[(base + k) * n + i + 1] += t;
            }
            std::mem::swap(&mut pattern, &mut next);
            i += 1;
        }
    }

    // Query phase.
    let decoder = model.decoder().clone();
    let mut q = vec![vec![0.0; n]; queries.len()];
    let mut argmin = vec![vec![0usize; n]; queries.len()];
    let mut preds = Vec::with_capacity(queries.len());
    for (j, &(o, d)) in queries.iter().enumerate() {
        for (i, layer) in layers.iter().enumerate() {
            let inv_s = 1.0 / layer.norm(o, d, eps);
            let (qv, at) = basis_min_ratio(&mem[i], layer.eo(o), layer.ed(d), eps, inv_s);
            q[j][i] = qv;
            argmin[j][i] = at;
        }
        preds.push(decoder.apply(&q[j], n));
    }
    let loss = mae(&preds, &task.truths);
    if !loss.is_finite() {
        return Err(CraneError::NonFinite(format!("task loss {loss}")));
    }
    if !want_grad {
        return Ok(TaskOutput { loss, preds, q, grads: None });
    }

    let mut grads = ModelGrads::zeros_like(model);
    let nq = queries.len() as f64;
    let g: Vec<f64> = preds
        .iter()
        .zip(&task.truths)
        .map(|(p, t)| if p > t { 1.0 / nq } else if p < t { -1.0 / nq } else { 0.0 })
        .collect();
    for (j, gj) in g.iter().enumerate() {
        for i in 0..n {
            grads.w[i] += gj * q[j][i];
        }
        grads.b += gj;
    }

    let cells = CELLS as f64;
    let mut seeds = Vec::with_capacity(2 * n);
    for (i, layer) in layers.iter().enumerate() {
        let mut gm = vec![0.0; CELLS];
        let mut deo = vec![0.0; no * EMBED_DIM];
        let mut ded = vec![0.0; nd * EMBED_DIM];
        // Query-side terms: each estimate depends on one memory cell and one
        // basis cell.
        for (j, &(o, d)) in queries.iter().enumerate() {
            let h = g[j] * decoder.w[i];
            if h == 0.0 {
                continue;
            }
            let c = argmin[j][i];
            let (p, r) = (c / EMBED_DIM, c % EMBED_DIM);
            let s = layer.norm(o, d, eps);
            let (eo_p, ed_r) = (layer.eo(o)[p], layer.ed(d)[r]);
            let a_c = (eo_p * ed_r + eps) / s;
            gm[c] += h / a_c;
            let gamma = -h * q[j][i] / a_c;
            let d_s = -gamma * a_c / s;
            deo[o * EMBED_DIM + p] += gamma / s * ed_r;
            ded[d * EMBED_DIM + r] += gamma / s * eo_p;
            let (so, sd) = (layer.so[o], layer.sd[d]);
            deo[o * EMBED_DIM..(o + 1) * EMBED_DIM].iter_mut().for_each(|x| *x += d_s * sd / cells);
            ded[d * EMBED_DIM..(d + 1) * EMBED_DIM].iter_mut().for_each(|x| *x += d_s * so / cells);
        }
        // Store-side terms: M = Σ c_e A_e, so dL/dA_e = c_e·G_M.
        let mut u = vec![0.0; nd * EMBED_DIM];
        gemm(nd, EMBED_DIM, EMBED_DIM, 1.0, &layer.ed, false, &gm, true, 0.0, &mut u);
        let mut v = vec![0.0; no * EMBED_DIM];
        gemm(no, EMBED_DIM, EMBED_DIM, 1.0, &layer.eo, false, &gm, false, 0.0, &mut v);
        let gsum: f64 = gm.iter().sum();
        for (e, &(o, d, _)) in support.iter().enumerate() {
            let c = coef[e * n + i];
            if c == 0.0 {
                continue;
            }
            let s = layer.norm(o, d, eps);
            let ud = &u[d * EMBED_DIM..(d + 1) * EMBED_DIM];
            let vo = &v[o * EMBED_DIM..(o + 1) * EMBED_DIM];
            let z: f64 = layer.eo(o).iter().zip(ud).map(|(x, y)| x * y).sum::<f64>() + eps * gsum;
            let d_s = -c * z / (s * s);
            let (ko, kd) = (d_s * layer.sd[d] / cells, d_s * layer.so[o] / cells);
            let cs = c / s;
            for (x, y) in deo[o * EMBED_DIM..(o + 1) * EMBED_DIM].iter_mut().zip(ud) {
                *x += cs * y + ko;
            }
            for (x, y) in ded[d * EMBED_DIM..(d + 1) * EMBED_DIM].iter_mut().zip(vo) {
                *x += cs * y + kd;
            }
        }
        seeds.push((layer.var_o, Tensor::matrix(no, EMBED_DIM, deo)?));
        seeds.push((layer.var_d, Tensor::matrix(nd, EMBED_DIM, ded)?));
    }
    let tape_grads = tape.backward_seeded(&seeds);
    for (i, layer) in layers.iter().enumerate() {
        for role in 0..2 {
            let target = &mut grads.encoders[2 * i + role];
            for (k, var) in layer.vars[role].blocks.iter().enumerate() {
                if let Some(gv) = tape_grads.get(*var) {
                    target[k].copy_from_slice(gv.data());
                }
            }
        }
    }
    Ok(TaskOutput { loss, preds, q, grads: Some(grads) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn lane_min_ratio_matches_scalar_scan() {
        let mut rng = seeded(4);
        for trial in 0..50 {
            let eo: Vec<f64> = (0..EMBED_DIM).map(|_| rng.random::<f64>().max(0.3) - 0.3).collect();
            let ed: Vec<f64> = (0..EMBED_DIM).map(|_| rng.random::<f64>()).collect();
            let mut mem: Vec<f64> = (0..CELLS).map(|_| rng.random_range(0.0..5.0)).collect();
            if trial % 2 == 0 {
                mem.iter_mut().for_each(|m| *m = m.floor());
            }
            let eps = 1e-6;
            let inv = 0.7;
            let mut a = vec![0.0; CELLS];
            for p in 0..EMBED_DIM {
                for r in 0..EMBED_DIM {
                    a[p * EMBED_DIM + r] = (eo[p] * ed[r] + eps) * inv;
                }
            }
            let (q, at) = crate::numerics::min_ratio_values(&mem, &a).unwrap();
            assert_eq!(basis_min_ratio(&mem, &eo, &ed, eps, inv), (q, at));
        }
    }
}
