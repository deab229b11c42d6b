//! Helpers shared by integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use crane_core::encoders::{binary_encode, EncoderVars};
use crane_core::numerics::{BnMode, Tape, Tensor, Var};
use crane_core::sketch::{CraneSketch, CELLS};
use crane_core::training::{run_task, ModelGrads, Task};

/// Task loss and gradients computed entirely on the tape: every basis,
/// memory update, min-ratio and the decoder are recorded as tape nodes.
/// Slow, but independent of the fused backward.
pub fn tape_task_grads(model: &mut CraneSketch<f64>, task: &Task) -> (f64, ModelGrads) {
    let cfg = *model.config();
    let n = cfg.n_max;
    let mut o_ids: Vec<u32> = Vec::new();
    let mut d_ids: Vec<u32> = Vec::new();
    let mut o_idx = HashMap::new();
    let mut d_idx = HashMap::new();
    let mut index = |e: (u32, u32)| {
        let o = *o_idx.entry(e.0).or_insert_with(|| {
            o_ids.push(e.0);
            o_ids.len() - 1
        });
        let d = *d_idx.entry(e.1).or_insert_with(|| {
            d_ids.push(e.1);
            d_ids.len() - 1
        });
        (o, d)
    };
    let support: Vec<(usize, usize, f64)> = task
        .support
        .iter()
        .map(|e| {
            let (o, d) = index(e.key());
            (o, d, e.weight)
        })
        .collect();
    let queries: Vec<(usize, usize)> = task.queries.iter().map(|&k| index(k)).collect();
    let codes_o: Vec<_> = o_ids.iter().map(|&i| binary_encode(i)).collect();
    let codes_d: Vec<_> = d_ids.iter().map(|&i| binary_encode(i)).collect();

    let mut tape = Tape::new();
    let mut emb: Vec<(Var, Var)> = Vec::new();
    let mut vars: Vec<[EncoderVars; 2]> = Vec::new();
    for pair in model.encoders_mut().layers.iter_mut() {
        let mode_o = if codes_o.len() >= 2 { BnMode::Train } else { BnMode::Infer };
        let mode_d = if codes_d.len() >= 2 { BnMode::Train } else { BnMode::Infer };
        let vo = pair.origin.register(&mut tape);
        let eo = pair.origin.forward(&mut tape, &vo, &codes_o, mode_o).unwrap();
        let vd = pair.dest.register(&mut tape);
        let ed = pair.dest.forward(&mut tape, &vd, &codes_d, mode_d).unwrap();
        emb.push((eo, ed));
        vars.push([vo, vd]);
    }

    let mut cache: HashMap<(usize, usize, usize), Var> = HashMap::new();
    let mut basis = |tape: &mut Tape, layer: usize, o: usize, d: usize| -> Var {
        if let Some(v) = cache.get(&(layer, o, d)) {
            return *v;
        }
        let (eo_all, ed_all) = emb[layer];
        let eo = tape.row(eo_all, o).unwrap();
        let ed = tape.row(ed_all, d).unwrap();
        let outer = tape.outer(eo, ed);
        let r = tape.add_const(outer, cfg.epsilon);
        let so = tape.sum(eo);
        let sd = tape.sum(ed);
        let prod = tape.mul(so, sd).unwrap();
        let mean = tape.scale(prod, 1.0 / CELLS as f64);
        let s = tape.add_const(mean, cfg.epsilon);
        let a = tape.div_scalar(r, s).unwrap();
        cache.insert((layer, o, d), a);
        a
    };

    let mut mem: Vec<Var> = (0..n).map(|_| tape.leaf(Tensor::zeros(&[64, 64]))).collect();
    for batch in support.chunks(cfg.b_size) {
        let mut write: Option<Var> = None;
        let mut pattern: Option<Var> = None;
        for &(o, d, w) in batch {
            let a = basis(&mut tape, 0, o, d);
            let wa = tape.scale(a, w);
            write = Some(match write {
                None => wa,
                Some(x) => tape.add(x, wa).unwrap(),
            });
            pattern = Some(match pattern {
                None => a,
                Some(x) => tape.add(x, a).unwrap(),
            });
        }
        mem[0] = tape.add(mem[0], write.unwrap()).unwrap();
        let mut pattern = pattern.unwrap();
        let mut i = 0;
        while i + 1 < n {
            let q = tape.min_ratio(mem[i], pattern).unwrap();
            let t = cfg.carry_count(tape.value(q).item());
            if t == 0 {
                break;
            }
            let mut next: Option<Var> = None;
            for &(o, d, _) in batch {
                let a = basis(&mut tape, i + 1, o, d);
                next = Some(match next {
                    None => a,
                    Some(x) => tape.add(x, a).unwrap(),
                });
            }
            let next = next.unwrap();
            let up = tape.scale(next, t as f64);
            mem[i + 1] = tape.add(mem[i + 1], up).unwrap();
            let down = tape.scale(pattern, -cfg.theta * t as f64);
            mem[i] = tape.add(mem[i], down).unwrap();
            pattern = next;
            i += 1;
        }
    }

    let w = tape.leaf(Tensor::vector(model.decoder().w.clone()));
    let b = tape.leaf(Tensor::scalar(model.decoder().b));
    let mut preds = Vec::new();
    for &(o, d) in &queries {
        let qs: Vec<Var> = (0..n)
            .map(|i| {
                let a = basis(&mut tape, i, o, d);
                tape.min_ratio(mem[i], a).unwrap()
            })
            .collect();
        let qv = tape.stack(&qs).unwrap();
        let wq = tape.mul(w, qv).unwrap();
        let dot = tape.sum(wq);
        preds.push(tape.add(dot, b).unwrap());
    }
    let pv = tape.stack(&preds).unwrap();
    let loss = tape.mae_loss(pv, &task.truths).unwrap();
    let grads = tape.backward(loss);

    let mut out = ModelGrads::zeros_like(model);
    for (i, layer_vars) in vars.iter().enumerate() {
        for role in 0..2 {
            for (k, v) in layer_vars[role].blocks.iter().enumerate() {
                if let Some(g) = grads.get(*v) {
                    out.encoders[2 * i + role][k].copy_from_slice(g.data());
                }
            }
        }
    }
    out.w.copy_from_slice(grads.get(w).unwrap().data());
    out.b = grads.get(b).unwrap().item();
    (tape.value(loss).item(), out)
}

/// Every trainable scalar, addressed as (net, block, index) or decoder slots.
#[derive(Clone, Copy, Debug)]
pub enum ParamRef {
    Encoder { net: usize, block: usize, index: usize },
    DecoderW(usize),
    DecoderB,
}

pub fn param_refs(model: &CraneSketch<f64>) -> Vec<ParamRef> {
    let mut out = Vec::new();
    for (net, enc) in model.encoders().nets().enumerate() {
        for (block, b) in enc.blocks.iter().enumerate() {
            for index in 0..b.len() {
                out.push(ParamRef::Encoder { net, block, index });
            }
        }
    }
    for i in 0..model.decoder().w.len() {
        out.push(ParamRef::DecoderW(i));
    }
    out.push(ParamRef::DecoderB);
    out
}

pub fn param_mut(model: &mut CraneSketch<f64>, p: ParamRef) -> &mut f64 {
    match p {
        ParamRef::Encoder { net, block, index } => {
            let layer = &mut model.encoders_mut().layers[net / 2];
            let enc = if net % 2 == 0 { &mut layer.origin } else { &mut layer.dest };
            &mut enc.blocks[block][index]
        }
        ParamRef::DecoderW(i) => &mut model.decoder_mut().w[i],
        ParamRef::DecoderB => &mut model.decoder_mut().b,
    }
}

pub fn grad_of(g: &ModelGrads, p: ParamRef) -> f64 {
    match p {
        ParamRef::Encoder { net, block, index } => g.encoders[net][block][index],
        ParamRef::DecoderW(i) => g.w[i],
        ParamRef::DecoderB => g.b,
    }
}

/// Central finite difference of the task loss along one parameter.
pub fn fd_task_loss(model: &CraneSketch<f64>, task: &Task, p: ParamRef, h: f64) -> f64 {
    let eval = |delta: f64| {
        let mut m = model.clone();
        *param_mut(&mut m, p) += delta;
        run_task(&mut m, task, BnMode::Train, false).unwrap().loss
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

use crane_core::numerics::BnStats;
use crane_core::rng::seeded;
use rand::Rng as _;

fn random_tensor(rng: &mut crane_core::rng::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Pushes `value` away from zero so kinks stay outside the probe window.
fn off_zero(t: Tensor, gap: f64) -> Tensor {
    t.map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// Largest relative error between tape gradients and central differences of
/// `sum(op(inputs) ∘ R)` over every input entry.
fn check_op(inputs: &[Tensor], f: &OpFn, h: f64, rng: &mut crane_core::rng::Rng) -> f64 {
    let eval = |xs: &[Tensor], r: Option<&Tensor>| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        let r = r.cloned().unwrap_or_else(|| Tensor::filled(tape.value(out).shape(), 1.0));
        let rv = tape.leaf(r);
        let prod = tape.mul(out, rv).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss);
        let grads = vars.iter().zip(xs).map(|(v, x)| g.get_or_zeros(*v, x)).collect();
        (tape.value(loss).item(), grads)
    };
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).shape().to_vec()
    };
    let r = random_tensor(rng, &shape, 0.5, 1.5);
    let (_, analytic) = eval(inputs, Some(&r));
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        for i in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let fd = (eval(&plus, Some(&r)).0 - eval(&minus, Some(&r)).0) / (2.0 * h);
            worst = worst.max(rel_err(fd, analytic[k].data()[i]));
        }
    }
    worst
}

/// Finite-difference check of every differentiable tape op at `points`
/// random inputs each. Returns (op name, worst relative error).
pub fn op_gradient_checks(seed: u64, points: usize) -> Vec<(&'static str, f64)> {
    let mut rng = seeded(seed);
    let h = 1e-5;
    let mut out = Vec::new();
    let mut run = |name: &'static str, make: &dyn Fn(&mut crane_core::rng::Rng) -> Vec<Tensor>, f: OpFn| {
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let inputs = make(&mut rng);
            worst = worst.max(check_op(&inputs, &f, h, &mut rng));
        }
        out.push((name, worst));
    };
    run(
        "matmul",
        &|r| vec![random_tensor(r, &[3, 4], -1.0, 1.0), random_tensor(r, &[4, 2], -1.0, 1.0)],
        Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
    );
    run(
        "add_row",
        &|r| vec![random_tensor(r, &[3, 4], -1.0, 1.0), random_tensor(r, &[4], -1.0, 1.0)],
        Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()),
    );
    run(
        "relu",
        &|r| vec![off_zero(random_tensor(r, &[6], -1.0, 1.0), 0.1)],
        Box::new(|t, v| t.relu(v[0])),
    );
    run(
        "batchnorm_train",
        &|r| {
            vec![
                random_tensor(r, &[4, 3], -2.0, 2.0),
                random_tensor(r, &[3], 0.5, 1.5),
                random_tensor(r, &[3], -0.5, 0.5),
            ]
        },
        Box::new(|t, v| {
            let mut st = BnStats::new(3);
            t.batchnorm(v[0], v[1], v[2], &mut st, BnMode::Train).unwrap()
        }),
    );
    run(
        "batchnorm_infer",
        &|r| {
            vec![
                random_tensor(r, &[4, 3], -2.0, 2.0),
                random_tensor(r, &[3], 0.5, 1.5),
                random_tensor(r, &[3], -0.5, 0.5),
            ]
        },
        Box::new(|t, v| {
            let mut st = BnStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
            t.batchnorm(v[0], v[1], v[2], &mut st, BnMode::Infer).unwrap()
        }),
    );
    run(
        "outer",
        &|r| vec![random_tensor(r, &[3], -1.0, 1.0), random_tensor(r, &[2], -1.0, 1.0)],
        Box::new(|t, v| t.outer(v[0], v[1])),
    );
    run(
        "add_const",
        &|r| vec![random_tensor(r, &[5], -1.0, 1.0)],
        Box::new(|t, v| t.add_const(v[0], 0.25)),
    );
    run(
        "scale",
        &|r| vec![random_tensor(r, &[5], -1.0, 1.0)],
        Box::new(|t, v| t.scale(v[0], -1.75)),
    );
    run(
        "add",
        &|r| vec![random_tensor(r, &[2, 3], -1.0, 1.0), random_tensor(r, &[2, 3], -1.0, 1.0)],
        Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
    );
    run(
        "mul",
        &|r| vec![random_tensor(r, &[2, 3], -1.0, 1.0), random_tensor(r, &[2, 3], -1.0, 1.0)],
        Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
    );
    run("sum", &|r| vec![random_tensor(r, &[2, 3], -1.0, 1.0)], Box::new(|t, v| t.sum(v[0])));
    run("mean", &|r| vec![random_tensor(r, &[2, 3], -1.0, 1.0)], Box::new(|t, v| t.mean(v[0])));
    run(
        "mul_scalar",
        &|r| vec![random_tensor(r, &[4], -1.0, 1.0), random_tensor(r, &[], -2.0, 2.0)],
        Box::new(|t, v| t.mul_scalar(v[0], v[1]).unwrap()),
    );
    run(
        "div_scalar",
        &|r| vec![random_tensor(r, &[4], -1.0, 1.0), random_tensor(r, &[], 0.5, 2.0)],
        Box::new(|t, v| t.div_scalar(v[0], v[1]).unwrap()),
    );
    run(
        "index_stack_row",
        &|r| vec![random_tensor(r, &[3, 4], -1.0, 1.0)],
        Box::new(|t, v| {
            let a = t.index(v[0], 5).unwrap();
            let b = t.index(v[0], 2).unwrap();
            let s = t.stack(&[a, b, a]).unwrap();
            let row = t.row(v[0], 1).unwrap();
            let rs = t.sum(row);
            let k = t.mul_scalar(s, rs).unwrap();
            t.stack(&[k, k]).unwrap()
        }),
    );
    run(
        "min_ratio",
        &|r| vec![random_tensor(r, &[4, 4], 0.0, 5.0), random_tensor(r, &[4, 4], 0.5, 2.0)],
        Box::new(|t, v| t.min_ratio(v[0], v[1]).unwrap()),
    );
    run(
        "mae_loss",
        &|r| vec![off_zero(random_tensor(r, &[6], -1.0, 1.0), 0.05)],
        Box::new(|t, v| t.mae_loss(v[0], &[0.0; 6]).unwrap()),
    );
    out
}
