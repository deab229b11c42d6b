//! AdamW over mini-batches of freshly generated tasks.

use log::{debug, info};

use super::objective::{run_task, ModelGrads};
use super::tasks::{generate_task, Task, TaskConfig};
use crate::error::{CraneError, Result};
use crate::numerics::{AdamWConfig, AdamWState, BnMode};
use crate::rng::derive_seed;
use crate::sketch::{Cell, CraneSketch, SketchConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub sketch: SketchConfig,
    /// Optimizer steps taken on each task batch before drawing new tasks.
    pub steps_per_task: usize,
    /// Tasks averaged per optimizer step (B).
    pub task_batch: usize,
    /// Total number of tasks drawn over the run.
    pub tasks: usize,
    pub adam: AdamWConfig,
    pub seed: u64,
    /// Optimize decoder weights in units of `θ^(i−1)` so every layer's weight
    /// moves at a comparable relative rate.
    pub precondition_decoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sketch: SketchConfig::default(),
            steps_per_task: 50,
            task_batch: 1,
            tasks: 2_000,
            adam: AdamWConfig::default(),
            seed: 0,
            precondition_decoder: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sketch.validate()?;
        if self.steps_per_task == 0 || self.task_batch == 0 || self.tasks == 0 {
            return Err(CraneError::Parameter(
                "steps_per_task, task_batch and tasks must all be positive".into(),
            ));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(CraneError::Parameter("AdamW lr/betas out of range".into()));
        }
        if !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return Err(CraneError::Parameter("AdamW eps/weight_decay out of range".into()));
        }
        Ok(())
    }
}

/// One line of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub mean_loss: f64,
}

pub struct TrainOutcome {
    pub model: CraneSketch<f32>,
    pub trace: Vec<TraceEntry>,
}

/// Seed of task `index` in a run.
pub fn task_seed(run_seed: u64, index: usize) -> u64 {
    derive_seed(run_seed, 1 + index as u64)
}

/// Fresh untrained model for a run, as [`train`] would start from it.
pub fn initial_model<C: Cell>(cfg: &TrainConfig) -> Result<CraneSketch<C>> {
    CraneSketch::new(cfg.sketch, derive_seed(cfg.seed, 0))
}

fn place_scale(cfg: &TrainConfig, i: usize) -> f64 {
    if cfg.precondition_decoder {
        cfg.sketch.place_value(i)
    } else {
        1.0
    }
}

/// Trains a model. `on_step` sees every trace entry as it is produced.
pub fn train(
    cfg: &TrainConfig,
    task_cfg: &TaskConfig,
    on_step: impl FnMut(&TraceEntry),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    task_cfg.validate()?;
    let mut model: CraneSketch<f64> = initial_model(cfg)?;
    let trace = optimize(&mut model, cfg, |t| generate_task(task_cfg, task_seed(cfg.seed, t)), on_step)?;
    round_parameters(&mut model);
    Ok(TrainOutcome { model: model.convert(), trace })
}

/// Runs the optimization loop of [`train`] on an existing model. Task `t`
/// (for `t` in `0..cfg.tasks`) comes from `next_task(t)`; `cfg.sketch` is
/// ignored in favour of the model's own configuration.
pub fn optimize(
    model: &mut CraneSketch<f64>,
    cfg: &TrainConfig,
    mut next_task: impl FnMut(usize) -> Result<Task>,
    mut on_step: impl FnMut(&TraceEntry),
) -> Result<Vec<TraceEntry>> {
    let cfg = &TrainConfig { sketch: *model.config(), ..*cfg };
    cfg.validate()?;
    let n = cfg.sketch.n_max;

    let mut sizes: Vec<usize> = model.encoders().nets().flat_map(|net| net.blocks.iter().map(Vec::len)).collect();
    sizes.push(n);
    sizes.push(1);
    let mut adam = AdamWState::new(cfg.adam, &sizes);
    let mut u: Vec<f64> = (0..n).map(|i| model.decoder().w[i] / place_scale(cfg, i)).collect();
    let mut bias = vec![model.decoder().b];

    let mut trace = Vec::new();
    let mut step = 0;
    let groups = cfg.tasks.div_ceil(cfg.task_batch);
    for group in 0..groups {
        let lo = group * cfg.task_batch;
        let hi = (lo + cfg.task_batch).min(cfg.tasks);
        let tasks: Vec<Task> = (lo..hi).map(&mut next_task).collect::<Result<_>>()?;
        for _ in 0..cfg.steps_per_task {
            let mut total = ModelGrads::zeros_like(model);
            let mut loss = 0.0;
            let k = 1.0 / tasks.len() as f64;
            for task in &tasks {
                let out = run_task(model, task, BnMode::Train, true)?;
                loss += k * out.loss;
                total.add_scaled(out.grads.as_ref().expect("gradients requested"), k);
            }
            if !loss.is_finite() || !total.is_finite() {
                return Err(CraneError::NonFinite(format!("loss {loss} at step {step}")));
            }
            let grad_u: Vec<f64> = (0..n).map(|i| total.w[i] * place_scale(cfg, i)).collect();
            {
                let mut params: Vec<&mut [f64]> = model
                    .encoders_mut()
                    .nets_mut()
                    .flat_map(|net| net.blocks.iter_mut().map(|b| b.as_mut_slice()))
                    .collect();
                params.push(&mut u);
                params.push(&mut bias);
                let mut grads: Vec<&[f64]> = total.encoders.iter().flatten().map(Vec::as_slice).collect();
                grads.push(&grad_u);
                let gb = [total.b];
                grads.push(&gb);
                adam.step(&mut params, &grads)?;
            }
            let dec = model.decoder_mut();
            for i in 0..n {
                dec.w[i] = u[i] * place_scale(cfg, i);
            }
            dec.b = bias[0];
            let entry = TraceEntry { step, mean_loss: loss };
            debug!("step {step} loss {loss:.6}");
            on_step(&entry);
            trace.push(entry);
            step += 1;
        }
        if (group + 1) % 50 == 0 {
            info!("trained on {} of {} tasks", hi, cfg.tasks);
        }
    }
    Ok(trace)
}

/// Rounds every trained quantity to the nearest `f32`, so the model is
/// exactly what a model file stores.
pub fn round_parameters<C: Cell>(model: &mut CraneSketch<C>) {
    let r = |v: &mut f64| *v = *v as f32 as f64;
    model.encoders_mut().round_to_f32();
    let dec = model.decoder_mut();
    dec.w.iter_mut().for_each(r);
    r(&mut dec.b);
}
