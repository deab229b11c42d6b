//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! keys are rejected. When `theta` is set and `tau` is not, τ follows θ.

use std::path::Path;

use crate::error::{CraneError, Result};
use crate::sketch::CarryMode;
use crate::training::{TaskConfig, TrainConfig, WeightFamily};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub task: TaskConfig,
}

pub const KEYS: &[&str] = &[
    "theta", "tau", "n_max", "b_size", "epsilon", "carry_mode", "gamma", "min_len", "alpha_min",
    "alpha_max", "mult_min", "mult_max", "id_space", "family", "lr", "beta1", "beta2", "adam_eps",
    "weight_decay", "steps_per_task", "task_batch", "tasks", "seed", "precondition_decoder",
];

fn value<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| CraneError::Parse { line, msg: format!("bad value `{v}` for `{key}`") })
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut tau_set = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, v) = body
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| CraneError::Parse { line, msg: format!("expected key = value, got `{body}`") })?;
        let (t, k) = (&mut cfg.train, &mut cfg.task);
        let s = &mut t.sketch;
        match key {
            "theta" => s.theta = value(key, v, line)?,
            "tau" => {
                s.tau = value(key, v, line)?;
                tau_set = true;
            }
            "n_max" => s.n_max = value(key, v, line)?,
            "b_size" => s.b_size = value(key, v, line)?,
            "epsilon" => s.epsilon = value(key, v, line)?,
            "carry_mode" => {
                s.carry_mode = match v {
                    "sequential" => CarryMode::Sequential,
                    "minibatch" => CarryMode::MiniBatch,
                    _ => return Err(CraneError::Parse { line, msg: format!("unknown carry mode `{v}`") }),
                }
            }
            "gamma" => k.gamma = value(key, v, line)?,
            "min_len" => k.min_len = value(key, v, line)?,
            "alpha_min" => k.alpha_min = value(key, v, line)?,
            "alpha_max" => k.alpha_max = value(key, v, line)?,
            "mult_min" => k.mult_min = value(key, v, line)?,
            "mult_max" => k.mult_max = value(key, v, line)?,
            "id_space" => k.id_space = value(key, v, line)?,
            "family" => {
                k.family = WeightFamily::parse(v).map_err(|e| CraneError::Parse { line, msg: e.to_string() })?
            }
            "lr" => t.adam.lr = value(key, v, line)?,
            "beta1" => t.adam.beta1 = value(key, v, line)?,
            "beta2" => t.adam.beta2 = value(key, v, line)?,
            "adam_eps" => t.adam.eps = value(key, v, line)?,
            "weight_decay" => t.adam.weight_decay = value(key, v, line)?,
            "steps_per_task" => t.steps_per_task = value(key, v, line)?,
            "task_batch" => t.task_batch = value(key, v, line)?,
            "tasks" => t.tasks = value(key, v, line)?,
            "seed" => t.seed = value(key, v, line)?,
            "precondition_decoder" => t.precondition_decoder = value(key, v, line)?,
            _ => return Err(CraneError::Parse { line, msg: format!("unknown key `{key}`") }),
        }
    }
    if !tau_set {
        cfg.train.sketch.tau = cfg.train.sketch.theta;
    }
    cfg.train.validate()?;
    cfg.task.validate()?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Renders a configuration in the format [`parse_config`] reads.
pub fn render_config(cfg: &RunConfig) -> String {
    let (t, k, s) = (&cfg.train, &cfg.task, &cfg.train.sketch);
    let mode = match s.carry_mode {
        CarryMode::Sequential => "sequential",
        CarryMode::MiniBatch => "minibatch",
    };
    format!(
        "theta = {}\ntau = {}\nn_max = {}\nb_size = {}\nepsilon = {}\ncarry_mode = {mode}\n\
         gamma = {}\nmin_len = {}\nalpha_min = {}\nalpha_max = {}\nmult_min = {}\nmult_max = {}\n\
         id_space = {}\nfamily = {}\nlr = {}\nbeta1 = {}\nbeta2 = {}\nadam_eps = {}\n\
         weight_decay = {}\nsteps_per_task = {}\ntask_batch = {}\ntasks = {}\nseed = {}\n\
         precondition_decoder = {}\n",
        s.theta, s.tau, s.n_max, s.b_size, s.epsilon, k.gamma, k.min_len, k.alpha_min, k.alpha_max,
        k.mult_min, k.mult_max, k.id_space, k.family.name(), t.adam.lr, t.adam.beta1, t.adam.beta2,
        t.adam.eps, t.adam.weight_decay, t.steps_per_task, t.task_batch, t.tasks, t.seed,
        t.precondition_decoder,
    )
}
