//! Synthetic tasks, the task objective and the training loop.

mod objective;
mod tasks;
mod trainer;

pub use objective::{run_task, ModelGrads, TaskOutput};
pub(crate) use objective::basis_min_ratio;
pub use tasks::{
    generate_task, weight_profile, zipf_stream, zipf_weights, Task, TaskConfig, WeightFamily,
    ZipfSampler,
};
pub use trainer::{
    initial_model, optimize, round_parameters, task_seed, train, TraceEntry, TrainConfig,
    TrainOutcome,
};
