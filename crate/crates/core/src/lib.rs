//! Crane: a hierarchical neural sketch for frequency estimation over weighted
//! graph streams.
//!
//! Edges are written into a stack of 64×64 memories through learned per-layer
//! basis patterns. Mass that exceeds a carry threshold θ in one layer is
//! promoted to the next, so layer `i` behaves like the digit of weight
//! `θ^(i−1)` in a positional counter. A linear decoder turns the per-layer
//! min-ratio estimates into a frequency.
//!
//! The crate also ships exact and hash-based baselines, a synthetic-task
//! trainer, evaluation studies and the model/stream file formats.

pub mod baselines;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod numerics;
pub mod rng;
pub mod sketch;
pub mod training;

pub use baselines::{CountMinSketch, Direction, ExactCounter, TcmSketch};
pub use error::{CraneError, Result};
pub use sketch::{CarryMode, CraneSketch, Decoder, EdgeUpdate, SketchConfig};
pub use training::{generate_task, run_task, train, Task, TaskConfig, TrainConfig};
