//! The hierarchical sketch: layered memories, carry, expansion and queries.

mod crane;
mod memory;

pub use crane::{CraneSketch, Decoder};
pub use memory::{
    add_scaled, min_ratio_cells, sub_scaled_clamped, Cell, LayerMemory, CELLS, HEIGHT, WIDTH,
};

use crate::error::{CraneError, Result};

/// One stream item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeUpdate {
    pub origin: u32,
    pub dest: u32,
    pub weight: f64,
}

impl EdgeUpdate {
    pub fn new(origin: u32, dest: u32, weight: f64) -> Self {
        EdgeUpdate { origin, dest, weight }
    }

    pub fn key(&self) -> (u32, u32) {
        (self.origin, self.dest)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CarryMode {
    Sequential,
    MiniBatch,
}

impl CarryMode {
    pub fn as_u32(self) -> u32 {
        match self {
            CarryMode::Sequential => 0,
            CarryMode::MiniBatch => 1,
        }
    }

    pub fn from_u32(v: u32) -> Result<Self> {
        match v {
            0 => Ok(CarryMode::Sequential),
            1 => Ok(CarryMode::MiniBatch),
            _ => Err(CraneError::Format(format!("unknown carry mode {v}"))),
        }
    }
}

/// Relative slack applied to a layer estimate before flooring it into a carry
/// count, so that a ratio computed as 3.9999999 still counts as 4.
pub const CARRY_RTOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SketchConfig {
    /// Carry threshold θ; `f64::INFINITY` disables carrying.
    pub theta: f64,
    /// Load threshold τ on the mean cell mass of the top layer.
    pub tau: f64,
    pub n_max: usize,
    pub epsilon: f64,
    pub b_size: usize,
    pub carry_mode: CarryMode,
}

impl Default for SketchConfig {
    fn default() -> Self {
        SketchConfig {
            theta: 4.0,
            tau: 4.0,
            n_max: 4,
            epsilon: 1e-6,
            b_size: 4,
            carry_mode: CarryMode::MiniBatch,
        }
    }
}

impl SketchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 1.0) {
            return Err(CraneError::Parameter(format!("theta must exceed 1, got {}", self.theta)));
        }
        if !(self.tau > 0.0) {
            return Err(CraneError::Parameter(format!("tau must be positive, got {}", self.tau)));
        }
        if self.n_max == 0 {
            return Err(CraneError::Parameter("n_max must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(CraneError::Parameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.b_size == 0 {
            return Err(CraneError::Parameter("b_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Same configuration with θ, τ and ε rounded to `f32`.
    pub fn quantized(&self) -> Self {
        let r = |v: f64| v as f32 as f64;
        SketchConfig { theta: r(self.theta), tau: r(self.tau), epsilon: r(self.epsilon), ..*self }
    }

    /// Number of carries to promote from a layer estimate `q`.
    pub fn carry_count(&self, q: f64) -> u64 {
        crate::numerics::floor_div_clip(q * (1.0 + CARRY_RTOL), self.theta).unwrap_or(0)
    }

    /// `θ^i`, the positional weight of zero-based layer `i`.
    pub fn place_value(&self, i: usize) -> f64 {
        self.theta.powi(i as i32)
    }
}
