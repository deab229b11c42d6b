//! Layer-growth studies.

use crate::error::{CraneError, Result};
use crate::rng::derive_seed;
use crate::sketch::{CarryMode, CraneSketch, EdgeUpdate, SketchConfig};
use crate::training::zipf_stream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionConfig {
    pub theta: f64,
    /// Layer cap, large enough that it is never the binding limit.
    pub n_max: usize,
    /// Stream positions per volume; each carries `volume / updates`.
    pub updates: usize,
    /// Distinct edges the positions are drawn from.
    pub universe: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig { theta: 4.0, n_max: 16, updates: 2_000, universe: 1_000, alpha: 1.1, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionPoint {
    pub volume: f64,
    pub layers: usize,
}

/// Active layer count after a Zipf stream of each total weight in `volumes`,
/// each ingested into a fresh sketch with automatic expansion.
pub fn expansion_study(volumes: &[f64], cfg: &ExpansionConfig) -> Result<Vec<ExpansionPoint>> {
    if volumes.windows(2).any(|w| !(w[1] > w[0])) || volumes.iter().any(|v| !(*v > 0.0)) {
        return Err(CraneError::Parameter("volumes must be positive and strictly increasing".into()));
    }
    if cfg.updates == 0 {
        return Err(CraneError::Parameter("expansion study needs at least one update".into()));
    }
    let sketch_cfg = SketchConfig {
        theta: cfg.theta,
        tau: cfg.theta,
        n_max: cfg.n_max,
        carry_mode: CarryMode::MiniBatch,
        ..SketchConfig::default()
    };
    let model: CraneSketch<f32> = CraneSketch::new(sketch_cfg, derive_seed(cfg.seed, 0))?;
    let base = zipf_stream(cfg.alpha, cfg.universe, cfg.updates, 1 << 32, derive_seed(cfg.seed, 1))?;
    volumes
        .iter()
        .map(|&volume| {
            let w = volume / cfg.updates as f64;
            let stream: Vec<EdgeUpdate> = base.iter().map(|e| EdgeUpdate::new(e.origin, e.dest, w)).collect();
            let mut m = model.clone();
            m.reset(1)?;
            m.ingest(&stream)?;
            Ok(ExpansionPoint { volume, layers: m.active_layers() })
        })
        .collect()
}

/// Layers active after storing one edge `frequency` times with unit weight,
/// sequentially.
pub fn hot_edge_layers(theta: f64, n_max: usize, frequency: usize, seed: u64) -> Result<usize> {
    let cfg = SketchConfig { theta, tau: theta, n_max, carry_mode: CarryMode::Sequential, ..SketchConfig::default() };
    let mut m: CraneSketch<f64> = CraneSketch::new(cfg, seed)?;
    let e = EdgeUpdate::new(7, 11, 1.0);
    for _ in 0..frequency {
        m.store(e)?;
    }
    Ok(m.active_layers())
}
