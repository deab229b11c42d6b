use super::memory::{add_scaled, min_ratio_cells, sub_scaled_clamped, Cell, LayerMemory, CELLS};
use super::{CarryMode, EdgeUpdate, SketchConfig};
use crate::encoders::{binary_encode, unit_basis_into, LayerEncoders, EMBED_DIM};
use crate::error::{CraneError, Result};
use crate::rng::seeded;
use crate::training::basis_min_ratio;

/// Linear read-out `ŷ = wᵀq + b` over per-layer estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Decoder {
    /// Positional weights `w_i = θ^(i−1)`, zero bias.
    pub fn geometric(theta: f64, n_max: usize) -> Self {
        Decoder { w: (0..n_max).map(|i| theta.powi(i as i32)).collect(), b: 0.0 }
    }

    /// Inactive layers contribute nothing, whatever their weight.
    pub fn apply(&self, q: &[f64], active: usize) -> f64 {
        self.w.iter().zip(q).take(active).map(|(w, q)| w * q).sum::<f64>() + self.b
    }
}

/// Hierarchical neural sketch over directed weighted edges.
///
/// `C` is the memory cell type: `f32` for deployed sketches (4 bytes per
/// cell, so a full 4-layer sketch is 64 KiB), `f64` where exact arithmetic
/// matters more than footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct CraneSketch<C: Cell = f32> {
    config: SketchConfig,
    encoders: LayerEncoders,
    decoder: Decoder,
    memories: Vec<LayerMemory<C>>,
}

impl<C: Cell> CraneSketch<C> {
    /// Fresh model with randomly initialized encoders and one active layer.
    pub fn new(config: SketchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut encoders = LayerEncoders::new(config.n_max, &mut rng);
        encoders.round_to_f32();
        let decoder = Decoder::geometric(config.theta, config.n_max);
        Self::from_parts(config, encoders, decoder)
    }

    /// Assembles a model. Thresholds and ε are rounded to `f32`, the precision
    /// they are stored at.
    pub fn from_parts(config: SketchConfig, encoders: LayerEncoders, decoder: Decoder) -> Result<Self> {
        let config = config.quantized();
        config.validate()?;
        if encoders.len() != config.n_max || decoder.w.len() != config.n_max {
            return Err(CraneError::Dimension(format!(
                "n_max {} but {} encoder layers and {} decoder weights",
                config.n_max,
                encoders.len(),
                decoder.w.len()
            )));
        }
        Ok(CraneSketch { config, encoders, decoder, memories: vec![LayerMemory::zeros()] })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn encoders(&self) -> &LayerEncoders {
        &self.encoders
    }

    pub fn encoders_mut(&mut self) -> &mut LayerEncoders {
        &mut self.encoders
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Decoder {
        &mut self.decoder
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        let config = SketchConfig { tau, ..self.config }.quantized();
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn set_carry_mode(&mut self, mode: CarryMode) {
        self.config.carry_mode = mode;
    }

    pub fn set_b_size(&mut self, b_size: usize) -> Result<()> {
        let config = SketchConfig { b_size, ..self.config };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn active_layers(&self) -> usize {
        self.memories.len()
    }

    pub fn memories(&self) -> &[LayerMemory<C>] {
        &self.memories
    }

    /// Replaces the memories, e.g. when restoring a snapshot.
    pub fn set_memories(&mut self, memories: Vec<LayerMemory<C>>) -> Result<()> {
        if memories.is_empty() || memories.len() > self.config.n_max {
            return Err(CraneError::Dimension(format!(
                "{} memories for n_max {}",
                memories.len(),
                self.config.n_max
            )));
        }
        if memories.iter().any(|m| m.cells.len() != CELLS) {
            return Err(CraneError::Dimension("memory matrix of wrong size".into()));
        }
        self.memories = memories;
        Ok(())
    }

    /// Zeroes all memories and activates `layers` of them.
    pub fn reset(&mut self, layers: usize) -> Result<()> {
        if layers == 0 || layers > self.config.n_max {
            return Err(CraneError::Parameter(format!(
                "cannot activate {layers} layers with n_max {}",
                self.config.n_max
            )));
        }
        self.memories = vec![LayerMemory::zeros(); layers];
        Ok(())
    }

    /// Bytes of sketch state (memory matrices only).
    pub fn memory_bytes(&self) -> usize {
        self.memories.iter().map(LayerMemory::bytes).sum()
    }

    /// Same model with a different memory cell type.
    pub fn convert<D: Cell>(&self) -> CraneSketch<D> {
        CraneSketch {
            config: self.config,
            encoders: self.encoders.clone(),
            decoder: self.decoder.clone(),
            memories: self
                .memories
                .iter()
                .map(|m| LayerMemory { cells: m.cells.iter().map(|c| D::from_f64(c.to_f64())).collect() })
                .collect(),
        }
    }

    /// Inference-mode embeddings of an edge's endpoints at `layer`.
    pub fn embeddings(&self, layer: usize, origin: u32, dest: u32) -> ([f64; EMBED_DIM], [f64; EMBED_DIM]) {
        let pair = &self.encoders.layers[layer];
        (pair.origin.embed(&binary_encode(origin)), pair.dest.embed(&binary_encode(dest)))
    }

    /// Unit-mean basis pattern of an edge at `layer`, written into `out`.
    pub fn basis_into(&self, layer: usize, origin: u32, dest: u32, out: &mut [f64]) {
        let (eo, ed) = self.embeddings(layer, origin, dest);
        unit_basis_into(&eo, &ed, self.config.epsilon, out);
    }

    /// Stores one edge with sequential carry.
    pub fn store(&mut self, edge: EdgeUpdate) -> Result<()> {
        self.store_group(std::slice::from_ref(&edge))
    }

    /// Stores a mini-batch with one conservative carry decision per layer.
    pub fn store_batch(&mut self, batch: &[EdgeUpdate]) -> Result<()> {
        if batch.is_empty() {
            return Err(CraneError::Parameter("empty mini-batch".into()));
        }
        self.store_group(batch)
    }

    /// Stores a stream in the configured carry mode.
    pub fn ingest(&mut self, edges: &[EdgeUpdate]) -> Result<()> {
        match self.config.carry_mode {
            CarryMode::Sequential => edges.iter().try_for_each(|e| self.store(*e)),
            CarryMode::MiniBatch => {
                edges.chunks(self.config.b_size).try_for_each(|b| self.store_batch(b))
            }
        }
    }

    fn store_group(&mut self, batch: &[EdgeUpdate]) -> Result<()> {
        for e in batch {
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(CraneError::Parameter(format!(
                    "edge ({}, {}) has invalid weight {}",
                    e.origin, e.dest, e.weight
                )));
            }
        }
        if batch.iter().all(|e| e.weight == 0.0) {
            return Ok(());
        }
        let mut a = vec![0.0; CELLS];
        let mut write = vec![0.0; CELLS];
        let mut pattern = vec![0.0; CELLS];
        for e in batch {
            self.basis_into(0, e.origin, e.dest, &mut a);
            for ((w, p), x) in write.iter_mut().zip(pattern.iter_mut()).zip(&a) {
                *w += e.weight * x;
                *p += x;
            }
        }
        add_scaled(&mut self.memories[0].cells, &write, 1.0);
        self.carry_from(0, batch, pattern);
        self.expand_if_saturated();
        Ok(())
    }

    /// Promotes overflow upward from `layer` until a layer stays below θ or
    /// the top active layer is reached. `pattern` is the batch's summed basis
    /// at `layer`.
    fn carry_from(&mut self, layer: usize, batch: &[EdgeUpdate], mut pattern: Vec<f64>) {
        let theta = self.config.theta;
        let mut a = vec![0.0; CELLS];
        let mut i = layer;
        while i + 1 < self.memories.len() {
            let (q, _) = min_ratio_cells(&self.memories[i].cells, &pattern);
            let t = self.config.carry_count(q);
            if t == 0 {
                break;
            }
            let mut next = vec![0.0; CELLS];
            for e in batch {
                self.basis_into(i + 1, e.origin, e.dest, &mut a);
                next.iter_mut().zip(&a).for_each(|(n, x)| *n += x);
            }
            let t = t as f64;
            add_scaled(&mut self.memories[i + 1].cells, &next, t);
            sub_scaled_clamped(&mut self.memories[i].cells, &pattern, theta * t);
            pattern = next;
            i += 1;
        }
    }

    /// Appends a zero layer when the top layer's mean cell mass exceeds τ.
    pub fn expand_if_saturated(&mut self) -> bool {
        let top = self.memories.last().expect("at least one layer");
        if top.load() > self.config.tau && self.memories.len() < self.config.n_max {
            self.memories.push(LayerMemory::zeros());
            true
        } else {
            false
        }
    }

    /// Per-layer estimates `q_i`, zero for inactive layers.
    pub fn query_vector(&self, origin: u32, dest: u32) -> Vec<f64> {
        let mut q = vec![0.0; self.config.n_max];
        for (i, mem) in self.memories.iter().enumerate() {
            let (eo, ed) = self.embeddings(i, origin, dest);
            let s = eo.iter().sum::<f64>() * ed.iter().sum::<f64>() / CELLS as f64 + self.config.epsilon;
            q[i] = basis_min_ratio(&mem.cells, &eo, &ed, self.config.epsilon, 1.0 / s).0;
        }
        q
    }

    pub fn query(&self, origin: u32, dest: u32) -> f64 {
        let q = self.query_vector(origin, dest);
        self.decoder.apply(&q, self.memories.len())
    }

    /// Sum of estimates over a caller-supplied incident edge list.
    pub fn node_flux(&self, incident: &[(u32, u32)]) -> f64 {
        incident.iter().map(|&(o, d)| self.query(o, d)).sum()
    }

    /// `Σ_i θ^(i−1) · sum(M^(i))`, conserved by every carry.
    pub fn weighted_mass(&self) -> f64 {
        self.memories
            .iter()
            .enumerate()
            .map(|(i, m)| self.config.place_value(i) * m.sum())
            .sum()
    }
}
