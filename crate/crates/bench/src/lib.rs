//! Fixtures shared by the throughput benchmarks.

use crane_core::training::zipf_stream;
use crane_core::{CraneSketch, EdgeUpdate, SketchConfig};

/// Memory budget the baselines are sized to.
pub const BUDGET: usize = 65_536;

/// Unit-weight Zipf(1.1) stream over `universe` distinct edges.
pub fn zipf_fixture(updates: usize, universe: usize, seed: u64) -> Vec<EdgeUpdate> {
    zipf_stream(1.1, universe, updates, 1 << 20, seed).expect("valid fixture parameters")
}

/// Untrained model with the default configuration. Throughput does not
/// depend on the parameter values.
pub fn fixture_model(seed: u64) -> CraneSketch<f32> {
    CraneSketch::new(SketchConfig::default(), seed).expect("default configuration is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(zipf_fixture(100, 10, 3), zipf_fixture(100, 10, 3));
        assert_eq!(fixture_model(1).encoders().layers.len(), 4);
    }
}
