//! Accuracy metrics, the equal-budget benchmark and property studies.

mod bench;
mod metrics;
mod studies;
mod theory;

pub use bench::{
    parse_methods, run_benchmark, BenchOptions, BenchmarkReport, Digest, FrequencySketch, MethodKind,
    MethodResult, RunMetadata, CRANE_LAYER_BYTES,
};
pub use metrics::{metrics, ErrorMetrics};
pub use studies::{expansion_study, hot_edge_layers, ExpansionConfig, ExpansionPoint};
pub use theory::{
    basis_cosine, collision_checks, collision_decay, decoder_check, decoder_variance, isolation,
    isolation_checks, orthogonality_check, orthogonality_drift, theory_suite, CollisionConfig,
    CollisionDecay, DecoderComparison, DecoderConfig, Isolation, IsolationConfig, OrthogonalityConfig,
    OrthogonalityDrift, TheoryCheck, COLLISION_BAND, DECODER_WIN_RATE, ISOLATION_SLACK, BOTTOM_SHARE,
};
