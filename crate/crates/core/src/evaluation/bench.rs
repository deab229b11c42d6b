//! Equal-budget accuracy benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use super::metrics::{metrics, ErrorMetrics};
use crate::baselines::{CountMinSketch, Direction, ExactCounter, TcmSketch};
use crate::error::{CraneError, Result};
use crate::rng::derive_seed;
use crate::sketch::{CraneSketch, EdgeUpdate, SketchConfig, CELLS};

/// Bytes of one 32-bit Crane memory layer.
pub const CRANE_LAYER_BYTES: usize = CELLS * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Crane,
    Tcm,
    Cms,
    Exact,
}

impl MethodKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "crane" => Ok(MethodKind::Crane),
            "tcm" => Ok(MethodKind::Tcm),
            "cms" => Ok(MethodKind::Cms),
            "exact" => Ok(MethodKind::Exact),
            other => Err(CraneError::Parameter(format!("unknown method `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Crane => "crane",
            MethodKind::Tcm => "tcm",
            MethodKind::Cms => "cms",
            MethodKind::Exact => "exact",
        }
    }
}

/// Parses a comma-separated method list such as `crane,tcm,cms`.
pub fn parse_methods(list: &str) -> Result<Vec<MethodKind>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m = MethodKind::parse(part)?;
        if out.contains(&m) {
            return Err(CraneError::Parameter(format!("method `{}` listed twice", m.name())));
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(CraneError::Parameter("no methods given".into()));
    }
    Ok(out)
}

/// Common surface of every benchmarked summary.
pub trait FrequencySketch {
    /// Bytes of sketch state charged against the budget.
    fn bytes(&self) -> usize;
    fn insert_stream(&mut self, edges: &[EdgeUpdate]) -> Result<()>;
    fn estimate(&self, origin: u32, dest: u32) -> f64;
    /// Native out-flux estimate, if the structure has one. Otherwise the
    /// benchmark sums the edge estimates over the node's true out-edges.
    fn out_flux(&self, _node: u32) -> Option<f64> {
        None
    }
    fn active_layers(&self) -> Option<usize> {
        None
    }
}

/// Charged at `n_max` layers, the most the sketch can ever activate. Model
/// parameters are not charged.
impl FrequencySketch for CraneSketch<f32> {
    fn bytes(&self) -> usize {
        self.config().n_max * CRANE_LAYER_BYTES
    }

    fn insert_stream(&mut self, edges: &[EdgeUpdate]) -> Result<()> {
        self.ingest(edges)
    }

    fn estimate(&self, origin: u32, dest: u32) -> f64 {
        self.query(origin, dest)
    }

    fn active_layers(&self) -> Option<usize> {
        Some(CraneSketch::active_layers(self))
    }
}

impl FrequencySketch for TcmSketch {
    fn bytes(&self) -> usize {
        TcmSketch::bytes(self)
    }

    fn insert_stream(&mut self, edges: &[EdgeUpdate]) -> Result<()> {
        edges.iter().for_each(|e| self.insert(e));
        Ok(())
    }

    fn estimate(&self, origin: u32, dest: u32) -> f64 {
        self.query(origin, dest)
    }

    fn out_flux(&self, node: u32) -> Option<f64> {
        Some(self.node_flux(node, Direction::Out))
    }
}

impl FrequencySketch for CountMinSketch {
    fn bytes(&self) -> usize {
        CountMinSketch::bytes(self)
    }

    fn insert_stream(&mut self, edges: &[EdgeUpdate]) -> Result<()> {
        edges.iter().for_each(|e| self.insert(e));
        Ok(())
    }

    fn estimate(&self, origin: u32, dest: u32) -> f64 {
        self.query(origin, dest)
    }
}

/// The exact counter is reported with zero bytes: it is the reference, not a
/// contender for the budget.
impl FrequencySketch for ExactCounter {
    fn bytes(&self) -> usize {
        0
    }

    fn insert_stream(&mut self, edges: &[EdgeUpdate]) -> Result<()> {
        edges.iter().for_each(|e| self.insert(e));
        Ok(())
    }

    fn estimate(&self, origin: u32, dest: u32) -> f64 {
        self.query(origin, dest)
    }

    fn out_flux(&self, node: u32) -> Option<f64> {
        Some(self.flux(node, Direction::Out))
    }
}

/// FNV-1a digest of an edge sequence. Reports carry the digests of the
/// stream and query set every method shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Digest(pub u64);

impl Digest {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0100_0000_01b3;

    fn bytes(mut h: u64, bytes: &[u8]) -> u64 {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(Self::PRIME);
        }
        h
    }

    pub fn of_stream(edges: &[EdgeUpdate]) -> Self {
        let mut h = Self::OFFSET;
        for e in edges {
            h = Self::bytes(h, &e.origin.to_le_bytes());
            h = Self::bytes(h, &e.dest.to_le_bytes());
            h = Self::bytes(h, &e.weight.to_bits().to_le_bytes());
        }
        Digest(h)
    }

    pub fn of_keys(keys: &[(u32, u32)]) -> Self {
        let mut h = Self::OFFSET;
        for (o, d) in keys {
            h = Self::bytes(h, &o.to_le_bytes());
            h = Self::bytes(h, &d.to_le_bytes());
        }
        Digest(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchOptions {
    /// Byte budget every method must fit in.
    pub budget: usize,
    /// Seeds the hash functions of the baselines.
    pub seed: u64,
    /// Measure throughput. Off by default so reports are reproducible.
    pub timing: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { budget: 65_536, seed: 0, timing: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetadata {
    pub seed: u64,
    pub budget: usize,
    pub stream_len: usize,
    pub distinct_edges: usize,
    pub total_weight: f64,
    pub stream_digest: Digest,
    pub query_digest: Digest,
    /// Configuration of the Crane model, when one took part.
    pub crane: Option<SketchConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodResult {
    pub method: MethodKind,
    pub edges: ErrorMetrics,
    /// Out-flux error over every origin node of the stream.
    pub flux: ErrorMetrics,
    pub bytes: usize,
    /// Layers the Crane sketch activated; `None` for other methods.
    pub active_layers: Option<usize>,
    pub store_ops_per_sec: Option<f64>,
    pub query_ops_per_sec: Option<f64>,
    /// Per-edge estimates in query order.
    pub estimates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub meta: RunMetadata,
    /// Distinct edges in first-seen order, with exact weights.
    pub queries: Vec<(u32, u32)>,
    pub truths: Vec<f64>,
    pub results: Vec<MethodResult>,
}

const BYTES_NOTE: &str = "bytes count sketch state only; crane is charged for n_max 32-bit \
                          64x64 memories, its encoder and decoder parameters are not charged";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.1}"))
}

impl BenchmarkReport {
    pub fn result(&self, method: MethodKind) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }

    /// Tab-separated table, one row per method.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "method\taae\tare\tflux_aae\tflux_are\tbytes\tbudget\tlayers\tstore_ops_per_sec\tquery_ops_per_sec\n",
        );
        for r in &self.results {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}",
                r.method.name(),
                r.edges.aae,
                r.edges.are,
                r.flux.aae,
                r.flux.are,
                r.bytes,
                self.meta.budget,
                r.active_layers.map_or_else(|| "-".into(), |l| l.to_string()),
                fmt_opt(r.store_ops_per_sec),
                fmt_opt(r.query_ops_per_sec),
            );
        }
        s
    }

    /// Structured text: a run section followed by one section per method.
    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "# {BYTES_NOTE}");
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", m.seed);
        let _ = writeln!(s, "budget = {}", m.budget);
        let _ = writeln!(s, "stream_len = {}", m.stream_len);
        let _ = writeln!(s, "distinct_edges = {}", m.distinct_edges);
        let _ = writeln!(s, "total_weight = {}", m.total_weight);
        let _ = writeln!(s, "stream_digest = {:016x}", m.stream_digest.0);
        let _ = writeln!(s, "query_digest = {:016x}", m.query_digest.0);
        if let Some(c) = &m.crane {
            let _ = writeln!(s, "theta = {}", c.theta);
            let _ = writeln!(s, "n_max = {}", c.n_max);
            let _ = writeln!(s, "b_size = {}", c.b_size);
        }
        for r in &self.results {
            let _ = writeln!(s, "\n[method.{}]", r.method.name());
            let _ = writeln!(s, "aae = {}", r.edges.aae);
            let _ = writeln!(s, "are = {}", r.edges.are);
            let _ = writeln!(s, "flux_aae = {}", r.flux.aae);
            let _ = writeln!(s, "flux_are = {}", r.flux.are);
            let _ = writeln!(s, "bytes = {}", r.bytes);
            if let Some(l) = r.active_layers {
                let _ = writeln!(s, "active_layers = {l}");
            }
            let _ = writeln!(s, "store_ops_per_sec = {}", fmt_opt(r.store_ops_per_sec));
            let _ = writeln!(s, "query_ops_per_sec = {}", fmt_opt(r.query_ops_per_sec));
        }
        s
    }
}

fn build(
    kind: MethodKind,
    crane: Option<&CraneSketch<f32>>,
    opts: &BenchOptions,
) -> Result<Box<dyn FrequencySketch>> {
    let seed = derive_seed(opts.seed, kind as u64);
    let sketch: Box<dyn FrequencySketch> = match kind {
        MethodKind::Crane => {
            let model = crane.ok_or_else(|| CraneError::Parameter("crane needs a model".into()))?;
            let mut fresh = model.clone();
            fresh.reset(1)?;
            Box::new(fresh)
        }
        MethodKind::Tcm => Box::new(TcmSketch::with_budget(opts.budget, seed)?),
        MethodKind::Cms => Box::new(CountMinSketch::with_budget(opts.budget, seed)?),
        MethodKind::Exact => Box::new(ExactCounter::new()),
    };
    if sketch.bytes() > opts.budget {
        return Err(CraneError::Budget {
            method: kind.name().into(),
            used: sketch.bytes(),
            budget: opts.budget,
        });
    }
    Ok(sketch)
}

fn rate(ops: usize, start: Instant) -> f64 {
    ops as f64 / start.elapsed().as_secs_f64().max(1e-9)
}

/// Feeds the same `stream` slice to every method and to an exact oracle,
/// queries every distinct edge and every origin's out-flux, and reports the
/// errors.
///
/// A method that does not fit in the budget fails the whole run.
pub fn run_benchmark(
    stream: &[EdgeUpdate],
    methods: &[MethodKind],
    crane: Option<&CraneSketch<f32>>,
    opts: &BenchOptions,
) -> Result<BenchmarkReport> {
    if stream.is_empty() {
        return Err(CraneError::Parameter("empty stream".into()));
    }
    if methods.is_empty() {
        return Err(CraneError::Parameter("no methods given".into()));
    }
    let mut oracle = ExactCounter::new();
    oracle.insert_stream(stream)?;
    let queries = oracle.distinct_edges().to_vec();
    let truths: Vec<f64> = queries.iter().map(|&(o, d)| oracle.query(o, d)).collect();

    let mut origins: Vec<u32> = Vec::new();
    let mut incident: std::collections::HashMap<u32, Vec<usize>> = std::collections::HashMap::new();
    for (k, &(o, _)) in queries.iter().enumerate() {
        incident
            .entry(o)
            .or_insert_with(|| {
                origins.push(o);
                Vec::new()
            })
            .push(k);
    }
    let flux_truths: Vec<f64> = origins.iter().map(|&o| oracle.flux(o, Direction::Out)).collect();

    let stream_digest = Digest::of_stream(stream);
    let query_digest = Digest::of_keys(&queries);
    let sketches: Vec<Box<dyn FrequencySketch>> =
        methods.iter().map(|&k| build(k, crane, opts)).collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(methods.len());
    for (&kind, mut sketch) in methods.iter().zip(sketches) {
        let start = Instant::now();
        sketch.insert_stream(stream)?;
        let store_rate = rate(stream.len(), start);

        let start = Instant::now();
        let estimates: Vec<f64> = queries.iter().map(|&(o, d)| sketch.estimate(o, d)).collect();
        let query_rate = rate(queries.len(), start);

        let flux_est: Vec<f64> = origins
            .iter()
            .map(|o| sketch.out_flux(*o).unwrap_or_else(|| incident[o].iter().map(|&k| estimates[k]).sum()))
            .collect();
        let bytes = sketch.bytes();
        if bytes > opts.budget {
            return Err(CraneError::Budget { method: kind.name().into(), used: bytes, budget: opts.budget });
        }
        results.push(MethodResult {
            method: kind,
            edges: metrics(&estimates, &truths)?,
            flux: metrics(&flux_est, &flux_truths)?,
            bytes,
            active_layers: sketch.active_layers(),
            store_ops_per_sec: opts.timing.then_some(store_rate),
            query_ops_per_sec: opts.timing.then_some(query_rate),
            estimates,
        });
    }

    Ok(BenchmarkReport {
        meta: RunMetadata {
            seed: opts.seed,
            budget: opts.budget,
            stream_len: stream.len(),
            distinct_edges: queries.len(),
            total_weight: oracle.total_weight(),
            stream_digest,
            query_digest,
            crane: crane.map(|m| *m.config()),
        },
        queries,
        truths,
        results,
    })
}
