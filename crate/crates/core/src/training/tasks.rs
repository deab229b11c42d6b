//! Synthetic meta-tasks: a weighted support stream and its exact query set.

use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{CraneError, Result};
use crate::rng::{seeded, Rng};
use crate::sketch::EdgeUpdate;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightFamily {
    /// Weights follow a Zipf mass profile with a per-task exponent.
    Zipf,
    /// Weights are i.i.d. uniform before normalization.
    Uniform,
}

impl WeightFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zipf" => Ok(WeightFamily::Zipf),
            "uniform" => Ok(WeightFamily::Uniform),
            _ => Err(CraneError::Parameter(format!("unknown weight family `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightFamily::Zipf => "zipf",
            WeightFamily::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskConfig {
    /// Longest support stream Γ.
    pub gamma: usize,
    /// Shortest support stream.
    pub min_len: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Total weight is drawn log-uniformly from `[mult_min·L, mult_max·L]`.
    pub mult_min: f64,
    pub mult_max: f64,
    /// Node ids are drawn uniformly from `[0, id_space)`.
    pub id_space: u64,
    pub family: WeightFamily,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            gamma: 60_000,
            min_len: 1,
            alpha_min: 0.3,
            alpha_max: 0.8,
            mult_min: 5.0,
            mult_max: 50.0,
            id_space: 1 << 20,
            family: WeightFamily::Zipf,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CraneError::Parameter(m));
        if self.gamma == 0 {
            return fail("gamma must be at least 1".into());
        }
        if self.min_len == 0 || self.min_len > self.gamma {
            return fail(format!("min_len {} outside [1, gamma={}]", self.min_len, self.gamma));
        }
        if !(self.alpha_min >= 0.0) || !(self.alpha_max >= self.alpha_min) {
            return fail(format!("alpha range [{}, {}] invalid", self.alpha_min, self.alpha_max));
        }
        if !(self.mult_min > 0.0) || !(self.mult_max >= self.mult_min) || !self.mult_max.is_finite() {
            return fail(format!("weight multiplier range [{}, {}] invalid", self.mult_min, self.mult_max));
        }
        if self.id_space == 0 || self.id_space > 1 << 32 {
            return fail(format!("id_space {} must lie in [1, 2^32]", self.id_space));
        }
        Ok(())
    }
}

/// Support stream plus every distinct edge with its exact cumulative weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub support: Vec<EdgeUpdate>,
    pub queries: Vec<(u32, u32)>,
    pub truths: Vec<f64>,
}

impl Task {
    /// Builds the query set from a stream, in first-seen order.
    pub fn from_stream(support: Vec<EdgeUpdate>) -> Self {
        let mut index: HashMap<(u32, u32), usize> = HashMap::new();
        let mut queries = Vec::new();
        let mut truths: Vec<f64> = Vec::new();
        for e in &support {
            let k = *index.entry(e.key()).or_insert_with(|| {
                queries.push(e.key());
                truths.push(0.0);
                queries.len() - 1
            });
            truths[k] += e.weight;
        }
        Task { support, queries, truths }
    }
}

/// `p_k ∝ k^(−α)` over ranks `1..=K`.
pub fn zipf_weights(alpha: f64, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(CraneError::Parameter("zipf support must be non-empty".into()));
    }
    if !(alpha >= 0.0) {
        return Err(CraneError::Parameter(format!("zipf exponent must be non-negative, got {alpha}")));
    }
    let raw: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-alpha)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|x| x / total).collect())
}

/// Inverse-CDF sampler over ranks `0..K` (rank 0 is the most frequent).
#[derive(Clone, Debug)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(alpha: f64, k: usize) -> Result<Self> {
        let p = zipf_weights(alpha, k)?;
        let mut acc = 0.0;
        let cdf = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        Ok(ZipfSampler { cdf })
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

fn random_edge(rng: &mut Rng, id_space: u64) -> (u32, u32) {
    (rng.random_range(0..id_space) as u32, rng.random_range(0..id_space) as u32)
}

/// Normalized weight profile `w̃` of length `len`, summing to one.
pub fn weight_profile(family: WeightFamily, alpha: f64, len: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = match family {
        WeightFamily::Zipf => (0..len)
            .map(|_| (rng.random_range(1..=len) as f64).powf(-alpha))
            .collect(),
        WeightFamily::Uniform => (0..len).map(|_| rng.random::<f64>()).collect(),
    };
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.into_iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / len as f64; len]
    }
}

/// Draws one task: a length, an exponent, endpoints, a normalized weight
/// profile and a log-uniform total weight.
pub fn generate_task(cfg: &TaskConfig, seed: u64) -> Result<Task> {
    cfg.validate()?;
    let mut rng = seeded(seed);
    let len = rng.random_range(cfg.min_len..=cfg.gamma);
    let alpha = if cfg.alpha_max > cfg.alpha_min {
        rng.random_range(cfg.alpha_min..=cfg.alpha_max)
    } else {
        cfg.alpha_min
    };
    let endpoints: Vec<(u32, u32)> = (0..len).map(|_| random_edge(&mut rng, cfg.id_space)).collect();
    let profile = weight_profile(cfg.family, alpha, len, &mut rng);
    let (lo, hi) = ((cfg.mult_min * len as f64).ln(), (cfg.mult_max * len as f64).ln());
    let total = if hi > lo { rng.random_range(lo..hi).exp() } else { lo.exp() };
    let support = endpoints
        .into_iter()
        .zip(profile)
        .map(|((o, d), w)| EdgeUpdate::new(o, d, total * w))
        .collect();
    Ok(Task::from_stream(support))
}

/// Unit-weight stream whose items are drawn from a universe of `universe`
/// random edges with Zipf(α) popularity.
pub fn zipf_stream(alpha: f64, universe: usize, updates: usize, id_space: u64, seed: u64) -> Result<Vec<EdgeUpdate>> {
    if id_space == 0 || id_space > 1 << 32 {
        return Err(CraneError::Parameter(format!("id_space {id_space} must lie in [1, 2^32]")));
    }
    let sampler = ZipfSampler::new(alpha, universe)?;
    let mut rng = seeded(seed);
    let edges: Vec<(u32, u32)> = (0..universe).map(|_| random_edge(&mut rng, id_space)).collect();
    Ok((0..updates)
        .map(|_| {
            let (o, d) = edges[sampler.sample(&mut rng)];
            EdgeUpdate::new(o, d, 1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_weight_examples() {
        let u = zipf_weights(0.0, 4).unwrap();
        assert!(u.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert_eq!(zipf_weights(2.0, 1).unwrap(), vec![1.0]);
        let p = zipf_weights(1.0, 3).unwrap();
        for (a, b) in p.iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(zipf_weights(1.0, 0).is_err());
    }

    #[test]
    fn sampler_frequencies_follow_weights() {
        let s = ZipfSampler::new(1.0, 3).unwrap();
        let mut rng = seeded(5);
        let mut counts = [0usize; 3];
        let n = 200_000;
        for _ in 0..n {
            counts[s.sample(&mut rng)] += 1;
        }
        let p = zipf_weights(1.0, 3).unwrap();
        for k in 0..3 {
            assert!((counts[k] as f64 / n as f64 - p[k]).abs() < 0.01);
        }
    }

    #[test]
    fn single_edge_task() {
        let cfg = TaskConfig { gamma: 1, ..TaskConfig::default() };
        let t = generate_task(&cfg, 11).unwrap();
        assert_eq!(t.support.len(), 1);
        assert_eq!(t.queries.len(), 1);
        assert_eq!(t.truths[0], t.support[0].weight);
    }

    #[test]
    fn task_truths_aggregate_support() {
        let cfg = TaskConfig { gamma: 500, id_space: 8, ..TaskConfig::default() };
        for seed in 0..5 {
            let t = generate_task(&cfg, seed).unwrap();
            let s: f64 = t.support.iter().map(|e| e.weight).sum();
            let q: f64 = t.truths.iter().sum();
            assert!((s - q).abs() <= 1e-9 * s);
            assert_eq!(t, generate_task(&cfg, seed).unwrap());
        }
    }

    #[test]
    fn profiles_sum_to_one() {
        let mut rng = seeded(1);
        for fam in [WeightFamily::Zipf, WeightFamily::Uniform] {
            let p = weight_profile(fam, 0.7, 1000, &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
