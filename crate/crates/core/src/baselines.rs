//! Exact counting plus the TCM and Count-Min baselines.
//!
//! Baseline counters are 32-bit floats. Additions are rounded toward +∞ so the
//! one-sided error guarantee survives float rounding: a stored counter is never
//! below the exact sum of the weights that reached it.

use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{CraneError, Result};
use crate::rng::{derive_seed, seeded};
use crate::sketch::EdgeUpdate;

/// Lossless per-edge and per-node accumulation.
#[derive(Clone, Debug, Default)]
pub struct ExactCounter {
    edges: HashMap<(u32, u32), f64>,
    out_flux: HashMap<u32, f64>,
    in_flux: HashMap<u32, f64>,
    order: Vec<(u32, u32)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

impl ExactCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, e: &EdgeUpdate) {
        let slot = self.edges.entry(e.key()).or_insert_with(|| {
            self.order.push(e.key());
            0.0
        });
        *slot += e.weight;
        *self.out_flux.entry(e.origin).or_default() += e.weight;
        *self.in_flux.entry(e.dest).or_default() += e.weight;
    }

    pub fn query(&self, origin: u32, dest: u32) -> f64 {
        self.edges.get(&(origin, dest)).copied().unwrap_or(0.0)
    }

    pub fn flux(&self, node: u32, dir: Direction) -> f64 {
        let map = match dir {
            Direction::Out => &self.out_flux,
            Direction::In => &self.in_flux,
        };
        map.get(&node).copied().unwrap_or(0.0)
    }

    /// Distinct edges in first-seen order.
    pub fn distinct_edges(&self) -> &[(u32, u32)] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    /// Distinct edges incident to `node` in the given direction.
    pub fn incident(&self, node: u32, dir: Direction) -> Vec<(u32, u32)> {
        self.order
            .iter()
            .copied()
            .filter(|&(o, d)| match dir {
                Direction::Out => o == node,
                Direction::In => d == node,
            })
            .collect()
    }
}

/// `c + w` rounded up to the next representable `f32`.
fn add_round_up(c: f32, w: f64) -> f32 {
    let exact = c as f64 + w;
    let r = exact as f32;
    if (r as f64) < exact {
        r.next_up()
    } else {
        r
    }
}

/// `⌊x·m / 2^64⌋`: maps a 64-bit hash onto `[0, m)` without modulo bias.
fn fastrange(x: u64, m: usize) -> usize {
    ((x as u128 * m as u128) >> 64) as usize
}

/// Multiply-shift node hash `h(x) = (a·x + b) mod 2^64`, range-reduced from
/// the high bits. `Modulo` (`x mod m`) exists for hand-checkable tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeHash {
    MultiplyShift { a: u64, b: u64 },
    Modulo,
}

impl NodeHash {
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded(seed);
        NodeHash::MultiplyShift { a: rng.random::<u64>() | 1, b: rng.random() }
    }

    pub fn bucket(&self, x: u32, m: usize) -> usize {
        match *self {
            NodeHash::MultiplyShift { a, b } => fastrange(a.wrapping_mul(x as u64).wrapping_add(b), m),
            NodeHash::Modulo => x as usize % m,
        }
    }
}

/// Adjacency-matrix sketch: node ids are hashed into `m` super-nodes and each
/// edge weight lands in cell `[h(o)][h(d)]`.
#[derive(Clone, Debug)]
pub struct TcmSketch {
    m: usize,
    hash: NodeHash,
    counters: Vec<f32>,
}

impl TcmSketch {
    pub fn new(m: usize, hash: NodeHash) -> Result<Self> {
        if m == 0 {
            return Err(CraneError::Parameter("TCM side length must be positive".into()));
        }
        Ok(TcmSketch { m, hash, counters: vec![0.0; m * m] })
    }

    /// Largest square matrix of 4-byte counters fitting in `budget` bytes.
    pub fn with_budget(budget: usize, seed: u64) -> Result<Self> {
        let counters = budget / 4;
        let mut m = (counters as f64).sqrt() as usize;
        while (m + 1) * (m + 1) <= counters {
            m += 1;
        }
        while m * m > counters {
            m -= 1;
        }
        if m == 0 {
            return Err(CraneError::Budget { method: "tcm".into(), used: 4, budget });
        }
        Self::new(m, NodeHash::random(derive_seed(seed, 0x7C4D)))
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn bytes(&self) -> usize {
        self.counters.len() * 4
    }

    pub fn insert(&mut self, e: &EdgeUpdate) {
        let (r, c) = (self.hash.bucket(e.origin, self.m), self.hash.bucket(e.dest, self.m));
        let cell = &mut self.counters[r * self.m + c];
        *cell = add_round_up(*cell, e.weight);
    }

    pub fn query(&self, origin: u32, dest: u32) -> f64 {
        let (r, c) = (self.hash.bucket(origin, self.m), self.hash.bucket(dest, self.m));
        self.counters[r * self.m + c] as f64
    }

    /// Row sum (out) or column sum (in) at the node's bucket.
    pub fn node_flux(&self, node: u32, dir: Direction) -> f64 {
        let h = self.hash.bucket(node, self.m);
        match dir {
            Direction::Out => self.counters[h * self.m..(h + 1) * self.m].iter().map(|&c| c as f64).sum(),
            Direction::In => (0..self.m).map(|r| self.counters[r * self.m + h] as f64).sum(),
        }
    }
}

/// Count-Min over edge keys: `d` rows of `w` counters, query takes the row
/// minimum.
#[derive(Clone, Debug)]
pub struct CountMinSketch {
    width: usize,
    seeds: Vec<(u64, u64, u64)>,
    counters: Vec<f32>,
}

pub const CMS_DEPTH: usize = 3;

impl CountMinSketch {
    pub fn new(depth: usize, width: usize, seed: u64) -> Result<Self> {
        if depth == 0 || width == 0 {
            return Err(CraneError::Parameter("Count-Min needs positive depth and width".into()));
        }
        let mut rng = seeded(derive_seed(seed, 0xC35));
        let seeds = (0..depth)
            .map(|_| (rng.random::<u64>() | 1, rng.random::<u64>() | 1, rng.random::<u64>()))
            .collect();
        Ok(CountMinSketch { width, seeds, counters: vec![0.0; depth * width] })
    }

    /// `CMS_DEPTH` rows sharing `budget` bytes of 4-byte counters.
    pub fn with_budget(budget: usize, seed: u64) -> Result<Self> {
        let width = budget / (4 * CMS_DEPTH);
        if width == 0 {
            return Err(CraneError::Budget { method: "cms".into(), used: 4 * CMS_DEPTH, budget });
        }
        Self::new(CMS_DEPTH, width, seed)
    }

    pub fn depth(&self) -> usize {
        self.seeds.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bytes(&self) -> usize {
        self.counters.len() * 4
    }

    fn slot(&self, row: usize, origin: u32, dest: u32) -> usize {
        let (a1, a2, b) = self.seeds[row];
        let h = a1
            .wrapping_mul(origin as u64)
            .wrapping_add(a2.wrapping_mul(dest as u64 ^ 0x9E37_79B9_0000_0000))
            .wrapping_add(b);
        row * self.width + fastrange(h, self.width)
    }

    pub fn insert(&mut self, e: &EdgeUpdate) {
        for row in 0..self.depth() {
            let s = self.slot(row, e.origin, e.dest);
            self.counters[s] = add_round_up(self.counters[s], e.weight);
        }
    }

    pub fn query(&self, origin: u32, dest: u32) -> f64 {
        (0..self.depth())
            .map(|row| self.counters[self.slot(row, origin, dest)] as f64)
            .fold(f64::INFINITY, f64::min)
    }
}
