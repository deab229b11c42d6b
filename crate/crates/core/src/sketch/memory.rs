use crate::encoders::EMBED_DIM;

pub const HEIGHT: usize = EMBED_DIM;
pub const WIDTH: usize = EMBED_DIM;
pub const CELLS: usize = HEIGHT * WIDTH;

/// Storage type of a memory cell. Arithmetic always happens in `f64`; the cell
/// type only decides what is kept between operations.
pub trait Cell: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const BYTES: usize;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Cell for f32 {
    const BYTES: usize = 4;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Cell for f64 {
    const BYTES: usize = 8;
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// One `H×W` accumulator matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMemory<C: Cell> {
    pub cells: Vec<C>,
}

impl<C: Cell> Default for LayerMemory<C> {
    fn default() -> Self {
        LayerMemory { cells: vec![C::default(); CELLS] }
    }
}

impl<C: Cell> LayerMemory<C> {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn sum(&self) -> f64 {
        self.cells.iter().map(|c| c.to_f64()).sum()
    }

    /// Load indicator λ: mean mass per cell.
    pub fn load(&self) -> f64 {
        self.sum() / CELLS as f64
    }

    pub fn is_zero(&self) -> bool {
        self.cells.iter().all(|c| c.to_f64() == 0.0)
    }

    pub fn min(&self) -> f64 {
        self.cells.iter().map(|c| c.to_f64()).fold(f64::INFINITY, f64::min)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.to_f64()).collect()
    }

    pub fn bytes(&self) -> usize {
        CELLS * C::BYTES
    }
}

/// `mem += k·a`.
pub fn add_scaled<C: Cell>(mem: &mut [C], a: &[f64], k: f64) {
    for (m, &x) in mem.iter_mut().zip(a) {
        *m = C::from_f64(m.to_f64() + k * x);
    }
}

/// `mem = max(mem − k·a, 0)`.
pub fn sub_scaled_clamped<C: Cell>(mem: &mut [C], a: &[f64], k: f64) {
    for (m, &x) in mem.iter_mut().zip(a) {
        *m = C::from_f64((m.to_f64() - k * x).max(0.0));
    }
}

/// `min mem/a` and its first row-major argmin. `a` must be strictly positive.
pub fn min_ratio_cells<C: Cell>(mem: &[C], a: &[f64]) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (i, (m, &x)) in mem.iter().zip(a).enumerate() {
        let r = m.to_f64() / x;
        if r < best {
            best = r;
            arg = i;
        }
    }
    (best, arg)
}
