//! Node-id encoders and basis construction.
//!
//! A node id is expanded into 32 binary features (LSB first) and passed
//! through a small MLP, 32 → 16 → 36 → 64, with batch norm after the first two
//! linear layers and ReLU after every layer. Each sketch layer owns one origin
//! and one destination encoder.

use rand::Rng as _;

use crate::error::{CraneError, Result};
use crate::numerics::{BnMode, BnStats, Tape, Tensor, Var};
use crate::rng::Rng;

pub const CODE_BITS: usize = 32;
pub const EMBED_DIM: usize = 64;
pub const HIDDEN: [usize; 2] = [16, 36];

/// 32-bit binary expansion of a node id, least significant bit first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryCode(pub [f64; CODE_BITS]);

pub fn binary_encode(node: u32) -> BinaryCode {
    let mut bits = [0.0; CODE_BITS];
    for (k, b) in bits.iter_mut().enumerate() {
        *b = ((node >> k) & 1) as f64;
    }
    BinaryCode(bits)
}

/// Parameter block order inside an [`EncoderNet`].
pub mod block {
    pub const W1: usize = 0;
    pub const B1: usize = 1;
    pub const G1: usize = 2;
    pub const BETA1: usize = 3;
    pub const W2: usize = 4;
    pub const B2: usize = 5;
    pub const G2: usize = 6;
    pub const BETA2: usize = 7;
    pub const W3: usize = 8;
    pub const B3: usize = 9;
    pub const COUNT: usize = 10;
}

/// Shapes of the parameter blocks, in [`block`] order.
pub fn block_shapes() -> [Vec<usize>; block::COUNT] {
    let [h1, h2] = HIDDEN;
    [
        vec![CODE_BITS, h1],
        vec![h1],
        vec![h1],
        vec![h1],
        vec![h1, h2],
        vec![h2],
        vec![h2],
        vec![h2],
        vec![h2, EMBED_DIM],
        vec![EMBED_DIM],
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    /// Row-major weights `[in×out]`, biases, and batch-norm scale/shift.
    pub blocks: Vec<Vec<f64>>,
    pub bn: [BnStats; 2],
}

/// Tape handles for one encoder's parameters during a training step.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub blocks: Vec<Var>,
}

impl EncoderNet {
    /// Kaiming-uniform weights (bound √(6/fan_in)), biases uniform in
    /// ±1/√fan_in, unit batch-norm scale and zero shift.
    pub fn new(rng: &mut Rng) -> Self {
        let shapes = block_shapes();
        let mut blocks = Vec::with_capacity(block::COUNT);
        for (k, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let b = match k {
                block::W1 | block::W2 | block::W3 => {
                    let bound = (6.0 / shape[0] as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
                block::B1 | block::B2 | block::B3 => {
                    let fan_in = shapes[k - 1][0] as f64;
                    let bound = 1.0 / fan_in.sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
                block::G1 | block::G2 => vec![1.0; n],
                _ => vec![0.0; n],
            };
            blocks.push(b);
        }
        EncoderNet { blocks, bn: [BnStats::new(HIDDEN[0]), BnStats::new(HIDDEN[1])] }
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Inference-mode embedding using running batch-norm statistics.
    pub fn embed(&self, code: &BinaryCode) -> [f64; EMBED_DIM] {
        let h1 = self.dense_bn(&code.0, block::W1, block::B1, Some((block::G1, block::BETA1, 0)));
        let h2 = self.dense_bn(&h1, block::W2, block::B2, Some((block::G2, block::BETA2, 1)));
        let h3 = self.dense_bn(&h2, block::W3, block::B3, None);
        let mut out = [0.0; EMBED_DIM];
        out.copy_from_slice(&h3);
        out
    }

    fn dense_bn(&self, x: &[f64], w: usize, b: usize, bn: Option<(usize, usize, usize)>) -> Vec<f64> {
        let bias = &self.blocks[b];
        let weights = &self.blocks[w];
        let out_dim = bias.len();
        let mut y = bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &weights[i * out_dim..(i + 1) * out_dim];
            for (yj, wj) in y.iter_mut().zip(row) {
                *yj += xi * wj;
            }
        }
        if let Some((g, beta, s)) = bn {
            let st = &self.bn[s];
            for j in 0..out_dim {
                let h = (y[j] - st.mean[j]) / (st.var[j] + crate::numerics::BN_EPS).sqrt();
                y[j] = self.blocks[g][j] * h + self.blocks[beta][j];
            }
        }
        y.iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    /// Registers the parameters as tape leaves.
    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        let shapes = block_shapes();
        let blocks = self
            .blocks
            .iter()
            .zip(shapes)
            .map(|(b, s)| tape.leaf(Tensor::new(s, b.clone()).expect("block shape")))
            .collect();
        EncoderVars { blocks }
    }

    /// Embeds a batch of codes on the tape, giving a `[n×64]` node. In train
    /// mode the batch-norm running statistics are updated.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        vars: &EncoderVars,
        codes: &[BinaryCode],
        mode: BnMode,
    ) -> Result<Var> {
        if codes.is_empty() {
            return Err(CraneError::Dimension("empty encoder batch".into()));
        }
        let data = codes.iter().flat_map(|c| c.0).collect();
        let x = tape.leaf(Tensor::matrix(codes.len(), CODE_BITS, data)?);
        let v = &vars.blocks;
        let h = tape.matmul(x, v[block::W1])?;
        let h = tape.add_row(h, v[block::B1])?;
        let h = tape.batchnorm(h, v[block::G1], v[block::BETA1], &mut self.bn[0], mode)?;
        let h = tape.relu(h);
        let h = tape.matmul(h, v[block::W2])?;
        let h = tape.add_row(h, v[block::B2])?;
        let h = tape.batchnorm(h, v[block::G2], v[block::BETA2], &mut self.bn[1], mode)?;
        let h = tape.relu(h);
        let h = tape.matmul(h, v[block::W3])?;
        let h = tape.add_row(h, v[block::B3])?;
        Ok(tape.relu(h))
    }
}

/// Origin and destination encoders of one sketch layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderPair {
    pub origin: EncoderNet,
    pub dest: EncoderNet,
}

/// One encoder pair per layer, `N_max` in total.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerEncoders {
    pub layers: Vec<EncoderPair>,
}

impl LayerEncoders {
    pub fn new(n_layers: usize, rng: &mut Rng) -> Self {
        let layers = (0..n_layers)
            .map(|_| {
                let origin = EncoderNet::new(rng);
                let dest = EncoderNet::new(rng);
                EncoderPair { origin, dest }
            })
            .collect();
        LayerEncoders { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn nets(&self) -> impl Iterator<Item = &EncoderNet> {
        self.layers.iter().flat_map(|p| [&p.origin, &p.dest])
    }

    /// Rounds parameters and running statistics to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        let r = |v: &mut f64| *v = *v as f32 as f64;
        for net in self.nets_mut() {
            net.blocks.iter_mut().flatten().for_each(r);
            for st in net.bn.iter_mut() {
                st.mean.iter_mut().chain(st.var.iter_mut()).for_each(r);
            }
        }
    }

    pub fn nets_mut(&mut self) -> impl Iterator<Item = &mut EncoderNet> {
        self.layers.iter_mut().flat_map(|p| [&mut p.origin, &mut p.dest])
    }
}

/// `A = e_o ⊗ e_d + ε`.
pub fn basis(e_o: &[f64], e_d: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(CraneError::Parameter(format!("basis epsilon must be positive, got {epsilon}")));
    }
    let mut out = Vec::with_capacity(e_o.len() * e_d.len());
    for &a in e_o {
        out.extend(e_d.iter().map(|&b| a * b + epsilon));
    }
    Ok(out)
}

/// Basis rescaled to unit mean: `(e_o ⊗ e_d + ε) / s` with
/// `s = Σe_o·Σe_d / (H·W) + ε`. Every pattern then carries the same total mass
/// `H·W`, whatever the embedding norms at its layer.
pub fn unit_basis_into(e_o: &[f64], e_d: &[f64], epsilon: f64, out: &mut [f64]) -> f64 {
    let cells = (e_o.len() * e_d.len()) as f64;
    let s = e_o.iter().sum::<f64>() * e_d.iter().sum::<f64>() / cells + epsilon;
    let inv = 1.0 / s;
    let w = e_d.len();
    for (p, &a) in e_o.iter().enumerate() {
        let row = &mut out[p * w..(p + 1) * w];
        for (o, &b) in row.iter_mut().zip(e_d) {
            *o = (a * b + epsilon) * inv;
        }
    }
    s
}
