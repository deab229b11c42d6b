//! Binary model format.
//!
//! ```text
//! "CRNE"  u16 version
//! u32 H, u32 W, u32 N_max, u32 L
//! f32 θ, f32 τ, f32 ε
//! u32 b_size, u32 carry_mode
//! per layer, origin then destination encoder:
//!     10 parameter blocks, then BN running mean/var for both BN layers
//! decoder w block, decoder b block
//! L memory blocks
//! ```
//!
//! Every block is a little-endian `u32` element count followed by that many
//! `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoders::{block_shapes, EncoderNet, EncoderPair, LayerEncoders, EMBED_DIM};
use crate::error::{CraneError, Result};
use crate::numerics::BnStats;
use crate::sketch::{CarryMode, CraneSketch, Decoder, LayerMemory, SketchConfig, CELLS, HEIGHT, WIDTH};

pub const MAGIC: &[u8; 4] = b"CRNE";
pub const VERSION: u16 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&(v as f32).to_le_bytes())?;
    Ok(())
}

fn put_block(w: &mut impl Write, values: impl ExactSizeIterator<Item = f64>) -> Result<()> {
    put_u32(w, values.len() as u32)?;
    for v in values {
        put_f32(w, v)?;
    }
    Ok(())
}

fn get_bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CraneError::Format("truncated file".into()),
        _ => CraneError::Io(e),
    })?;
    Ok(buf)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(get_bytes(r)?))
}

fn get_f32(r: &mut impl Read) -> Result<f64> {
    Ok(f32::from_le_bytes(get_bytes(r)?) as f64)
}

fn get_block(r: &mut impl Read, expected: usize, what: &str) -> Result<Vec<f64>> {
    let n = get_u32(r)? as usize;
    if n != expected {
        return Err(CraneError::Format(format!("{what}: expected {expected} values, found {n}")));
    }
    (0..n).map(|_| get_f32(r)).collect()
}

fn put_net(w: &mut impl Write, net: &EncoderNet) -> Result<()> {
    for b in &net.blocks {
        put_block(w, b.iter().copied())?;
    }
    for st in &net.bn {
        put_block(w, st.mean.iter().copied())?;
        put_block(w, st.var.iter().copied())?;
    }
    Ok(())
}

fn get_net(r: &mut impl Read) -> Result<EncoderNet> {
    let blocks = block_shapes()
        .iter()
        .enumerate()
        .map(|(k, s)| get_block(r, s.iter().product(), &format!("encoder block {k}")))
        .collect::<Result<Vec<_>>>()?;
    let mut bn = [BnStats::new(0), BnStats::new(0)];
    for (k, st) in bn.iter_mut().enumerate() {
        let d = crate::encoders::HIDDEN[k];
        st.mean = get_block(r, d, "batch-norm mean")?;
        st.var = get_block(r, d, "batch-norm variance")?;
    }
    Ok(EncoderNet { blocks, bn })
}

pub fn write_model(w: &mut impl Write, model: &CraneSketch<f32>) -> Result<()> {
    let cfg = model.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [HEIGHT, WIDTH, cfg.n_max, model.active_layers()] {
        put_u32(w, v as u32)?;
    }
    put_f32(w, cfg.theta)?;
    put_f32(w, cfg.tau)?;
    put_f32(w, cfg.epsilon)?;
    put_u32(w, cfg.b_size as u32)?;
    put_u32(w, cfg.carry_mode.as_u32())?;
    for pair in &model.encoders().layers {
        put_net(w, &pair.origin)?;
        put_net(w, &pair.dest)?;
    }
    put_block(w, model.decoder().w.iter().copied())?;
    put_block(w, std::iter::once(model.decoder().b))?;
    for m in model.memories() {
        put_u32(w, CELLS as u32)?;
        for c in &m.cells {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<CraneSketch<f32>> {
    let magic: [u8; 4] = get_bytes(r)?;
    if &magic != MAGIC {
        return Err(CraneError::Format("not a Crane model file".into()));
    }
    let version = u16::from_le_bytes(get_bytes(r)?);
    if version != VERSION {
        return Err(CraneError::Format(format!("unsupported version {version}")));
    }
    let (h, wd, n_max, active) = (get_u32(r)?, get_u32(r)?, get_u32(r)? as usize, get_u32(r)? as usize);
    if h as usize != EMBED_DIM || wd as usize != EMBED_DIM {
        return Err(CraneError::Format(format!("unsupported memory shape {h}x{wd}")));
    }
    if n_max == 0 || n_max > 1 << 16 || active == 0 || active > n_max {
        return Err(CraneError::Format(format!("bad layer counts N_max={n_max}, L={active}")));
    }
    let theta = get_f32(r)?;
    let tau = get_f32(r)?;
    let epsilon = get_f32(r)?;
    let b_size = get_u32(r)? as usize;
    let carry_mode = CarryMode::from_u32(get_u32(r)?)?;
    let config = SketchConfig { theta, tau, n_max, epsilon, b_size, carry_mode };
    config.validate().map_err(|e| CraneError::Format(e.to_string()))?;
    let layers = (0..n_max)
        .map(|_| Ok(EncoderPair { origin: get_net(r)?, dest: get_net(r)? }))
        .collect::<Result<Vec<_>>>()?;
    let w = get_block(r, n_max, "decoder weights")?;
    let b = get_block(r, 1, "decoder bias")?[0];
    let mut memories = Vec::with_capacity(active);
    for _ in 0..active {
        let n = get_u32(r)? as usize;
        if n != CELLS {
            return Err(CraneError::Format(format!("memory block of {n} cells")));
        }
        let cells = (0..n).map(|_| Ok(f32::from_le_bytes(get_bytes(r)?))).collect::<Result<Vec<_>>>()?;
        memories.push(LayerMemory { cells });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CraneError::Format("trailing bytes after model".into()));
    }
    let mut model = CraneSketch::from_parts(config, LayerEncoders { layers }, Decoder { w, b })?;
    model.set_memories(memories)?;
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &CraneSketch<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CraneSketch<f32>> {
    read_model(&mut BufReader::new(File::open(path)?))
}
