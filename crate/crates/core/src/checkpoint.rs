//! Versioned binary checkpoints for RBM stacks and unfolded autoencoders.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "LWCKPT\0\0"
//! version    u32
//! kind       u32      1 = RBM stack, 2 = autoencoder
//! seed       u64
//! epoch      u64      epochs completed in the phase that wrote it
//! layers     u32
//! per layer  RBM:  u32 visible, u32 hidden, weights, visible bias, hidden
//!                  bias, then the three velocities
//!            AE:   u32 in, u32 out, weights, bias
//! code_index u64      (autoencoder only)
//! checksum   u64      FNV-1a of every preceding byte
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::autoencoder::{Layer, StackedAutoencoder};
use crate::error::{Error, Result};
use crate::rbm::RbmParams;

pub const MAGIC: &[u8; 8] = b"LWCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Largest dimension accepted when reading; guards allocations on corrupt input.
const MAX_DIM: u32 = 1 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("unknown model kind {0}")]
    UnknownKind(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
    #[error("{0} trailing bytes after checkpoint")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    RbmStack(Vec<RbmParams>),
    Autoencoder(StackedAutoencoder),
}

impl Model {
    fn kind(&self) -> u32 {
        match self {
            Model::RbmStack(_) => 1,
            Model::Autoencoder(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub epoch: u64,
    pub model: Model,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn floats<'a>(&mut self, xs: impl IntoIterator<Item = &'a f64>) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn dim(&mut self) -> Result<usize, CheckpointError> {
        let d = self.u32()?;
        if d == 0 || d > MAX_DIM {
            return Err(CheckpointError::Inconsistent(format!("layer dimension {d}")));
        }
        Ok(d as usize)
    }
    fn vector(&mut self, n: usize) -> Result<Array1<f64>, CheckpointError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>, CheckpointError> {
        let v = self.vector(rows * cols)?;
        Ok(v.into_shape_with_order((rows, cols)).unwrap())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(FORMAT_VERSION);
        w.u32(self.model.kind());
        w.u64(self.seed);
        w.u64(self.epoch);
        match &self.model {
            Model::RbmStack(rbms) => {
                w.u32(rbms.len() as u32);
                for r in rbms {
                    w.u32(r.n_visible() as u32);
                    w.u32(r.n_hidden() as u32);
                    w.floats(r.weights.iter());
                    w.floats(r.visible_bias.iter());
                    w.floats(r.hidden_bias.iter());
                    w.floats(r.vel_weights.iter());
                    w.floats(r.vel_visible.iter());
                    w.floats(r.vel_hidden.iter());
                }
            }
            Model::Autoencoder(sae) => {
                w.u32(sae.layers.len() as u32);
                for l in &sae.layers {
                    w.u32(l.in_dim() as u32);
                    w.u32(l.out_dim() as u32);
                    w.floats(l.weights.iter());
                    w.floats(l.bias.iter());
                }
                w.u64(sae.code_index as u64);
            }
        }
        let sum = fnv1a(&w.0);
        w.u64(sum);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { buf, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let kind = r.u32()?;
        let seed = r.u64()?;
        let epoch = r.u64()?;
        let n = r.u32()? as usize;
        let model = match kind {
            1 => {
                let mut rbms = Vec::with_capacity(n.min(64));
                for _ in 0..n {
                    let (v, h) = (r.dim()?, r.dim()?);
                    let mut rbm = RbmParams::from_parts(r.matrix(h, v)?, r.vector(v)?, r.vector(h)?)
                        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
                    rbm.vel_weights = r.matrix(h, v)?;
                    rbm.vel_visible = r.vector(v)?;
                    rbm.vel_hidden = r.vector(h)?;
                    rbms.push(rbm);
                }
                Model::RbmStack(rbms)
            }
            2 => {
                let mut layers = Vec::with_capacity(n.min(64));
                for _ in 0..n {
                    let (i, o) = (r.dim()?, r.dim()?);
                    let layer = Layer::new(r.matrix(o, i)?, r.vector(o)?)
                        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
                    layers.push(layer);
                }
                let code_index = r.u64()? as usize;
                if layers.windows(2).any(|p| p[0].out_dim() != p[1].in_dim()) {
                    return Err(CheckpointError::Inconsistent("layer dimensions do not chain".into()));
                }
                if code_index > layers.len() {
                    return Err(CheckpointError::Inconsistent(format!(
                        "code index {code_index} beyond {} layers",
                        layers.len()
                    )));
                }
                Model::Autoencoder(StackedAutoencoder { layers, code_index })
            }
            other => return Err(CheckpointError::UnknownKind(other)),
        };
        let computed = fnv1a(&buf[..r.pos]);
        let stored = r.u64()?;
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
        }
        Ok(Checkpoint { seed, epoch, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&buf)?)
    }
}
