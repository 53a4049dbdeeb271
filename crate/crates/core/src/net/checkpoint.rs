//! `DPTH` network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "DPTH"
//! version      u32      = 1
//! config       width u64, logit_dim u64, depth u64, init_rescale_depth u64,
//!              block_kind u8 (0 first order, 1 second order),
//!              tie_weights u8, head_source u8 (0 own, 1 copied),
//!              rescale_target u8 (0 output only, 1 both)
//! n_tensors    u32
//! tensor       name_len u32, name (UTF-8), ndim u32, dims u64 × ndim,
//!              data f64 × prod(dims)
//! ```
//!
//! Tensors appear in the order of [`Network::param_names`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Matrix;

use super::config::{BlockKind, HeadSource, NetworkConfig, RescaleTarget};
use super::network::{Block, Mlp, Network};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DPTH";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::with_capacity(64 + 8 * net.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.width, cfg.logit_dim, cfg.depth, cfg.init_rescale_depth] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(match cfg.block_kind {
        BlockKind::FirstOrder => 0,
        BlockKind::SecondOrder => 1,
    });
    out.push(u8::from(cfg.tie_weights));
    out.push(match cfg.head_source {
        HeadSource::Own => 0,
        HeadSource::CopiedFromTeacher => 1,
    });
    out.push(match cfg.rescale_target {
        RescaleTarget::OutputOnly => 0,
        RescaleTarget::Both => 1,
    });
    let names = net.param_names();
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for ((name, shape), data) in names.iter().zip(net.param_slices()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|reason| Error::format(path, reason))
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Network, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err("bad magic, expected DPTH".into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let width = r.u64()? as usize;
    let logit_dim = r.u64()? as usize;
    let depth = r.u64()? as usize;
    let init_rescale_depth = r.u64()? as usize;
    let block_kind = match r.u8()? {
        0 => BlockKind::FirstOrder,
        1 => BlockKind::SecondOrder,
        k => return Err(format!("unknown block kind {k}")),
    };
    let tie_weights = match r.u8()? {
        0 => false,
        1 => true,
        t => return Err(format!("invalid tie flag {t}")),
    };
    let head_source = match r.u8()? {
        0 => HeadSource::Own,
        1 => HeadSource::CopiedFromTeacher,
        h => return Err(format!("unknown head source {h}")),
    };
    let rescale_target = match r.u8()? {
        0 => RescaleTarget::OutputOnly,
        1 => RescaleTarget::Both,
        t => return Err(format!("unknown rescale target {t}")),
    };
    let config = NetworkConfig {
        width,
        logit_dim,
        depth,
        block_kind,
        tie_weights,
        init_rescale_depth,
        head_source,
        rescale_target,
    };
    config.validate().map_err(|e| e.to_string())?;

    let template = Network::zeros(config).map_err(|e| e.to_string())?;
    let expected = template.param_names();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(format!("{count} tensors, expected {}", expected.len()));
    }
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?;
        if name != want_name {
            return Err(format!("tensor {name:?} where {want_name:?} was expected"));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if &shape != want_shape {
            return Err(format!("{name}: shape {shape:?}, expected {want_shape:?}"));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(format!("{name}: non-finite value"));
        }
        tensors.push(data);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }

    let (m, h) = (config.width, config.hidden());
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("tensor count checked");
    let mut blocks = Vec::with_capacity(config.stored_blocks());
    for _ in 0..config.stored_blocks() {
        let mut mlps = Vec::new();
        for _ in 0..block_kind.mlps_per_block() {
            let a = Matrix::from_vec(h, m, next()).map_err(|e| e.to_string())?;
            let bias = next();
            let b = Matrix::from_vec(m, h, next()).map_err(|e| e.to_string())?;
            mlps.push(Mlp { a, bias, b });
        }
        blocks.push(Block { mlps });
    }
    let head = Matrix::from_vec(logit_dim, m, next()).map_err(|e| e.to_string())?;
    Network::from_parts(config, blocks, head).map_err(|e| e.to_string())
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {} (needed {n} more)", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
