//! `DPTA` angle dumps.
//!
//! Little-endian layout:
//!
//! ```text
//! "DPTA"  u32 version  u32 array_count
//! per array: u32 name_len, name (UTF-8), u8 dtype (1 = f32), u64 rows, u64 cols, rows·cols f32
//! ```
//!
//! Arrays are written in the order theta, theta_dh, norms, angle_to_end,
//! cross_entropy (optional). Readers accept any order. Missing values are NaN.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::net::checkpoint::{write_atomic, Reader};

use super::angles::AngleStats;

pub const DUMP_MAGIC: &[u8; 4] = b"DPTA";
pub const DUMP_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;
const NAMES: [&str; 5] = ["theta", "theta_dh", "norms", "angle_to_end", "cross_entropy"];

/// Header entry of one stored array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DumpArrayInfo {
    pub name: String,
    pub rows: u64,
    pub cols: u64,
}

/// Serializes `stats` after validating it. Values are rounded to `f32`.
pub fn encode_dump(stats: &AngleStats) -> Result<Vec<u8>> {
    stats.validate()?;
    let arrays = stats.arrays();
    let mut out = Vec::new();
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, m) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for &v in m.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct RawArray {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn read_arrays(bytes: &[u8], with_data: bool) -> std::result::Result<Vec<RawArray>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != DUMP_MAGIC {
        return Err("bad magic (not a DPTA dump)".into());
    }
    let version = r.u32()?;
    if version != DUMP_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "array name is not UTF-8".to_string())?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(format!("{name}: unsupported dtype {dtype}"));
        }
        let rows = r.u64()?;
        let cols = r.u64()?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| format!("{name}: {rows}×{cols} is too large"))?;
        let raw = r.take(n)?;
        let data = if with_data {
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()
        } else {
            Vec::new()
        };
        arrays.push(RawArray {
            name,
            rows: rows as usize,
            cols: cols as usize,
            data,
        });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(arrays)
}

/// Parses and validates a dump; `path` only labels errors.
pub fn decode_dump(bytes: &[u8], path: &Path) -> Result<AngleStats> {
    let arrays = read_arrays(bytes, true).map_err(|e| Error::format(path, e))?;
    let mut slots: [Option<Matrix>; 5] = Default::default();
    for a in arrays {
        let k = NAMES
            .iter()
            .position(|n| *n == a.name)
            .ok_or_else(|| Error::format(path, format!("unknown array {:?}", a.name)))?;
        if slots[k].is_some() {
            return Err(Error::format(path, format!("duplicate array {:?}", a.name)));
        }
        let mut m = Matrix::zeros(a.rows, a.cols);
        m.as_mut_slice().copy_from_slice(&a.data);
        slots[k] = Some(m);
    }
    let [theta, theta_dh, norms, angle_to_end, cross_entropy] = slots;
    let take = |m: Option<Matrix>, name: &str| {
        m.ok_or_else(|| Error::format(path, format!("missing array {name:?}")))
    };
    let stats = AngleStats {
        theta: take(theta, "theta")?,
        theta_dh: take(theta_dh, "theta_dh")?,
        norms: take(norms, "norms")?,
        angle_to_end: take(angle_to_end, "angle_to_end")?,
        cross_entropy,
    };
    stats
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(stats)
}

pub fn save_dump(path: &Path, stats: &AngleStats) -> Result<()> {
    write_atomic(path, &encode_dump(stats)?)
}

pub fn load_dump(path: &Path) -> Result<AngleStats> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dump(&bytes, path)
}

/// Array names and shapes, without decoding or validating values.
pub fn dump_info(path: &Path) -> Result<Vec<DumpArrayInfo>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let arrays = read_arrays(&bytes, false).map_err(|e| Error::format(path, e))?;
    Ok(arrays
        .into_iter()
        .map(|a| DumpArrayInfo {
            name: a.name,
            rows: a.rows as u64,
            cols: a.cols as u64,
        })
        .collect())
}
