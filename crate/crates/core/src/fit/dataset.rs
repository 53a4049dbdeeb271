use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measured model: width, depth, training tokens and loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub m: f64,
    pub ell: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingDataset {
    pub rows: Vec<ScalingRow>,
    pub provenance: String,
    pub excluded: usize,
    /// Number of exact duplicate rows kept in `rows`.
    pub duplicates: usize,
}

impl ScalingDataset {
    pub fn new(rows: Vec<ScalingRow>, provenance: impl Into<String>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            for (name, v) in [("m", r.m), ("ell", r.ell), ("D", r.d), ("loss", r.loss)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "row {}: {name} must be positive and finite, got {v}",
                        i + 1
                    )));
                }
            }
        }
        let duplicates = count_duplicates(&rows);
        Ok(ScalingDataset {
            rows,
            provenance: provenance.into(),
            excluded: 0,
            duplicates,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Drops the `n` rows with the largest loss (ties broken by file order).
    pub fn exclude_largest(mut self, n: usize) -> Result<Self> {
        if n >= self.rows.len() && n > 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot exclude {n} of {} rows",
                self.rows.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| self.rows[b].loss.total_cmp(&self.rows[a].loss).then(a.cmp(&b)));
        let mut drop = vec![false; self.rows.len()];
        for &i in &order[..n] {
            drop[i] = true;
        }
        let mut keep = drop.iter().map(|d| !d);
        self.rows.retain(|_| keep.next().expect("one flag per row"));
        self.excluded += n;
        self.duplicates = count_duplicates(&self.rows);
        Ok(self)
    }
}

fn count_duplicates(rows: &[ScalingRow]) -> usize {
    let mut keys: Vec<[u64; 4]> = rows
        .iter()
        .map(|r| [r.m.to_bits(), r.ell.to_bits(), r.d.to_bits(), r.loss.to_bits()])
        .collect();
    keys.sort_unstable();
    keys.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Deserialize)]
struct RawRow {
    m: String,
    ell: String,
    #[serde(rename = "D")]
    d: String,
    loss: String,
}

/// Reads a `m,ell,D,loss` table and removes the `n_exclude` largest losses.
///
/// Row numbers in errors count the header as line 1.
pub fn load_scaling_csv(path: &Path, n_exclude: usize) -> Result<ScalingDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let data_err = |row: usize, reason: String| Error::Data {
        path: PathBuf::from(path),
        row,
        reason,
    };
    let headers = reader
        .headers()
        .map_err(|e| data_err(1, e.to_string()))?
        .clone();
    for col in ["m", "ell", "D", "loss"] {
        if !headers.iter().any(|h| h == col) {
            return Err(data_err(1, format!("missing column {col:?}")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
        let line = i + 2;
        let raw = rec.map_err(|e| data_err(line, e.to_string()))?;
        let parse = |name: &str, s: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| data_err(line, format!("{name}: cannot parse {s:?}")))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(data_err(line, format!("{name} must be positive, got {v}")));
            }
            Ok(v)
        };
        rows.push(ScalingRow {
            m: parse("m", &raw.m)?,
            ell: parse("ell", &raw.ell)?,
            d: parse("D", &raw.d)?,
            loss: parse("loss", &raw.loss)?,
        });
    }
    if rows.is_empty() {
        return Err(data_err(2, "no data rows".into()));
    }
    ScalingDataset::new(rows, path.display().to_string())?.exclude_largest(n_exclude)
}

pub fn write_scaling_csv(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
