use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

use super::angles::AngleStats;

/// Dataset averages of [`AngleStats`]. `None` marks a column with no valid
/// entry; such columns are also listed in `missing_columns`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub n_tokens: usize,
    pub depth: usize,
    /// Entry `j` averages `θ(h_j, h_{j+1})`.
    pub mean_theta_per_layer: Vec<Option<f64>>,
    /// Mean of the per-layer means, first and last layer excluded.
    pub middle_mean: Option<f64>,
    /// Largest over smallest middle-layer mean.
    pub middle_flatness: Option<f64>,
    pub mean_theta_dh_per_layer: Vec<Option<f64>>,
    /// Mean over every valid `theta_dh` entry.
    pub mean_theta_dh: Option<f64>,
    pub mean_norms: Vec<Option<f64>>,
    pub mean_angle_to_end: Vec<Option<f64>>,
    pub mean_cross_entropy: Option<Vec<Option<f64>>>,
    pub missing_columns: Vec<String>,
    pub missing_entries: usize,
}

fn column_means(name: &str, m: &Matrix, missing: &mut Vec<String>) -> Vec<Option<f64>> {
    (0..m.cols())
        .map(|c| {
            let (sum, count) = (0..m.rows())
                .map(|r| m[(r, c)])
                .filter(|v| !v.is_nan())
                .fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
            if count == 0 {
                missing.push(format!("{name}[{c}]"));
                None
            } else {
                Some(sum / count as f64)
            }
        })
        .collect()
}

fn mean_present(v: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

pub fn summarize(stats: &AngleStats) -> Result<TrajectorySummary> {
    stats.validate()?;
    if stats.n_tokens() == 0 {
        return Err(Error::InvalidArgument("no token rows to summarize".into()));
    }
    let l = stats.depth();
    let mut missing = Vec::new();
    let theta = column_means("theta", &stats.theta, &mut missing);
    let theta_dh = column_means("theta_dh", &stats.theta_dh, &mut missing);
    let norms = column_means("norms", &stats.norms, &mut missing);
    let to_end = column_means("angle_to_end", &stats.angle_to_end, &mut missing);
    let ce = stats
        .cross_entropy
        .as_ref()
        .map(|m| column_means("cross_entropy", m, &mut missing));
    let middle: &[Option<f64>] = if l >= 3 { &theta[1..l - 1] } else { &[] };
    let middle_mean = mean_present(middle);
    let (lo, hi) = middle
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let middle_flatness = (lo > 0.0 && hi.is_finite()).then(|| hi / lo);
    let dh = stats.theta_dh.as_slice().iter().filter(|v| !v.is_nan());
    let (dh_sum, dh_count) = dh.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    let missing_entries = stats
        .arrays()
        .iter()
        .map(|(_, m)| m.as_slice().iter().filter(|v| v.is_nan()).count())
        .sum();
    Ok(TrajectorySummary {
        n_tokens: stats.n_tokens(),
        depth: l,
        mean_theta_per_layer: theta,
        middle_mean,
        middle_flatness,
        mean_theta_dh_per_layer: theta_dh,
        mean_theta_dh: (dh_count > 0).then(|| dh_sum / dh_count as f64),
        mean_norms: norms,
        mean_angle_to_end: to_end,
        mean_cross_entropy: ce,
        missing_columns: missing,
        missing_entries,
    })
}
