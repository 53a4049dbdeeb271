use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{pca, Matrix, PcaResult};

use super::angles::AngleStats;

/// Middle-layer angle of the reference trajectories for a 24-layer model.
pub const DEFAULT_MIDDLE_ANGLE: f64 = 0.45;
/// Fixed cut on the first component used for OPT models.
pub const FIXED_PC1_THRESHOLD: f64 = 0.5;

/// Explained variance at or below this is treated as no spread at all.
const DEGENERATE_VARIANCE: f64 = 1e-24;

fn check_depth(depth: usize) -> Result<()> {
    if depth < 4 {
        return Err(Error::InvalidArgument(format!(
            "trajectory clustering needs depth at least 4, got {depth}"
        )));
    }
    Ok(())
}

/// `[π/2, a × q, 0 × (ℓ−2−q), π/2]` with `q = ⌈(ℓ−2)/4⌉`: the angle stays at
/// `a` over the first quarter of the middle layers and then stops moving.
pub fn early_stop_reference(depth: usize, middle_angle: f64) -> Result<Vec<f64>> {
    check_depth(depth)?;
    let middle = depth - 2;
    let q = middle.div_ceil(4);
    let mut v = vec![FRAC_PI_2];
    v.extend(std::iter::repeat_n(middle_angle, q));
    v.extend(std::iter::repeat_n(0.0, middle - q));
    v.push(FRAC_PI_2);
    Ok(v)
}

/// `[π/2, a × (ℓ−2), π/2]`.
pub fn evenly_reference(depth: usize, middle_angle: f64) -> Result<Vec<f64>> {
    check_depth(depth)?;
    let mut v = vec![FRAC_PI_2];
    v.extend(std::iter::repeat_n(middle_angle, depth - 2));
    v.push(FRAC_PI_2);
    Ok(v)
}

/// Two-component PCA of the `theta` rows and the share of rows that follow
/// the early-stopping trajectory.
///
/// Components are oriented so the evenly-spread reference has nonnegative
/// coordinates; projections in `pca.projections` use the same orientation.
#[derive(Clone, Debug, Serialize)]
pub struct ClusterReport {
    pub pca: PcaResult,
    pub middle_angle: f64,
    pub early_stop_reference: Vec<f64>,
    pub evenly_reference: Vec<f64>,
    pub early_stop_projection: [f64; 2],
    pub evenly_projection: [f64; 2],
    /// Cut on the first component.
    pub threshold: f64,
    /// Whether small-cluster rows lie above the cut.
    pub small_cluster_above: bool,
    pub threshold_rule: String,
    pub small_cluster_fraction: f64,
    pub n_small: usize,
    pub n_rows: usize,
    /// Rows left out because some angle was missing.
    pub n_skipped: usize,
    /// Index into the input rows of each row used in the PCA.
    #[serde(skip)]
    pub row_index: Vec<usize>,
    pub degenerate: bool,
}

impl ClusterReport {
    /// Whether the `i`-th used row (order of `row_index`) is in the small cluster.
    pub fn in_small_cluster(&self, i: usize) -> bool {
        let x = self.pca.projections[(i, 0)];
        if self.small_cluster_above {
            x > self.threshold
        } else {
            x < self.threshold
        }
    }
}

/// Clusters the `theta` rows of `stats`.
///
/// With `pc1_threshold = None` the cut is the midpoint between the two
/// reference projections on the first component and the small cluster is
/// the early-stop side. With `Some(t)` the small cluster is `PC1 > t`.
pub fn trajectory_cluster(
    stats: &AngleStats,
    middle_angle: f64,
    pc1_threshold: Option<f64>,
) -> Result<ClusterReport> {
    let depth = stats.depth();
    let early = early_stop_reference(depth, middle_angle)?;
    let evenly = evenly_reference(depth, middle_angle)?;
    if !middle_angle.is_finite() || pc1_threshold.is_some_and(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("non-finite clustering parameter".into()));
    }
    let row_index: Vec<usize> = (0..stats.n_tokens())
        .filter(|&r| stats.theta.row(r).iter().all(|v| !v.is_nan()))
        .collect();
    if row_index.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "{} complete rows; clustering needs at least 3",
            row_index.len()
        )));
    }
    let mut rows = Matrix::zeros(row_index.len(), depth);
    for (i, &r) in row_index.iter().enumerate() {
        rows.row_mut(i).copy_from_slice(stats.theta.row(r));
    }
    let mut result = pca(&rows, 2)?;
    let ev = result.project(&evenly);
    for (c, &coord) in ev.iter().enumerate() {
        if coord < 0.0 {
            result.flip(c);
        }
    }
    let ev = result.project(&evenly);
    let es = result.project(&early);
    let evenly_projection = [ev[0], ev[1]];
    let early_stop_projection = [es[0], es[1]];

    let (threshold, above, rule) = match pc1_threshold {
        None => {
            let t = 0.5 * (es[0] + ev[0]);
            (t, es[0] > t, format!("early-stop side of PC1 midpoint {t:.6}"))
        }
        Some(t) => (t, true, format!("PC1 > {t}")),
    };
    let degenerate = result.explained_variance[0] <= DEGENERATE_VARIANCE
        || result.explained_variance[1] <= DEGENERATE_VARIANCE
        || (es[0] - ev[0]).abs() <= f64::EPSILON * ev[0].abs().max(1.0);

    let mut report = ClusterReport {
        pca: result,
        middle_angle,
        early_stop_reference: early,
        evenly_reference: evenly,
        early_stop_projection,
        evenly_projection,
        threshold,
        small_cluster_above: above,
        threshold_rule: rule,
        small_cluster_fraction: 0.0,
        n_small: 0,
        n_rows: row_index.len(),
        n_skipped: stats.n_tokens() - row_index.len(),
        row_index,
        degenerate,
    };
    report.n_small = (0..report.n_rows).filter(|&i| report.in_small_cluster(i)).count();
    report.small_cluster_fraction = report.n_small as f64 / report.n_rows as f64;
    Ok(report)
}
