use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fit::{replicate_mean_sem, ToyDepthFit};

use super::run::RunRecord;

/// Depth exponent of the held-out loss at one evaluation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub temperature_index: Option<usize>,
    pub temperature: Option<f64>,
    pub step: u64,
    pub n_depths: usize,
    /// Fit over all replicates pooled.
    pub alpha: Option<f64>,
    pub stderr: Option<f64>,
    /// Mean and standard error over per-replicate fits.
    pub replicate_mean: Option<f64>,
    pub replicate_sem: Option<f64>,
    pub n_replicates: usize,
    pub identifiable: bool,
}

type Key = (Option<usize>, u64);

type Replicates = BTreeMap<Option<usize>, Vec<(f64, f64)>>;

/// Fits the depth law to the eval losses at every logged step, per
/// temperature. Steps with fewer than three depths are skipped with a
/// warning; diverged or failed runs are left out.
pub fn alpha_vs_time<F>(records: &[RunRecord], fit_fn: F) -> Result<Vec<AlphaPoint>>
where
    F: Fn(&[(f64, f64)]) -> Result<ToyDepthFit>,
{
    // (temperature index, step) -> replicate -> points
    let mut grid: BTreeMap<Key, Replicates> = BTreeMap::new();
    let mut temps: BTreeMap<Option<usize>, Option<f64>> = BTreeMap::new();
    for r in records {
        if r.diverged || r.error.is_some() {
            log::warn!("{}: excluded from the exponent curve", r.id);
            continue;
        }
        temps.insert(r.temperature_index, r.temperature);
        for &(step, loss) in &r.eval_history {
            grid.entry((r.temperature_index, step))
                .or_default()
                .entry(r.teacher_index)
                .or_default()
                .push((r.depth as f64, loss));
        }
    }

    let mut out = Vec::new();
    for ((ti, step), reps) in grid {
        let pooled: Vec<(f64, f64)> = reps.values().flatten().copied().collect();
        let mut depths: Vec<f64> = pooled.iter().map(|p| p.0).collect();
        depths.sort_by(f64::total_cmp);
        depths.dedup();
        if depths.len() < 3 {
            log::warn!(
                "temperature {ti:?}, step {step}: {} depths, skipped",
                depths.len()
            );
            continue;
        }
        let fit = fit_fn(&pooled)?;
        let per_rep: Vec<f64> = reps
            .values()
            .filter_map(|pts| fit_fn(pts).ok())
            .filter(|f| f.identifiable)
            .map(|f| f.alpha)
            .collect();
        let stats = replicate_mean_sem(&per_rep);
        out.push(AlphaPoint {
            temperature_index: ti,
            temperature: temps[&ti],
            step,
            n_depths: depths.len(),
            alpha: fit.identifiable.then_some(fit.alpha),
            stderr: fit.alpha_stderr(),
            replicate_mean: stats.map(|s| s.0),
            replicate_sem: stats.filter(|_| per_rep.len() > 1).map(|s| s.1),
            n_replicates: reps.len(),
            identifiable: fit.identifiable,
        });
    }
    Ok(out)
}
