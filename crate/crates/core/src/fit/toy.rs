use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

use super::stats::{jacobian_covariance, residual_variance};

/// Initial exponents tried by [`fit_toy_depth`].
pub const TOY_ALPHA_STARTS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

const LM_LAMBDA0: f64 = 1e-3;
const LM_MAX_ITER: usize = 10_000;
const LM_REL_TOL: f64 = 1e-12;
const LM_MAX_LAMBDA: f64 = 1e20;
/// Depth contribution spread below this fraction of the mean loss is
/// treated as flat.
const FLAT_TOL: f64 = 1e-9;

/// `L(ℓ) = c/ℓ^α + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDepthFit {
    pub c: f64,
    pub alpha: f64,
    pub offset: f64,
    /// Standard errors of `(c, alpha, offset)`; absent when not identifiable.
    pub std_errors: Option<[f64; 3]>,
    pub sse: f64,
    pub n_points: usize,
    pub n_depths: usize,
    pub identifiable: bool,
    pub start_alpha: f64,
    pub iterations: usize,
}

impl ToyDepthFit {
    pub fn predict(&self, depth: f64) -> f64 {
        self.c * depth.powf(-self.alpha) + self.offset
    }

    pub fn alpha_stderr(&self) -> Option<f64> {
        self.std_errors.map(|s| s[1])
    }
}

fn sse(points: &[(f64, f64)], p: &[f64; 3]) -> f64 {
    points
        .iter()
        .map(|&(l, y)| {
            let r = y - (p[0] * l.powf(-p[1]) + p[2]);
            r * r
        })
        .sum()
}

/// Least-squares `(c, offset)` for a fixed exponent.
fn linear_given_alpha(points: &[(f64, f64)], alpha: f64) -> [f64; 3] {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(l, _)| l.powf(-alpha)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, &(_, y)) in xs.iter().zip(points) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    [c, alpha, my - c * mx]
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..4 {
                    m[r][k] -= f * m[col][k];
                }
            }
        }
    }
    let x = [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]];
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn model_jacobian_row(l: f64, p: &[f64; 3]) -> [f64; 3] {
    let x = l.powf(-p[1]);
    [x, -p[0] * x * l.ln(), 1.0]
}

/// Levenberg–Marquardt with Marquardt's diagonal scaling.
fn levenberg_marquardt(points: &[(f64, f64)], mut p: [f64; 3]) -> ([f64; 3], f64, usize) {
    let mut cur = sse(points, &p);
    let mut lambda = LM_LAMBDA0;
    let mut iters = 0;
    while iters < LM_MAX_ITER && cur > 0.0 {
        iters += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(l, y) in points {
            let j = model_jacobian_row(l, &p);
            let r = y - (p[0] * l.powf(-p[1]) + p[2]);
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut accepted = false;
        while lambda < LM_MAX_LAMBDA {
            let mut damped = jtj;
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-300);
            }
            if let Some(delta) = solve3(damped, jtr) {
                let trial = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
                let s = sse(points, &trial);
                if s.is_finite() && s <= cur {
                    let rel = (cur - s) / cur;
                    p = trial;
                    cur = s;
                    lambda = (lambda / 10.0).max(1e-300);
                    accepted = true;
                    if rel < LM_REL_TOL {
                        return (p, cur, iters);
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    (p, cur, iters)
}

/// Fits `L = c/ℓ^α + L_off` to `(depth, loss)` points, replicates allowed.
///
/// Each start fixes α from [`TOY_ALPHA_STARTS`], solves the linear
/// parameters exactly and refines all three by Levenberg–Marquardt; the
/// lowest SSE wins (earliest start on ties). Flat data is reported with
/// `identifiable = false`.
pub fn fit_toy_depth(points: &[(f64, f64)]) -> Result<ToyDepthFit> {
    if let Some(&(l, y)) = points
        .iter()
        .find(|&&(l, y)| !(l > 0.0 && l.is_finite() && y.is_finite()))
    {
        return Err(Error::InvalidArgument(format!("bad point (depth {l}, loss {y})")));
    }
    let mut depths: Vec<f64> = points.iter().map(|p| p.0).collect();
    depths.sort_by(f64::total_cmp);
    depths.dedup();
    if depths.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "{} distinct depths; at least 3 are needed",
            depths.len()
        )));
    }
    let n = points.len();
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if hi - lo <= FLAT_TOL * scale {
        return Ok(ToyDepthFit {
            c: 0.0,
            alpha: 0.0,
            offset: mean,
            std_errors: None,
            sse: points.iter().map(|p| (p.1 - mean).powi(2)).sum(),
            n_points: n,
            n_depths: depths.len(),
            identifiable: false,
            start_alpha: 0.0,
            iterations: 0,
        });
    }

    let mut best: Option<([f64; 3], f64, usize, f64)> = None;
    for &a0 in &TOY_ALPHA_STARTS {
        let p0 = linear_given_alpha(points, a0);
        let (mut p, mut s, iters) = levenberg_marquardt(points, p0);
        // re-solve the linear parameters at the final exponent
        let polished = linear_given_alpha(points, p[1]);
        let ps = sse(points, &polished);
        if ps < s {
            p = polished;
            s = ps;
        }
        if best.as_ref().is_none_or(|b| s < b.1) {
            best = Some((p, s, iters, a0));
        }
    }
    let (p, s, iters, a0) = best.expect("at least one start");

    let (dmin, dmax) = (depths[0], depths[depths.len() - 1]);
    let spread = (p[0] * (dmin.powf(-p[1]) - dmax.powf(-p[1]))).abs();
    let identifiable = spread > FLAT_TOL * scale && p.iter().all(|v| v.is_finite());

    let std_errors = if identifiable {
        let rows: Vec<Vec<f64>> = points
            .iter()
            .map(|&(l, _)| model_jacobian_row(l, &p).iter().map(|v| -v).collect())
            .collect();
        let jac = Matrix::from_rows(&rows)?;
        let resid: Vec<f64> = points
            .iter()
            .map(|&(l, y)| y - (p[0] * l.powf(-p[1]) + p[2]))
            .collect();
        let cov = jacobian_covariance(&jac, residual_variance(&resid), 1e-15)?;
        Some([0, 1, 2].map(|k| cov.matrix[(k, k)].max(0.0).sqrt()))
    } else {
        None
    };

    Ok(ToyDepthFit {
        c: p[0],
        alpha: p[1],
        offset: p[2],
        std_errors,
        sse: s,
        n_points: n,
        n_depths: depths.len(),
        identifiable,
        start_alpha: a0,
        iterations: iters,
    })
}

/// Mean and standard error of the mean of per-replicate exponents.
pub fn replicate_mean_sem(alphas: &[f64]) -> Option<(f64, f64)> {
    let k = alphas.len();
    if k == 0 {
        return None;
    }
    let mean = alphas.iter().sum::<f64>() / k as f64;
    let sem = if k > 1 {
        (residual_variance(alphas) / k as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, sem))
}
