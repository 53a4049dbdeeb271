use crate::error::{Error, Result};
use crate::math::ops::angle_checked;
use crate::math::{norm, Matrix};
use crate::net::HiddenTrace;

/// Tolerance above `π` accepted on load; `π` rounded to `f32` lands slightly
/// above the `f64` value.
pub const ANGLE_SLACK: f64 = 1e-6;

/// Per-token angle statistics for a depth-`ℓ` trajectory `h_0..h_ℓ`.
///
/// | field | shape | entry `[t][j]` |
/// |---|---|---|
/// | `theta` | `N × ℓ` | `θ(h_j, h_{j+1})` |
/// | `theta_dh` | `N × (ℓ−1)` | `θ(Δh_{j+1}, Δh_{j+2})`, `Δh_l = h_l − h_{l−1}` |
/// | `norms` | `N × (ℓ+1)` | `‖h_j‖` |
/// | `angle_to_end` | `N × ℓ` | `θ(h_{j+1}, h_ℓ)` |
/// | `cross_entropy` | `N × ℓ` | per-layer cross-entropy, when available |
#[derive(Clone, Debug, PartialEq)]
pub struct AngleStats {
    pub theta: Matrix,
    pub theta_dh: Matrix,
    pub norms: Matrix,
    pub angle_to_end: Matrix,
    pub cross_entropy: Option<Matrix>,
}

fn shape_str(m: &Matrix) -> String {
    format!("{}×{}", m.rows(), m.cols())
}

impl AngleStats {
    pub fn depth(&self) -> usize {
        self.theta.cols()
    }

    pub fn n_tokens(&self) -> usize {
        self.theta.rows()
    }

    /// Named arrays in storage order.
    pub fn arrays(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = vec![
            ("theta", &self.theta),
            ("theta_dh", &self.theta_dh),
            ("norms", &self.norms),
            ("angle_to_end", &self.angle_to_end),
        ];
        if let Some(ce) = &self.cross_entropy {
            v.push(("cross_entropy", ce));
        }
        v
    }

    /// Checks that all shapes describe one depth and one token count, angles
    /// lie in `[0, π]` and norms are nonnegative (NaN allowed everywhere).
    pub fn validate(&self) -> Result<()> {
        let l = self.depth();
        let n = self.n_tokens();
        if l == 0 {
            return Err(Error::Shape("theta has no layer columns".into()));
        }
        let expected = [
            ("theta_dh", l - 1),
            ("norms", l + 1),
            ("angle_to_end", l),
            ("cross_entropy", l),
        ];
        for (name, m) in self.arrays().into_iter().skip(1) {
            let cols = expected.iter().find(|e| e.0 == name).expect("known array").1;
            if m.rows() != n || m.cols() != cols {
                return Err(Error::Shape(format!(
                    "theta is {} but {name} is {} (expected {n}×{cols})",
                    shape_str(&self.theta),
                    shape_str(m)
                )));
            }
        }
        let pi = std::f64::consts::PI + ANGLE_SLACK;
        for (name, m) in [
            ("theta", &self.theta),
            ("theta_dh", &self.theta_dh),
            ("angle_to_end", &self.angle_to_end),
        ] {
            if let Some(v) = m.as_slice().iter().find(|v| !v.is_nan() && !(0.0..=pi).contains(*v)) {
                return Err(Error::InvalidArgument(format!("{name} holds {v}, outside [0, π]")));
            }
        }
        if let Some(v) = self.norms.as_slice().iter().find(|v| !v.is_nan() && !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("norms holds {v}")));
        }
        Ok(())
    }

    /// New statistics built from the given rows (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> AngleStats {
        let pick = |m: &Matrix| {
            let mut out = Matrix::zeros(rows.len(), m.cols());
            for (i, &r) in rows.iter().enumerate() {
                out.row_mut(i).copy_from_slice(m.row(r));
            }
            out
        };
        AngleStats {
            theta: pick(&self.theta),
            theta_dh: pick(&self.theta_dh),
            norms: pick(&self.norms),
            angle_to_end: pick(&self.angle_to_end),
            cross_entropy: self.cross_entropy.as_ref().map(pick),
        }
    }
}

fn angle_or_nan(u: &[f64], v: &[f64]) -> f64 {
    angle_checked(u, v).unwrap_or(f64::NAN)
}

/// Computes [`AngleStats`] for a set of traces sharing one depth `ℓ ≥ 2`.
pub fn angle_stats_from_traces(traces: &[HiddenTrace]) -> Result<AngleStats> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("no traces".into()))?;
    let l = first.depth();
    let width = first.states.first().map_or(0, Vec::len);
    if l < 2 {
        return Err(Error::InvalidArgument(format!("depth {l}; at least 2 is needed")));
    }
    let n = traces.len();
    let mut stats = AngleStats {
        theta: Matrix::zeros(n, l),
        theta_dh: Matrix::zeros(n, l - 1),
        norms: Matrix::zeros(n, l + 1),
        angle_to_end: Matrix::zeros(n, l),
        cross_entropy: None,
    };
    for (t, trace) in traces.iter().enumerate() {
        if trace.depth() != l || trace.states.iter().any(|h| h.len() != width) {
            return Err(Error::Shape(format!(
                "trace {t} does not match depth {l} and width {width}"
            )));
        }
        let h = &trace.states;
        let dh: Vec<Vec<f64>> = h
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
            .collect();
        for j in 0..=l {
            stats.norms[(t, j)] = norm(&h[j]);
        }
        for j in 0..l {
            stats.theta[(t, j)] = angle_or_nan(&h[j], &h[j + 1]);
            stats.angle_to_end[(t, j)] = angle_or_nan(&h[j + 1], &h[l]);
        }
        for j in 0..l - 1 {
            stats.theta_dh[(t, j)] = angle_or_nan(&dh[j], &dh[j + 1]);
        }
    }
    Ok(stats)
}
