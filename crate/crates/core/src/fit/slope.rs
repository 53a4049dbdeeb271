use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogSlope {
    pub slope: f64,
    pub intercept: f64,
    /// Ordinary least-squares standard error; absent with only two points.
    pub stderr: Option<f64>,
    pub n: usize,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<LogLogSlope> {
    if let Some(&(x, y)) = points
        .iter()
        .find(|&&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()))
    {
        return Err(Error::InvalidArgument(format!(
            "log-log slope needs positive values, got ({x}, {y})"
        )));
    }
    let n = points.len();
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n.max(1) as f64;
    let my = ly.iter().sum::<f64>() / n.max(1) as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if n < 2 || sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "log-log slope needs at least two distinct x values".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = (n > 2).then(|| {
        let sse: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (sse / (n - 2) as f64 / sxx).sqrt()
    });
    Ok(LogLogSlope {
        slope,
        intercept,
        stderr,
        n,
    })
}
