use crate::error::{Error, Result};
use crate::math::{gemm, symmetric_pinv, Matrix, Op};

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Sample variance (divisor `n − 1`) of the residuals around their mean.
pub(crate) fn residual_variance(r: &[f64]) -> f64 {
    let n = r.len();
    if n < 2 {
        return 0.0;
    }
    let mean = r.iter().sum::<f64>() / n as f64;
    r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub(crate) struct Covariance {
    pub matrix: Matrix,
    pub condition_number: f64,
}

/// `σ²(JᵀJ)⁻¹`, with the normal matrix equilibrated by its diagonal before
/// the (pseudo-)inversion so that parameters on very different scales do not
/// swamp the rank decision.
pub(crate) fn jacobian_covariance(jac: &Matrix, sigma2: f64, rcond: f64) -> Result<Covariance> {
    let p = jac.cols();
    let mut jtj = Matrix::zeros(p, p);
    gemm(jac, Op::T, jac, Op::N, 0.0, &mut jtj);
    if !jtj.is_finite() {
        return Err(Error::NonFinite("Jacobian".into()));
    }
    let scale: Vec<f64> = (0..p)
        .map(|k| {
            let d = jtj[(k, k)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut scaled = jtj.clone();
    for r in 0..p {
        for c in 0..p {
            scaled[(r, c)] *= scale[r] * scale[c];
        }
    }
    // symmetrize against rounding in the product
    for r in 0..p {
        for c in 0..r {
            let v = 0.5 * (scaled[(r, c)] + scaled[(c, r)]);
            scaled[(r, c)] = v;
            scaled[(c, r)] = v;
        }
    }
    let (inv, cond) = symmetric_pinv(&scaled, rcond)?;
    let mut matrix = Matrix::zeros(p, p);
    for r in 0..p {
        for c in 0..p {
            matrix[(r, c)] = sigma2 * scale[r] * inv[(r, c)] * scale[c];
        }
    }
    Ok(Covariance {
        matrix,
        condition_number: cond,
    })
}
