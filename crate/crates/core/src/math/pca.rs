use crate::error::{Error, Result};

use super::eigen::jacobi_eigen;
use super::matrix::{dot, Matrix};

/// Top-`k` principal components of a set of row vectors.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PcaResult {
    /// `k × d`, one unit direction per row.
    pub components: Matrix,
    /// `n × k` coordinates of the centered input rows.
    #[serde(skip)]
    pub projections: Matrix,
    /// Covariance eigenvalues for the kept components, descending.
    pub explained_variance: Vec<f64>,
    /// Sum of all `d` covariance eigenvalues.
    pub total_variance: f64,
    pub mean: Vec<f64>,
}

impl PcaResult {
    /// Coordinates of an arbitrary `d`-vector in component space.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.mean.len(), "projection dimension mismatch");
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components
            .row_iter()
            .map(|c| dot(c, &centered))
            .collect()
    }

    /// Flips the sign of component `i` (and its projections).
    pub fn flip(&mut self, i: usize) {
        self.components.row_mut(i).iter_mut().for_each(|v| *v = -*v);
        for r in 0..self.projections.rows() {
            self.projections[(r, i)] = -self.projections[(r, i)];
        }
    }
}

/// PCA by Jacobi eigendecomposition of the sample covariance (divisor `n-1`).
pub fn pca(rows: &Matrix, k: usize) -> Result<PcaResult> {
    let (n, d) = rows.shape();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("pca of an empty dataset".into()));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {k} components of {d}-dimensional data"
        )));
    }
    if n < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "pca with {k} components needs at least {} rows, got {n}",
            k + 1
        )));
    }
    if !rows.is_finite() {
        return Err(Error::NonFinite("pca input".into()));
    }

    let mut mean = vec![0.0; d];
    for row in rows.row_iter() {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = rows.clone();
    for r in 0..n {
        centered
            .row_mut(r)
            .iter_mut()
            .zip(&mean)
            .for_each(|(x, m)| *x -= m);
    }
    let mut cov = Matrix::zeros(d, d);
    super::matrix::gemm(
        &centered,
        super::matrix::Op::T,
        &centered,
        super::matrix::Op::N,
        0.0,
        &mut cov,
    );
    cov.scale(1.0 / (n as f64 - 1.0));
    // symmetrize rounding noise from the blocked product
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }

    let eig = jacobi_eigen(&cov)?;
    let total_variance = eig.values.iter().sum();
    let mut components = Matrix::zeros(k, d);
    for c in 0..k {
        for j in 0..d {
            components[(c, j)] = eig.vectors[(j, c)];
        }
    }
    let explained_variance = eig.values[..k].iter().map(|v| v.max(0.0)).collect();
    let mut projections = Matrix::zeros(n, k);
    for r in 0..n {
        for c in 0..k {
            projections[(r, c)] = dot(centered.row(r), components.row(c));
        }
    }
    Ok(PcaResult {
        components,
        projections,
        explained_variance,
        total_variance,
        mean,
    })
}
