//! Dense linear algebra, sampling, normalization, divergences and PCA.

pub mod eigen;
pub mod matrix;
pub mod ops;
pub mod pca;
pub mod rng;

pub use eigen::{jacobi_eigen, symmetric_pinv, SymmetricEigen};
pub use matrix::{dot, gemm, norm, Matrix, Op};
pub use ops::{
    angle_between, entropy, kl_and_cross_entropy, relu_squared, rms_norm, softmax_temperature,
    RMS_EPS,
};
pub use pca::{pca, PcaResult};
pub use rng::{gaussian_matrix, hash64, Rng};
