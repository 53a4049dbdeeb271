//! Numerical laboratory for depth scaling in residual networks.
//!
//! * [`math`]: dense linear algebra, sampling, normalization, divergences, PCA.
//! * [`net`]: teacher/student residual networks with exact reverse-mode gradients.
//! * [`train`]: Adam, the training loop, and resumable experiment sweeps.
//! * [`diagnostics`]: hidden-state angle statistics and trajectory clustering.
//! * [`fit`]: decomposed power-law scaling fits and the depth-only toy fit.

pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod math;
pub mod net;
pub mod train;

pub use error::{Error, Result};
