//! Power-law fits: the decomposed width/depth/data law, the toy depth law
//! and log-log slopes.

mod dataset;
mod decomposed;
mod slope;
mod stats;
mod toy;

pub use dataset::{load_scaling_csv, write_scaling_csv, ScalingDataset, ScalingRow};
pub use decomposed::{
    fit_decomposed, loss_parts, objective_at, predict, residual_jacobian, terms, FitOptions,
    FitResult, LossParts, Objective, ScalingParams, Terms, PARAM_NAMES,
};
pub use slope::{loglog_slope, LogLogSlope};
pub use toy::{fit_toy_depth, replicate_mean_sem, ToyDepthFit, TOY_ALPHA_STARTS};
