use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use depthscale::fit::{fit_decomposed, load_scaling_csv, loss_parts, FitOptions, Objective, PARAM_NAMES};
use serde::Serialize;

use crate::tables::{write_csv, write_json, write_svg, Plot, Series};
use crate::UsageError;

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    LogLog,
    LogMinusLinear,
}

#[derive(Args)]
pub struct FitScalingArgs {
    /// Table with columns m, ell, D, loss.
    #[arg(long)]
    csv: PathBuf,
    /// Drop this many rows with the largest loss before fitting.
    #[arg(long, default_value_t = 0)]
    exclude: usize,
    /// Blocks subtracted from ell (e.g. embedding layers counted in depth).
    #[arg(long, default_value_t = 0)]
    depth_offset: usize,
    #[arg(long, value_enum, default_value = "log-log")]
    objective: ObjectiveArg,
    /// Adam steps per start.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Serialize)]
struct ParamRow {
    name: &'static str,
    value: f64,
    stderr: f64,
}

pub fn fit_scaling(a: FitScalingArgs) -> Result<()> {
    let mut opts = FitOptions {
        seed: a.seed,
        objective: match a.objective {
            ObjectiveArg::LogLog => Objective::LogLog,
            ObjectiveArg::LogMinusLinear => Objective::LogMinusLinear,
        },
        ..FitOptions::default()
    };
    if let Some(s) = a.steps {
        opts.steps = s;
    }
    if let Some(n) = a.starts {
        if n == 0 {
            return Err(UsageError("--starts must be at least 1".into()).into());
        }
        opts.n_starts = n;
    }
    let data = load_scaling_csv(&a.csv, a.exclude)?;
    let fit = fit_decomposed(&data, a.depth_offset, &opts)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("fit.json"), &fit)?;

    let values = fit.params.to_array();
    let errs = fit.std_errors.to_array();
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        println!("{name:>9} = {:.6} ± {:.6}", values[k], errs[k]);
    }
    println!(
        "rows {} objective {:.6e} mean relative residual {:.4e}",
        fit.n_rows, fit.objective, fit.mean_relative_residual
    );
    let params: Vec<ParamRow> = PARAM_NAMES
        .iter()
        .enumerate()
        .map(|(k, &name)| ParamRow { name, value: values[k], stderr: errs[k] })
        .collect();
    write_json(&a.out.join("params.json"), &params)?;

    let parts = loss_parts(&data, &fit.params, a.depth_offset)?;
    let rows: Vec<Vec<String>> = parts
        .iter()
        .zip(&fit.residuals)
        .map(|(p, r)| {
            [
                p.row.m, p.row.ell, p.row.d, p.row.loss, p.width_term, p.depth_term, p.data_term, p.width_part,
                p.depth_part, p.data_part, *r,
            ]
            .iter()
            .map(f64::to_string)
            .collect()
        })
        .collect();
    write_csv(
        &a.out.join("loss_parts.csv"),
        &[
            "m", "ell", "D", "loss", "width_term", "depth_term", "data_term", "width_part", "depth_part",
            "data_part", "residual",
        ],
        &rows,
    )?;

    let mut depths: Vec<f64> = data.rows.iter().map(|r| r.ell).collect();
    depths.sort_by(f64::total_cmp);
    depths.dedup();
    let c = fit.params.ln_c_ell.exp();
    let curve: Vec<(f64, f64)> = depths
        .iter()
        .map(|&l| (l, c * (l - a.depth_offset as f64).powf(-fit.params.alpha_ell)))
        .collect();
    write_csv(
        &a.out.join("depth_curve.csv"),
        &["ell", "depth_term"],
        &curve.iter().map(|(l, v)| vec![l.to_string(), v.to_string()]).collect::<Vec<_>>(),
    )?;
    if a.svg {
        write_svg(
            &a.out.join("depth_part.svg"),
            &Plot {
                title: "Depth part of the loss",
                x_label: "depth",
                y_label: "L - L0 - width term - data term",
                log_x: true,
                log_y: true,
                series: vec![
                    Series {
                        name: "observed".into(),
                        points: parts.iter().map(|p| (p.row.ell, p.depth_part)).collect(),
                        scatter: true,
                    },
                    Series {
                        name: format!("alpha_ell={:.3}", fit.params.alpha_ell),
                        points: curve,
                        scatter: false,
                    },
                ],
            },
        )?;
    }
    Ok(())
}
