use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args};
use depthscale::fit::fit_toy_depth;
use depthscale::train::{alpha_vs_time, load_sweep, run_sweep, AlphaPoint, Preset, RunRecord, SweepConfig};
use serde::{Deserialize, Serialize};

use crate::tables::{cell, write_csv, write_json, write_svg, Plot, Series};
use crate::UsageError;

/// Schema version of sweep config files.
pub const CONFIG_VERSION: u32 = 1;

/// On-disk sweep config: `{"version": 1, ...SweepConfig fields}`.
#[derive(Serialize, Deserialize)]
pub struct SweepFile {
    pub version: u32,
    #[serde(flatten)]
    pub sweep: SweepConfig,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
pub struct TrainSweepArgs {
    /// exp9, exp9-1, exp9-3, exp9-4 or exp9-6.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// JSON sweep config (`version` plus sweep fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Base seed; overrides the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Teacher weight correlation, 0 (independent) or 1 (tied).
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    rho: Option<u8>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: depthscale::Error| e.to_string())
}

pub fn train_sweep(a: TrainSweepArgs) -> Result<()> {
    let mut sweep = match (&a.preset, &a.config) {
        (Some(p), _) => p.sweep(a.seed.unwrap_or(0)),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: SweepFile = serde_json::from_str(&text).map_err(|e| {
                depthscale::Error::Format { path: path.clone(), reason: e.to_string() }
            })?;
            if file.version != CONFIG_VERSION {
                return Err(depthscale::Error::Format {
                    path: path.clone(),
                    reason: format!("config version {} (expected {CONFIG_VERSION})", file.version),
                }
                .into());
            }
            file.sweep
        }
        (None, None) => return Err(UsageError("one of --preset or --config is required".into()).into()),
    };
    if let Some(seed) = a.seed {
        sweep.train.seed = seed;
    }
    if let Some(rho) = a.rho {
        sweep = sweep.with_rho(rho);
    }
    if a.workers == 0 {
        return Err(UsageError("--workers must be at least 1".into()).into());
    }
    let outcome = run_sweep(&sweep, Some(&a.out), a.workers)?;
    log::info!(
        "{} runs: {} trained, {} reused",
        outcome.records.len(),
        outcome.trained,
        outcome.resumed
    );
    write_run_tables(&a.out, &outcome.records)
}

fn write_run_tables(out: &Path, records: &[RunRecord]) -> Result<()> {
    let finals: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.id.clone(),
                r.temperature_index.map(|t| t.to_string()).unwrap_or_default(),
                cell(r.temperature),
                r.teacher_index.map(|t| t.to_string()).unwrap_or_default(),
                r.depth.to_string(),
                cell(r.final_test_loss),
                r.diverged.to_string(),
                r.steps_completed.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("final_losses.csv"),
        &["id", "temperature_index", "temperature", "teacher_index", "depth", "final_test_loss", "diverged", "steps"],
        &finals,
    )?;
    let mut hist = Vec::new();
    for r in records {
        for &(step, loss) in &r.eval_history {
            hist.push(vec![
                r.id.clone(),
                cell(r.temperature),
                r.teacher_index.map(|t| t.to_string()).unwrap_or_default(),
                r.depth.to_string(),
                step.to_string(),
                loss.to_string(),
            ]);
        }
    }
    write_csv(
        &out.join("eval_history.csv"),
        &["id", "temperature", "teacher_index", "depth", "step", "eval_loss"],
        &hist,
    )
}

#[derive(Args)]
pub struct FitToyArgs {
    /// Sweep directory written by train-sweep.
    #[arg(long)]
    runs: PathBuf,
    /// `final`, `sweep` (every logged step) or a step number.
    #[arg(long, default_value = "final")]
    at_step: String,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
pub struct AlphaCurveArgs {
    /// Sweep directory written by train-sweep.
    #[arg(long)]
    runs: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let (_, records) = load_sweep(dir)?;
    if records.is_empty() {
        return Err(depthscale::Error::Format { path: dir.to_path_buf(), reason: "no finished runs".into() }.into());
    }
    Ok(records)
}

fn alpha_rows(points: &[AlphaPoint]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            vec![
                p.temperature_index.map(|t| t.to_string()).unwrap_or_default(),
                cell(p.temperature),
                p.step.to_string(),
                p.n_depths.to_string(),
                cell(p.alpha),
                cell(p.stderr),
                cell(p.replicate_mean),
                cell(p.replicate_sem),
                p.n_replicates.to_string(),
                p.identifiable.to_string(),
            ]
        })
        .collect()
}

const ALPHA_HEADER: [&str; 10] = [
    "temperature_index",
    "temperature",
    "step",
    "n_depths",
    "alpha",
    "stderr",
    "replicate_mean",
    "replicate_sem",
    "n_replicates",
    "identifiable",
];

fn write_alpha_vs_time(out: &Path, points: &[AlphaPoint], svg: bool) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("alpha_vs_time.json"), &points)?;
    write_csv(&out.join("alpha_vs_time.csv"), &ALPHA_HEADER, &alpha_rows(points))?;
    if svg {
        let mut series: Vec<Series> = Vec::new();
        for p in points {
            let name = match p.temperature {
                Some(t) => format!("T={t:.3}"),
                None => "MSE".to_string(),
            };
            if series.last().is_none_or(|s| s.name != name) {
                series.push(Series { name: name.clone(), points: vec![], scatter: false });
            }
            if let Some(a) = p.alpha {
                series.last_mut().expect("series").points.push((p.step as f64, a));
            }
        }
        write_svg(
            &out.join("alpha_vs_time.svg"),
            &Plot {
                title: "Depth exponent during training",
                x_label: "step",
                y_label: "alpha_ell",
                log_x: false,
                log_y: false,
                series,
            },
        )?;
    }
    Ok(())
}

pub fn alpha_curve(a: AlphaCurveArgs) -> Result<()> {
    let records = load_records(&a.runs)?;
    let points = alpha_vs_time(&records, fit_toy_depth)?;
    write_alpha_vs_time(&a.out, &points, a.svg)
}

pub fn fit_toy(a: FitToyArgs) -> Result<()> {
    let records = load_records(&a.runs)?;
    if a.at_step == "sweep" {
        let points = alpha_vs_time(&records, fit_toy_depth)?;
        return write_alpha_vs_time(&a.out, &points, a.svg);
    }
    let points = if a.at_step == "final" {
        let finals: Vec<RunRecord> = records
            .into_iter()
            .filter_map(|mut r| {
                let loss = r.final_test_loss?;
                r.eval_history = vec![(r.steps_completed, loss)];
                Some(r)
            })
            .collect();
        alpha_vs_time(&finals, fit_toy_depth)?
    } else {
        let step: u64 = a
            .at_step
            .parse()
            .map_err(|_| UsageError(format!("--at-step {:?}: expected final, sweep or a step", a.at_step)))?;
        let points: Vec<AlphaPoint> = alpha_vs_time(&records, fit_toy_depth)?
            .into_iter()
            .filter(|p| p.step == step)
            .collect();
        if points.is_empty() {
            log::warn!("no temperature has a fit at step {step}");
        }
        points
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("alpha.json"), &points)?;
    write_csv(&a.out.join("alpha_vs_temperature.csv"), &ALPHA_HEADER, &alpha_rows(&points))?;
    for p in &points {
        match (p.alpha, p.stderr) {
            (Some(al), se) => println!(
                "T={} alpha={al:.4} stderr={}",
                cell(p.temperature),
                cell(se)
            ),
            (None, _) => println!("T={} alpha unidentifiable", cell(p.temperature)),
        }
    }
    if a.svg {
        let pts = points
            .iter()
            .filter_map(|p| Some((p.temperature?, p.alpha?)))
            .collect();
        write_svg(
            &a.out.join("alpha_vs_temperature.svg"),
            &Plot {
                title: "Depth exponent vs teacher temperature",
                x_label: "temperature",
                y_label: "alpha_ell",
                log_x: true,
                log_y: false,
                series: vec![Series { name: "alpha_ell".into(), points: pts, scatter: false }],
            },
        )?;
    }
    Ok(())
}
