use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args};
use depthscale::diagnostics::{
    angle_stats_from_traces, dump_info as read_dump_info, load_dump, save_dump, summarize,
    trajectory_cluster, AngleStats, ClusterReport, TrajectorySummary, DEFAULT_MIDDLE_ANGLE,
    DUMP_MAGIC, DUMP_VERSION,
};
use depthscale::fit::{loglog_slope, LogLogSlope};
use depthscale::math::{gaussian_matrix, hash64, Rng};
use depthscale::net::{load_checkpoint, Network};
use depthscale::train::load_sweep;
use serde::Serialize;

use crate::tables::{cell, write_csv, write_json, write_svg, Plot, Series};

const INPUT_TAG: u64 = 0x6469_6167_6e6f_7365;

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["runs", "dump", "checkpoint"])))]
pub struct DiagnoseArgs {
    /// Sweep directory; every finished student and its teacher are analyzed.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Angle dump written by this tool or the extractor.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// A single network checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Gaussian inputs per network.
    #[arg(long, default_value_t = 1024)]
    tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MIDDLE_ANGLE)]
    middle_angle: f64,
    /// Fixed cut `PC1 > t` instead of the reference midpoint.
    #[arg(long)]
    pc1_threshold: Option<f64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Serialize)]
struct Analysis {
    name: String,
    depth: usize,
    teacher_index: Option<usize>,
    temperature: Option<f64>,
    student: bool,
    middle_mean: Option<f64>,
    middle_flatness: Option<f64>,
    mean_theta_dh: Option<f64>,
    small_cluster_fraction: Option<f64>,
    cluster_note: Option<String>,
    #[serde(skip)]
    summary: TrajectorySummary,
}

#[derive(Serialize)]
struct DiagnoseReport<'a> {
    tokens: usize,
    seed: u64,
    middle_angle: f64,
    pc1_threshold: Option<f64>,
    /// Log-log slope of student middle-layer mean angle against depth.
    middle_mean_slope: Option<LogLogSlope>,
    analyses: &'a [Analysis],
}

struct Ctx<'a> {
    args: &'a DiagnoseArgs,
    out: &'a Path,
}

impl Ctx<'_> {
    fn analyze(&self, name: &str, stats: &AngleStats, write_dump: bool) -> Result<Analysis> {
        if write_dump {
            save_dump(&self.out.join(format!("{name}.dpta")), stats)?;
        }
        let summary = summarize(stats)?;
        write_json(&self.out.join(format!("{name}.summary.json")), &summary)?;
        let (fraction, note) = if stats.depth() < 4 {
            (None, Some(format!("depth {} < 4, clustering skipped", stats.depth())))
        } else {
            match trajectory_cluster(stats, self.args.middle_angle, self.args.pc1_threshold) {
                Ok(report) => {
                    self.write_cluster(name, &report)?;
                    (Some(report.small_cluster_fraction), report.degenerate.then(|| "degenerate PCA".to_string()))
                }
                Err(e) => (None, Some(format!("clustering skipped: {e}"))),
            }
        };
        if let Some(n) = &note {
            log::warn!("{name}: {n}");
        }
        Ok(Analysis {
            name: name.to_string(),
            depth: stats.depth(),
            teacher_index: None,
            temperature: None,
            student: false,
            middle_mean: summary.middle_mean,
            middle_flatness: summary.middle_flatness,
            mean_theta_dh: summary.mean_theta_dh,
            small_cluster_fraction: fraction,
            cluster_note: note,
            summary,
        })
    }

    fn write_cluster(&self, name: &str, report: &ClusterReport) -> Result<()> {
        write_json(&self.out.join(format!("{name}.cluster.json")), report)?;
        let rows: Vec<Vec<String>> = (0..report.n_rows)
            .map(|i| {
                vec![
                    report.row_index[i].to_string(),
                    report.pca.projections[(i, 0)].to_string(),
                    report.pca.projections[(i, 1)].to_string(),
                    report.in_small_cluster(i).to_string(),
                ]
            })
            .collect();
        write_csv(&self.out.join(format!("{name}.pca.csv")), &["token", "pc1", "pc2", "small_cluster"], &rows)
    }

    fn network_stats(&self, net: &Network) -> Result<AngleStats> {
        let mut rng = Rng::new(hash64(&[self.args.seed, INPUT_TAG]));
        let xs = gaussian_matrix(&mut rng, self.args.tokens, net.width(), 1.0);
        Ok(angle_stats_from_traces(&net.forward_traces(&xs)?)?)
    }
}

pub fn diagnose(args: DiagnoseArgs) -> Result<()> {
    if args.tokens == 0 {
        return Err(crate::UsageError("--tokens must be positive".into()).into());
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ctx = Ctx { args: &args, out: &args.out };
    let mut analyses = Vec::new();

    if let Some(path) = &args.dump {
        let stats = load_dump(path)?;
        analyses.push(ctx.analyze(&stem(path), &stats, false)?);
    } else if let Some(path) = &args.checkpoint {
        let net = load_checkpoint(path)?;
        analyses.push(ctx.analyze(&stem(path), &ctx.network_stats(&net)?, true)?);
    } else if let Some(dir) = &args.runs {
        let (manifest, records) = load_sweep(dir)?;
        let mut teachers = BTreeSet::new();
        for r in &records {
            let Some(ckpt) = r.checkpoint.as_ref().filter(|_| r.completed() && !r.diverged) else {
                log::warn!("{}: no usable checkpoint, skipped", r.id);
                continue;
            };
            if r.depth < 2 {
                log::warn!("{}: depth {} has no angle statistics, skipped", r.id, r.depth);
                continue;
            }
            let net = load_checkpoint(&dir.join(ckpt))?;
            let mut a = ctx.analyze(&r.id, &ctx.network_stats(&net)?, true)?;
            a.student = true;
            a.teacher_index = r.teacher_index;
            a.temperature = r.temperature;
            analyses.push(a);
            if let Some(k) = r.teacher_index {
                teachers.insert(k);
            }
        }
        for &k in &teachers {
            let teacher = manifest.config.build_teacher(k)?;
            let mut a = ctx.analyze(&format!("teacher-k{k}"), &ctx.network_stats(&teacher)?, true)?;
            a.teacher_index = Some(k);
            analyses.push(a);
        }
    }

    write_tables(&ctx, &analyses)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn write_tables(ctx: &Ctx, analyses: &[Analysis]) -> Result<()> {
    let out = ctx.out;
    let mut layer_rows = Vec::new();
    let mut dh_rows = Vec::new();
    for a in analyses {
        for (j, v) in a.summary.mean_theta_per_layer.iter().enumerate() {
            layer_rows.push(vec![a.name.clone(), a.depth.to_string(), j.to_string(), cell(*v)]);
        }
        for (j, v) in a.summary.mean_theta_dh_per_layer.iter().enumerate() {
            dh_rows.push(vec![a.name.clone(), a.depth.to_string(), j.to_string(), cell(*v)]);
        }
    }
    write_csv(&out.join("theta_by_layer.csv"), &["name", "depth", "layer", "mean_theta"], &layer_rows)?;
    write_csv(&out.join("theta_dh_by_layer.csv"), &["name", "depth", "pair", "mean_theta_dh"], &dh_rows)?;

    let students: Vec<&Analysis> = analyses.iter().filter(|a| a.student).collect();
    let mm_rows: Vec<Vec<String>> = students
        .iter()
        .map(|a| {
            vec![
                a.name.clone(),
                a.teacher_index.map(|k| k.to_string()).unwrap_or_default(),
                cell(a.temperature),
                a.depth.to_string(),
                cell(a.middle_mean),
                cell(a.middle_flatness),
                cell(a.mean_theta_dh),
            ]
        })
        .collect();
    let points: Vec<(f64, f64)> = students
        .iter()
        .filter_map(|a| Some((a.depth as f64, a.middle_mean.filter(|m| *m > 0.0)?)))
        .collect();
    let slope = if !students.is_empty() {
        write_csv(
            &out.join("middle_mean_vs_depth.csv"),
            &["name", "teacher_index", "temperature", "depth", "middle_mean", "middle_flatness", "mean_theta_dh"],
            &mm_rows,
        )?;
        match loglog_slope(&points) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("middle-mean slope not available: {e}");
                None
            }
        }
    } else {
        None
    };
    if let Some(s) = &slope {
        println!("middle-mean log-log slope vs depth: {:.4} (n = {})", s.slope, s.n);
    }
    for a in analyses {
        println!(
            "{}: depth {} middle mean {} cluster fraction {}",
            a.name,
            a.depth,
            cell(a.middle_mean),
            cell(a.small_cluster_fraction)
        );
    }
    write_json(
        &out.join("diagnose.json"),
        &DiagnoseReport {
            tokens: ctx.args.tokens,
            seed: ctx.args.seed,
            middle_angle: ctx.args.middle_angle,
            pc1_threshold: ctx.args.pc1_threshold,
            middle_mean_slope: slope,
            analyses,
        },
    )?;

    if ctx.args.svg {
        let series = analyses
            .iter()
            .map(|a| Series {
                name: a.name.clone(),
                points: a
                    .summary
                    .mean_theta_per_layer
                    .iter()
                    .enumerate()
                    .filter_map(|(j, v)| Some(((j + 1) as f64 / a.depth as f64, (*v)?)))
                    .collect(),
                scatter: false,
            })
            .collect();
        write_svg(
            &out.join("theta_by_layer.svg"),
            &Plot {
                title: "Mean angle between neighboring hidden states",
                x_label: "layer / depth",
                y_label: "mean theta (rad)",
                log_x: false,
                log_y: false,
                series,
            },
        )?;
        if !points.is_empty() {
            write_svg(
                &out.join("middle_mean_vs_depth.svg"),
                &Plot {
                    title: "Middle-layer mean angle vs depth",
                    x_label: "depth",
                    y_label: "middle mean theta (rad)",
                    log_x: true,
                    log_y: true,
                    series: vec![Series { name: "students".into(), points, scatter: true }],
                },
            )?;
        }
    }
    Ok(())
}

pub fn dump_info(path: &Path) -> Result<()> {
    let arrays = read_dump_info(path)?;
    println!("magic {}", String::from_utf8_lossy(DUMP_MAGIC));
    println!("version {DUMP_VERSION}");
    for a in arrays {
        println!("{} {}x{} f32", a.name, a.rows, a.cols);
    }
    Ok(())
}
