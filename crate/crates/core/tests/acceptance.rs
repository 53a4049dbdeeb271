//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Correctness criteria (gradients, diagnostics oracles, synthetic fits)
//! abort the run on failure. Empirical criteria print FAIL and continue
//! unless `ACCEPTANCE_STRICT=1` is set.
//!
//! Training sweeps are cached under the cargo test tmpdir and resumed, so
//! only the first invocation pays for them. The ρ=1 tier (80k steps, two
//! block kinds) is trained only with `--slow` or `ACCEPTANCE_SLOW=1`;
//! otherwise it is evaluated from a complete cache or reported as not run.
//! `ACCEPTANCE_CHINCHILLA_CSV` points at the reconstructed `m,ell,D,loss`
//! table.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{
    gaussian_batch, jitter_biases, max_fd_relative_error, naive_angle_rows, random_traces,
    standardized_errors, synthetic_dataset, synthetic_truth,
};
use depthscale::diagnostics::{angle_stats_from_traces, summarize};
use depthscale::fit::{fit_decomposed, fit_toy_depth, load_scaling_csv, loglog_slope, FitOptions};
use depthscale::math::{gaussian_matrix, hash64, pca, Matrix, Rng};
use depthscale::net::{load_checkpoint, BlockKind, HeadSource, LossSpec, Network, NetworkConfig};
use depthscale::train::{run_sweep, RunRecord, SweepConfig, TrainConfig};

struct Report {
    strict: bool,
    hard_failures: Vec<String>,
    soft_failures: usize,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, hard: bool, detail: &str, started: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {detail} [{:.1}s]", started.elapsed().as_secs_f64());
        if !pass {
            if hard || self.strict {
                self.hard_failures.push(name.to_string());
            } else {
                self.soft_failures += 1;
            }
        }
    }
}

fn gradient_exactness(r: &mut Report) {
    let t0 = Instant::now();
    let mut rng = Rng::new(31);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut cases = 0;
    for depth in [1, 3] {
        for kind in [BlockKind::FirstOrder, BlockKind::SecondOrder] {
            for tied in [false, true] {
                for spec in [LossSpec::KlToTeacher { temperature: 0.5 }, LossSpec::MseLastHidden] {
                    let teacher = Network::init(NetworkConfig::new(8, 6, 4).with_tied(tied), &mut rng).unwrap();
                    let mut student = Network::init(
                        NetworkConfig::new(8, 6, depth).with_block_kind(kind).with_tied(tied),
                        &mut rng,
                    )
                    .unwrap();
                    jitter_biases(&mut student, &mut rng, 0.3);
                    let batch = gaussian_batch(&mut rng, 4, 8);
                    let (err, n) = max_fd_relative_error(&student, &teacher, &batch, &spec, 1e-5);
                    worst = worst.max(err);
                    checked += n;
                    cases += 1;
                }
            }
        }
    }
    let pass = worst < 1e-4 && t0.elapsed().as_secs() < 60;
    r.line(
        "gradient exactness",
        pass,
        true,
        &format!("{cases} configurations, {checked} parameters, max relative error {worst:.2e} (< 1e-4)"),
        t0,
    );
}

fn oracle_equivalence(r: &mut Report) {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut nan_mismatch = 0;
    for t in &random_traces(2718) {
        let stats = angle_stats_from_traces(std::slice::from_ref(t)).unwrap();
        let naive = naive_angle_rows(&t.states);
        let got = [&stats.theta, &stats.theta_dh, &stats.norms, &stats.angle_to_end];
        for (g, w) in got.iter().zip(&naive) {
            for (a, b) in g.row(0).iter().zip(w) {
                match (a.is_nan(), b.is_nan()) {
                    (true, true) => {}
                    (false, false) => worst = worst.max((a - b).abs()),
                    _ => nan_mismatch += 1,
                }
            }
        }
    }
    let mut rng = Rng::new(4);
    let mut pca_worst = 0.0f64;
    for (n, d) in [(100, 6), (300, 24)] {
        let mut m = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                m[(i, j)] = rng.normal() * (1.0 + 0.5 * j as f64);
            }
        }
        let p = pca(&m, 2).unwrap();
        let (values, vectors) = common::covariance_eigen(&m);
        for k in 0..2 {
            pca_worst = pca_worst.max((p.explained_variance[k] - values[k]).abs() / values[0]);
            let sign = p.components.row(k).iter().zip(&vectors[k]).map(|(a, b)| a * b).sum::<f64>().signum();
            for (a, b) in p.components.row(k).iter().zip(&vectors[k]) {
                pca_worst = pca_worst.max((a - sign * b).abs());
            }
        }
    }
    let pass = worst <= 1e-10 && nan_mismatch == 0 && pca_worst <= 1e-8;
    r.line(
        "oracle equivalence",
        pass,
        true,
        &format!(
            "100 traces max |diff| {worst:.1e} (≤ 1e-10), {nan_mismatch} missing-value mismatches; PCA max diff {pca_worst:.1e} (≤ 1e-8)"
        ),
        t0,
    );
}

fn synthetic_recovery(r: &mut Report) {
    let t0 = Instant::now();
    let truth = synthetic_truth();
    let mut worst_z = 0.0f64;
    let mut failed = Vec::new();
    for seed in 1..=20 {
        let fit = fit_decomposed(&synthetic_dataset(seed, 0.01, 1), 0, &FitOptions::default()).unwrap();
        // alpha_m, alpha_ell, alpha_D, L0
        let z = standardized_errors(&fit, &truth);
        let zmax = [z[3], z[4], z[5], z[6]].into_iter().fold(0.0, f64::max);
        worst_z = worst_z.max(zmax);
        if zmax >= 3.0 {
            failed.push(seed);
        }
    }
    let depths = [6.0f64, 12.0, 16.0, 24.0, 32.0, 48.0];
    let mut toy_worst = 0.0f64;
    for k in 1..=24 {
        let alpha = 0.25 * k as f64;
        let pts: Vec<(f64, f64)> = depths.iter().map(|&l| (l, 2.0 * l.powf(-alpha) + 0.1)).collect();
        let f = fit_toy_depth(&pts).unwrap();
        toy_worst = toy_worst.max((f.alpha - alpha).abs() / alpha);
    }
    let pass = failed.is_empty() && toy_worst < 1e-8 && t0.elapsed().as_secs() < 300;
    r.line(
        "synthetic fit recovery",
        pass,
        true,
        &format!(
            "20 datasets, max |fit - truth|/stderr {worst_z:.2} (< 3), failing seeds {failed:?}; toy fit max relative alpha error {toy_worst:.1e} over alpha 0.25..6"
        ),
        t0,
    );
}

fn within(v: f64, centre: f64, half: f64) -> bool {
    (v - centre).abs() <= half
}

fn chinchilla(r: &mut Report) {
    let t0 = Instant::now();
    let Some(path) = std::env::var_os("ACCEPTANCE_CHINCHILLA_CSV").map(PathBuf::from) else {
        r.line(
            "Chinchilla reproduction",
            false,
            false,
            "reconstructed table not available (set ACCEPTANCE_CHINCHILLA_CSV)",
            t0,
        );
        return;
    };
    let detail = (|| -> depthscale::Result<(bool, String)> {
        let data = load_scaling_csv(&path, 40)?;
        let fit = fit_decomposed(&data, 0, &FitOptions::default())?;
        let p = fit.params;
        let shifted = fit_decomposed(&data, 2, &FitOptions::default())?;
        let pass = within(p.alpha_m, 0.98, 0.24)
            && within(p.alpha_ell, 1.2, 0.9)
            && within(p.alpha_d, 0.30, 0.03)
            && fit.mean_relative_residual <= 0.01
            && within(shifted.params.alpha_ell, 1.1, 0.6);
        Ok((
            pass,
            format!(
                "{} rows: alpha_m {:.3} (0.98±0.24) alpha_ell {:.3} (1.2±0.9) alpha_D {:.3} (0.30±0.03) residual {:.2}% (≤ 1%); ell-2 alpha_ell {:.3} (1.1±0.6)",
                fit.n_rows,
                p.alpha_m,
                p.alpha_ell,
                p.alpha_d,
                100.0 * fit.mean_relative_residual,
                shifted.params.alpha_ell
            ),
        ))
    })();
    match detail {
        Ok((pass, d)) => r.line("Chinchilla reproduction", pass, false, &d, t0),
        Err(e) => r.line("Chinchilla reproduction", false, false, &format!("{e}"), t0),
    }
}

fn reduced_sweep(rho: u8, steps: u64, block: BlockKind, head: HeadSource) -> SweepConfig {
    SweepConfig {
        temperatures: vec![1.0],
        n_teachers: 2,
        student_depths: vec![4, 8, 16, 32],
        teacher: NetworkConfig::new(16, 64, 64),
        train: TrainConfig { steps, loss: LossSpec::MseLastHidden, seed: 1, ..Default::default() },
        student_block: block,
        student_head: head,
    }
    .with_rho(rho)
}

fn cache_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

/// Pooled depth fit over every finished replicate.
fn pooled_alpha(records: &[RunRecord]) -> depthscale::Result<(f64, Option<f64>, String)> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| !r.diverged)
        .filter_map(|r| Some((r.depth as f64, r.final_test_loss?)))
        .collect();
    let fit = fit_toy_depth(&pts)?;
    let losses: Vec<String> = records
        .iter()
        .map(|r| format!("{}={}", r.id, r.final_test_loss.map_or("-".into(), |l| format!("{l:.4}"))))
        .collect();
    Ok((fit.alpha, fit.alpha_stderr(), losses.join(" ")))
}

fn ensemble_regime(r: &mut Report) -> Option<(PathBuf, Vec<RunRecord>)> {
    let t0 = Instant::now();
    let dir = cache_dir("reduced-rho0");
    let sweep = reduced_sweep(0, 20_000, BlockKind::FirstOrder, HeadSource::Own);
    let outcome = match run_sweep(&sweep, Some(&dir), 1) {
        Ok(o) => o,
        Err(e) => {
            r.line("ensemble-averaging regime (rho=0)", false, false, &format!("sweep failed: {e}"), t0);
            return None;
        }
    };
    match pooled_alpha(&outcome.records) {
        Ok((alpha, se, losses)) => r.line(
            "ensemble-averaging regime (rho=0)",
            within(alpha, 1.0, 0.35),
            false,
            &format!(
                "alpha_ell {alpha:.3} ± {} (target 1.0±0.35); {} trained, {} cached; {losses}",
                se.map_or("n/a".into(), |s| format!("{s:.3}")),
                outcome.trained,
                outcome.resumed
            ),
            t0,
        ),
        Err(e) => r.line("ensemble-averaging regime (rho=0)", false, false, &format!("fit failed: {e}"), t0),
    }
    Some((dir, outcome.records))
}

fn slow_tier_complete(dir: &Path) -> bool {
    let runs = dir.join("runs");
    ["k0", "k1"].iter().all(|k| {
        [4, 8, 16, 32]
            .iter()
            .all(|l| runs.join(format!("t00-{k}-l{l:03}.json")).exists())
    })
}

fn procedural_regime(r: &mut Report, train: bool) {
    let t0 = Instant::now();
    let name = "procedural-assembly regime (rho=1, slow tier)";
    let first = cache_dir("slow-rho1-first");
    let second = cache_dir("slow-rho1-second");
    if !train && !(slow_tier_complete(&first) && slow_tier_complete(&second)) {
        r.line(name, false, false, "not run; pass --slow or set ACCEPTANCE_SLOW=1 (about 4 h on one core)", t0);
        return;
    }
    let mut alphas = Vec::new();
    let mut details = Vec::new();
    for (dir, block) in [(&first, BlockKind::FirstOrder), (&second, BlockKind::SecondOrder)] {
        let sweep = reduced_sweep(1, 80_000, block, HeadSource::CopiedFromTeacher);
        let res = run_sweep(&sweep, Some(dir), 1).and_then(|o| pooled_alpha(&o.records));
        match res {
            Ok((alpha, se, losses)) => {
                details.push(format!(
                    "{block:?} alpha_ell {alpha:.3} ± {} ({losses})",
                    se.map_or("n/a".into(), |s| format!("{s:.3}"))
                ));
                alphas.push(alpha);
            }
            Err(e) => {
                r.line(name, false, false, &format!("{block:?}: {e}"), t0);
                return;
            }
        }
    }
    let pass = alphas[0] >= 2.0 && alphas[1] > alphas[0];
    r.line(
        name,
        pass,
        false,
        &format!("{}; target first-order ≥ 2.0 and second-order > first-order", details.join("; ")),
        t0,
    );
}

fn hidden_state_signatures(r: &mut Report, sweep: Option<(PathBuf, Vec<RunRecord>)>) {
    let t0 = Instant::now();
    let names = [
        "hidden-state signature (a) middle flatness",
        "hidden-state signature (b) middle-mean slope",
        "hidden-state signature (c) update angle",
    ];
    let Some((dir, records)) = sweep else {
        for n in names {
            r.line(n, false, false, "rho=0 sweep unavailable", t0);
        }
        return;
    };
    let mut rows = Vec::new();
    for rec in records.iter().filter(|r| r.completed() && !r.diverged) {
        let Some(ckpt) = &rec.checkpoint else { continue };
        let net = match load_checkpoint(&dir.join(ckpt)) {
            Ok(n) => n,
            Err(e) => {
                for n in names {
                    r.line(n, false, false, &format!("{}: {e}", rec.id), t0);
                }
                return;
            }
        };
        let mut rng = Rng::new(hash64(&[0, 0x7369_676e]));
        let xs = gaussian_matrix(&mut rng, 1024, net.width(), 1.0);
        let stats = angle_stats_from_traces(&net.forward_traces(&xs).unwrap()).unwrap();
        let s = summarize(&stats).unwrap();
        rows.push((rec.id.clone(), rec.depth, s.middle_mean, s.middle_flatness, s.mean_theta_dh));
    }
    let flat: Vec<String> = rows
        .iter()
        .map(|(id, _, _, f, _)| format!("{id}={}", f.map_or("-".into(), |v| format!("{v:.2}"))))
        .collect();
    let flat_pass = !rows.is_empty() && rows.iter().all(|row| row.3.is_some_and(|f| f < 2.0));
    r.line(names[0], flat_pass, false, &format!("max/min < 2 for every student: {}", flat.join(" ")), t0);

    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|row| Some((row.1 as f64, row.2?))).collect();
    match loglog_slope(&pts) {
        Ok(s) => r.line(
            names[1],
            within(s.slope, -1.0, 0.2),
            false,
            &format!(
                "slope {:.3} ± {} over {} students (target -1±0.2)",
                s.slope,
                s.stderr.map_or("n/a".into(), |e| format!("{e:.3}")),
                s.n
            ),
            t0,
        ),
        Err(e) => r.line(names[1], false, false, &format!("{e}"), t0),
    }

    let half_pi = std::f64::consts::FRAC_PI_2;
    let dh: Vec<String> = rows
        .iter()
        .map(|(id, _, _, _, d)| format!("{id}={}", d.map_or("-".into(), |v| format!("{v:.3}"))))
        .collect();
    let dh_pass = !rows.is_empty() && rows.iter().all(|row| row.4.is_some_and(|d| within(d, half_pi, 0.3)));
    r.line(names[2], dh_pass, false, &format!("within 0.3 of pi/2 for every student: {}", dh.join(" ")), t0);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // cargo's harness flags (e.g. --list) are not meaningful here
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let env_flag = |k: &str| std::env::var(k).is_ok_and(|v| v == "1");
    let slow = args.iter().any(|a| a == "--slow" || a == "--ignored" || a == "--include-ignored")
        || env_flag("ACCEPTANCE_SLOW");
    let mut r = Report { strict: env_flag("ACCEPTANCE_STRICT"), hard_failures: vec![], soft_failures: 0 };

    gradient_exactness(&mut r);
    oracle_equivalence(&mut r);
    synthetic_recovery(&mut r);
    chinchilla(&mut r);
    let sweep = ensemble_regime(&mut r);
    procedural_regime(&mut r, slow);
    hidden_state_signatures(&mut r, sweep);

    println!(
        "acceptance: {} hard failures, {} empirical criteria not met",
        r.hard_failures.len(),
        r.soft_failures
    );
    if !r.hard_failures.is_empty() {
        eprintln!("failed: {}", r.hard_failures.join(", "));
        std::process::exit(1);
    }
}
