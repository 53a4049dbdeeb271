//! Oracles shared by the integration and acceptance suites. Nothing here
//! calls into the code paths it checks beyond the public forward/loss API.
#![allow(dead_code)]

use depthscale::fit::{FitResult, ScalingDataset, ScalingParams, ScalingRow};
use depthscale::math::{Matrix, Rng};
use depthscale::net::{evaluate_loss, loss_and_gradients, HiddenTrace, LossSpec, Network, NetworkConfig, Targets};

/// Largest relative error between analytic gradients and central finite
/// differences over every trainable parameter.
///
/// Relative error is `|g − fd| / max(|g|, |fd|, floor)`; the floor keeps
/// gradients that vanish analytically from dividing by zero.
pub fn max_fd_relative_error(
    student: &Network,
    teacher: &Network,
    batch: &Matrix,
    spec: &LossSpec,
    step: f64,
) -> (f64, usize) {
    const FLOOR: f64 = 1e-6;
    let targets = Targets::from_teacher(teacher, batch, spec).unwrap();
    let (_, grads) = loss_and_gradients(student, teacher, batch, spec).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let frozen_head = student.head_frozen();
    let n_tensors = analytic.len();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = student.clone();
    for t in 0..n_tensors {
        let is_head = t + 1 == n_tensors;
        for i in 0..analytic[t].len() {
            let orig = probe.param_slices()[t][i];
            probe.param_slices_mut()[t][i] = orig + step;
            let plus = evaluate_loss(&probe, batch, &targets).unwrap();
            probe.param_slices_mut()[t][i] = orig - step;
            let minus = evaluate_loss(&probe, batch, &targets).unwrap();
            probe.param_slices_mut()[t][i] = orig;
            let g = analytic[t][i];
            if is_head && frozen_head {
                assert_eq!(g, 0.0, "frozen head must not receive gradient");
                continue;
            }
            let fd = (plus - minus) / (2.0 * step);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn gaussian_batch(rng: &mut Rng, rows: usize, width: usize) -> Matrix {
    Matrix::from_vec(rows, width, rng.normal_vec(rows * width, 1.0)).unwrap()
}

/// Randomizes biases, which initialize to zero, so their gradients are
/// exercised away from the symmetric point.
pub fn jitter_biases(net: &mut Network, rng: &mut Rng, scale: f64) {
    for block in net.blocks_mut() {
        for mlp in &mut block.mlps {
            for b in &mut mlp.bias {
                *b = scale * rng.normal();
            }
        }
    }
}

pub const SYNTH_WIDTHS: [f64; 6] = [128.0, 256.0, 512.0, 1024.0, 2048.0, 4096.0];
pub const SYNTH_DEPTHS: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];
pub const SYNTH_TOKENS: [f64; 4] = [1e8, 1e9, 1e10, 1e11];

/// Known law used for the synthetic datasets: `α_m = α_ℓ = 1`, `α_D = 0.3`.
pub fn synthetic_truth() -> ScalingParams {
    ScalingParams {
        ln_c_m: 300f64.ln(),
        ln_c_ell: 3f64.ln(),
        ln_c_d: 300f64.ln(),
        alpha_m: 1.0,
        alpha_ell: 1.0,
        alpha_d: 0.3,
        l0: 1.7,
    }
}

/// Full grid over widths, depths and token counts, `copies` times, each
/// loss multiplied by `1 + noise·z` with standard normal `z`.
pub fn synthetic_dataset(seed: u64, noise: f64, copies: usize) -> ScalingDataset {
    let truth = synthetic_truth();
    let mut rng = Rng::new(seed);
    let mut rows = Vec::new();
    for _ in 0..copies {
        for &m in &SYNTH_WIDTHS {
            for &ell in &SYNTH_DEPTHS {
                for &d in &SYNTH_TOKENS {
                    let exact = truth.ln_c_m.exp() * m.powf(-truth.alpha_m)
                        + truth.ln_c_ell.exp() * ell.powf(-truth.alpha_ell)
                        + truth.ln_c_d.exp() * d.powf(-truth.alpha_d)
                        + truth.l0;
                    let loss = exact * (1.0 + noise * rng.normal());
                    rows.push(ScalingRow { m, ell, d, loss });
                }
            }
        }
    }
    ScalingDataset::new(rows, format!("synthetic seed {seed}")).unwrap()
}

/// Per-parameter `|fit − truth| / stderr`.
pub fn standardized_errors(fit: &FitResult, truth: &ScalingParams) -> [f64; 7] {
    let (p, s, t) = (fit.params.to_array(), fit.std_errors.to_array(), truth.to_array());
    std::array::from_fn(|k| (p[k] - t[k]).abs() / s[k])
}

/// Angle from the sine/cosine pair, `atan2(‖u⊥v‖, u·v)`; `None` for a zero
/// vector. Independent of the half-angle route used by the library.
pub fn naive_angle(u: &[f64], v: &[f64]) -> Option<f64> {
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    if uu == 0.0 || vv == 0.0 {
        return None;
    }
    let uv: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let perp: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| (a - uv / vv * b).powi(2))
        .sum::<f64>()
        .sqrt();
    Some(perp.atan2(uv / vv.sqrt()))
}

/// Per-trace `(theta, theta_dh, norms, angle_to_end)` rows computed directly
/// from the states, NaN for undefined angles.
pub fn naive_angle_rows(states: &[Vec<f64>]) -> [Vec<f64>; 4] {
    let l = states.len() - 1;
    let a = |u: &[f64], v: &[f64]| naive_angle(u, v).unwrap_or(f64::NAN);
    let diff = |i: usize| -> Vec<f64> { states[i].iter().zip(&states[i - 1]).map(|(x, y)| x - y).collect() };
    let theta = (0..l).map(|j| a(&states[j], &states[j + 1])).collect();
    let theta_dh = (1..l).map(|i| a(&diff(i), &diff(i + 1))).collect();
    let norms = states.iter().map(|h| h.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let to_end = (1..=l).map(|j| a(&states[j], &states[l])).collect();
    [theta, theta_dh, norms, to_end]
}

/// Eigenvalues (descending) and unit eigenvectors of the sample covariance,
/// through nalgebra's symmetric eigensolver.
pub fn covariance_eigen(rows: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = rows.shape();
    let x = nalgebra::DMatrix::from_row_slice(n, d, rows.as_slice());
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    let cov = c.transpose() * &c / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

/// `theta` rows drawn from the two reference shapes plus Gaussian noise,
/// clipped to `[0, π]`; returns the matrix and which rows are early-stop.
pub fn reference_mixture(
    seed: u64,
    n: usize,
    early_fraction: f64,
    noise: f64,
    depth: usize,
    middle: f64,
) -> (Matrix, Vec<bool>) {
    use depthscale::diagnostics::{early_stop_reference, evenly_reference};
    let early = early_stop_reference(depth, middle).unwrap();
    let evenly = evenly_reference(depth, middle).unwrap();
    let n_early = (early_fraction * n as f64).round() as usize;
    let mut rng = Rng::new(seed);
    let mut m = Matrix::zeros(n, depth);
    let mut labels = vec![false; n];
    // spread the early rows through the table
    for i in 0..n_early {
        labels[i * n / n_early.max(1)] = true;
    }
    for r in 0..n {
        let base = if labels[r] { &early } else { &evenly };
        for c in 0..depth {
            m[(r, c)] = (base[c] + noise * rng.normal()).clamp(0.0, std::f64::consts::PI);
        }
    }
    (m, labels)
}

/// Angle statistics whose only meaningful array is `theta`.
pub fn stats_from_theta(theta: Matrix) -> depthscale::diagnostics::AngleStats {
    let (n, l) = theta.shape();
    depthscale::diagnostics::AngleStats {
        theta,
        theta_dh: Matrix::zeros(n, l - 1),
        norms: Matrix::zeros(n, l + 1),
        angle_to_end: Matrix::zeros(n, l),
        cross_entropy: None,
    }
}

/// 100 traces of mixed origin: raw Gaussian, residual networks, and traces
/// with repeated or zero states.
pub fn random_traces(seed: u64) -> Vec<HiddenTrace> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for i in 0..100 {
        let depth = 2 + i % 11;
        let width = 1 + i % 9;
        let mut states: Vec<Vec<f64>> = match i % 3 {
            0 => (0..=depth).map(|_| rng.normal_vec(width, 1.0)).collect(),
            1 => {
                let net = Network::init(NetworkConfig::new(width.max(2), 3, depth), &mut rng).unwrap();
                net.forward(&rng.normal_vec(width.max(2), 1.0), true).unwrap().states
            }
            _ => {
                let mut s: Vec<Vec<f64>> = (0..=depth).map(|_| rng.normal_vec(width, 1.0)).collect();
                s[depth / 2] = vec![0.0; width];
                s[1] = s[0].clone();
                s
            }
        };
        if i % 17 == 0 {
            states[depth] = vec![0.0; states[0].len()];
        }
        out.push(HiddenTrace { states, logits: vec![] });
    }
    out
}
