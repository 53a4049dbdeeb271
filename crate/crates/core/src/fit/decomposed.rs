use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, Rng};

use super::dataset::{ScalingDataset, ScalingRow};
use super::stats::{jacobian_covariance, median, residual_variance};

/// `L = c_m/m^α_m + c_ℓ/(ℓ−offset)^α_ℓ + c_D/D^α_D + L0`, coefficients
/// stored as logarithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub ln_c_m: f64,
    pub ln_c_ell: f64,
    #[serde(rename = "ln_c_D")]
    pub ln_c_d: f64,
    pub alpha_m: f64,
    pub alpha_ell: f64,
    #[serde(rename = "alpha_D")]
    pub alpha_d: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
}

pub const PARAM_NAMES: [&str; 7] = [
    "ln_c_m", "ln_c_ell", "ln_c_D", "alpha_m", "alpha_ell", "alpha_D", "L0",
];

impl ScalingParams {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.ln_c_m,
            self.ln_c_ell,
            self.ln_c_d,
            self.alpha_m,
            self.alpha_ell,
            self.alpha_d,
            self.l0,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        ScalingParams {
            ln_c_m: a[0],
            ln_c_ell: a[1],
            ln_c_d: a[2],
            alpha_m: a[3],
            alpha_ell: a[4],
            alpha_d: a[5],
            l0: a[6],
        }
    }
}

/// The three power-law contributions for one row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Terms {
    pub width: f64,
    pub depth: f64,
    pub data: f64,
}

fn effective_depth(ell: f64, depth_offset: usize) -> Result<f64> {
    let e = ell - depth_offset as f64;
    if e > 0.0 {
        Ok(e)
    } else {
        Err(Error::InvalidArgument(format!(
            "depth {ell} minus offset {depth_offset} is not positive"
        )))
    }
}

pub fn terms(p: &ScalingParams, row: &ScalingRow, depth_offset: usize) -> Result<Terms> {
    let ell = effective_depth(row.ell, depth_offset)?;
    Ok(Terms {
        width: (p.ln_c_m - p.alpha_m * row.m.ln()).exp(),
        depth: (p.ln_c_ell - p.alpha_ell * ell.ln()).exp(),
        data: (p.ln_c_d - p.alpha_d * row.d.ln()).exp(),
    })
}

pub fn predict(p: &ScalingParams, row: &ScalingRow, depth_offset: usize) -> Result<f64> {
    let t = terms(p, row, depth_offset)?;
    Ok(t.width + t.depth + t.data + p.l0)
}

/// Which quantity is squared in the training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `100·mean((ln L_obs − ln L_pred)²)`
    #[default]
    LogLog,
    /// `100·mean((ln L_obs − L_pred)²)`, the formula exactly as printed.
    LogMinusLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub steps: usize,
    pub lr_coeff: f64,
    pub lr_exp: f64,
    #[serde(rename = "lr_L0")]
    pub lr_l0: f64,
    pub objective: Objective,
    pub n_starts: usize,
    /// Relative jitter applied to the initial exponents of starts after the first.
    pub init_jitter: f64,
    pub seed: u64,
    /// Record the objective every this many steps (0 disables the history).
    pub history_every: usize,
    pub rcond: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            steps: 50_000,
            lr_coeff: 0.005,
            lr_exp: 0.0005,
            lr_l0: 0.005,
            objective: Objective::LogLog,
            n_starts: 5,
            init_jitter: 0.5,
            seed: 0,
            history_every: 10,
            rcond: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ScalingParams,
    /// Standard errors, one per parameter, in the same layout as `params`.
    pub std_errors: ScalingParams,
    pub covariance: Vec<Vec<f64>>,
    pub objective: f64,
    pub mean_relative_residual: f64,
    /// `L_obs − L_pred` per row.
    pub residuals: Vec<f64>,
    pub residual_variance: f64,
    pub condition_number: f64,
    pub depth_offset: usize,
    pub n_rows: usize,
    /// Final objective of each start, in start order.
    pub start_objectives: Vec<f64>,
    pub best_start: usize,
    pub objective_history: Option<Vec<(usize, f64)>>,
    pub warnings: Vec<String>,
    pub options: FitOptions,
}

struct Design {
    ln_m: Vec<f64>,
    ln_ell: Vec<f64>,
    ln_d: Vec<f64>,
    loss: Vec<f64>,
    ln_loss: Vec<f64>,
}

impl Design {
    fn new(data: &ScalingDataset, depth_offset: usize) -> Result<Self> {
        let mut d = Design {
            ln_m: Vec::new(),
            ln_ell: Vec::new(),
            ln_d: Vec::new(),
            loss: Vec::new(),
            ln_loss: Vec::new(),
        };
        for r in &data.rows {
            d.ln_m.push(r.m.ln());
            d.ln_ell.push(effective_depth(r.ell, depth_offset)?.ln());
            d.ln_d.push(r.d.ln());
            d.loss.push(r.loss);
            d.ln_loss.push(r.loss.ln());
        }
        Ok(d)
    }

    fn n(&self) -> usize {
        self.loss.len()
    }

    /// Per-row terms `(t_m, t_ℓ, t_D)` and prediction.
    fn eval(&self, p: &[f64; 7], i: usize) -> ([f64; 3], f64) {
        let t = [
            (p[0] - p[3] * self.ln_m[i]).exp(),
            (p[1] - p[4] * self.ln_ell[i]).exp(),
            (p[2] - p[5] * self.ln_d[i]).exp(),
        ];
        (t, t[0] + t[1] + t[2] + p[6])
    }

    /// d prediction / d params.
    fn dpred(&self, p: &[f64; 7], i: usize) -> [f64; 7] {
        let (t, _) = self.eval(p, i);
        [
            t[0],
            t[1],
            t[2],
            -t[0] * self.ln_m[i],
            -t[1] * self.ln_ell[i],
            -t[2] * self.ln_d[i],
            1.0,
        ]
    }

    fn objective_and_grad(&self, p: &[f64; 7], objective: Objective) -> (f64, [f64; 7]) {
        let n = self.n() as f64;
        let mut total = 0.0;
        let mut grad = [0.0; 7];
        for i in 0..self.n() {
            let (_, pred) = self.eval(p, i);
            // d(diff)/d(pred)
            let (diff, ddiff) = match objective {
                Objective::LogLog => {
                    let safe = pred.max(1e-300);
                    (self.ln_loss[i] - safe.ln(), if pred > 0.0 { -1.0 / pred } else { 0.0 })
                }
                Objective::LogMinusLinear => (self.ln_loss[i] - pred, -1.0),
            };
            total += diff * diff;
            let scale = 200.0 * diff * ddiff / n;
            for (g, d) in grad.iter_mut().zip(self.dpred(p, i)) {
                *g += scale * d;
            }
        }
        (100.0 * total / n, grad)
    }
}

fn check_variation(data: &ScalingDataset) -> Result<()> {
    if data.len() < 8 {
        return Err(Error::NotIdentifiable(format!(
            "{} rows; the decomposed fit needs at least 8",
            data.len()
        )));
    }
    for (name, col) in [
        ("m", data.rows.iter().map(|r| r.m).collect::<Vec<_>>()),
        ("ell", data.rows.iter().map(|r| r.ell).collect()),
        ("D", data.rows.iter().map(|r| r.d).collect()),
    ] {
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::NotIdentifiable(format!("column {name} takes a single value")));
        }
    }
    Ok(())
}

/// Starting point: exponents `(1, 1, 0.3)` (jittered for later starts), L0 at
/// 0.9 × the smallest loss, and coefficients so that each term supplies a
/// third of the excess loss at the median row.
fn initial_point(d: &Design, start: usize, opts: &FitOptions, rng: &mut Rng) -> [f64; 7] {
    let base = [1.0, 1.0, 0.3];
    let alphas: Vec<f64> = base
        .iter()
        .map(|&a| {
            if start == 0 {
                a
            } else {
                a * (1.0 + opts.init_jitter * (2.0 * rng.uniform() - 1.0))
            }
        })
        .collect();
    let min_loss = d.loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let l0 = 0.9 * min_loss;
    let excess = (median(&d.loss) - l0).max(1e-3 * min_loss) / 3.0;
    let cols = [&d.ln_m, &d.ln_ell, &d.ln_d];
    let mut p = [0.0; 7];
    for k in 0..3 {
        p[k] = excess.ln() + alphas[k] * median(cols[k]);
        p[3 + k] = alphas[k];
    }
    p[6] = l0;
    p
}

struct StartResult {
    params: [f64; 7],
    objective: f64,
    history: Vec<(usize, f64)>,
}

fn run_adam(d: &Design, mut p: [f64; 7], opts: &FitOptions) -> StartResult {
    let lrs = [
        opts.lr_coeff,
        opts.lr_coeff,
        opts.lr_coeff,
        opts.lr_exp,
        opts.lr_exp,
        opts.lr_exp,
        opts.lr_l0,
    ];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v) = ([0.0f64; 7], [0.0f64; 7]);
    let mut history = Vec::new();
    // constant-step Adam keeps spiking after it has converged, so the
    // lowest-objective iterate is kept rather than the last one
    let mut best = (p, f64::INFINITY);
    for step in 0..opts.steps {
        let (obj, g) = d.objective_and_grad(&p, opts.objective);
        if obj < best.1 {
            best = (p, obj);
        }
        if opts.history_every > 0 && step % opts.history_every == 0 {
            history.push((step, obj));
        }
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for k in 0..7 {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            p[k] -= lrs[k] * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
    }
    let (last, _) = d.objective_and_grad(&p, opts.objective);
    if opts.history_every > 0 {
        history.push((opts.steps, last));
    }
    if last < best.1 {
        best = (p, last);
    }
    let (p, objective) = best;
    StartResult {
        params: p,
        objective,
        history,
    }
}

/// Fits the decomposed width/depth/data power law.
///
/// Optimization runs Adam on the log-space objective from several starts and
/// keeps the lowest final objective (earliest start on ties). Uncertainties
/// come from the linear residuals `L_obs − L_pred`: `Σ = σ²(JᵀJ)⁻¹` with the
/// analytic Jacobian and σ² the sample variance of the residuals.
pub fn fit_decomposed(
    data: &ScalingDataset,
    depth_offset: usize,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_variation(data)?;
    if opts.n_starts == 0 {
        return Err(Error::InvalidArgument("n_starts must be at least 1".into()));
    }
    let d = Design::new(data, depth_offset)?;
    let mut rng = Rng::new(opts.seed);
    let starts: Vec<StartResult> = (0..opts.n_starts)
        .map(|s| {
            let p0 = initial_point(&d, s, opts, &mut rng);
            run_adam(&d, p0, opts)
        })
        .collect();
    let start_objectives: Vec<f64> = starts.iter().map(|s| s.objective).collect();
    let best_start = start_objectives
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (i, &o)| match best {
            Some((_, bo)) if bo <= o => best,
            _ => Some((i, o)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NonFinite("every fit start ended with a non-finite objective".into()))?;
    let best = &starts[best_start];
    let p = best.params;

    let n = d.n();
    let mut residuals = Vec::with_capacity(n);
    let mut jac = Matrix::zeros(n, 7);
    for i in 0..n {
        let (_, pred) = d.eval(&p, i);
        residuals.push(d.loss[i] - pred);
        for (k, v) in d.dpred(&p, i).iter().enumerate() {
            jac[(i, k)] = -v;
        }
    }
    let sigma2 = residual_variance(&residuals);
    let cov = jacobian_covariance(&jac, sigma2, opts.rcond)?;
    let mut warnings = Vec::new();
    if cov.condition_number > 1e10 {
        let msg = format!(
            "JᵀJ is ill-conditioned (condition number {:.3e}); standard errors use a pseudo-inverse",
            cov.condition_number
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let std: Vec<f64> = (0..7).map(|k| cov.matrix[(k, k)].max(0.0).sqrt()).collect();
    let mean_relative_residual =
        residuals.iter().zip(&d.loss).map(|(r, l)| (r / l).abs()).sum::<f64>() / n as f64;

    Ok(FitResult {
        params: ScalingParams::from_array(p),
        std_errors: ScalingParams::from_array(std.try_into().expect("7 parameters")),
        covariance: (0..7).map(|r| cov.matrix.row(r).to_vec()).collect(),
        objective: best.objective,
        mean_relative_residual,
        residuals,
        residual_variance: sigma2,
        condition_number: cov.condition_number,
        depth_offset,
        n_rows: n,
        start_objectives,
        best_start,
        objective_history: (opts.history_every > 0).then(|| best.history.clone()),
        warnings,
        options: opts.clone(),
    })
}

/// Residual of the observed loss after removing two fitted terms and L0,
/// next to the fitted value of the remaining term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    #[serde(flatten)]
    pub row: ScalingRow,
    pub width_term: f64,
    pub depth_term: f64,
    pub data_term: f64,
    pub width_part: f64,
    pub depth_part: f64,
    pub data_part: f64,
}

pub fn loss_parts(
    data: &ScalingDataset,
    params: &ScalingParams,
    depth_offset: usize,
) -> Result<Vec<LossParts>> {
    data.rows
        .iter()
        .map(|row| {
            let t = terms(params, row, depth_offset)?;
            let l = row.loss - params.l0;
            Ok(LossParts {
                row: *row,
                width_term: t.width,
                depth_term: t.depth,
                data_term: t.data,
                width_part: l - t.depth - t.data,
                depth_part: l - t.width - t.data,
                data_part: l - t.width - t.depth,
            })
        })
        .collect()
}

/// Analytic Jacobian of `r_i = L_obs − L_pred` with respect to the seven
/// parameters.
pub fn residual_jacobian(data: &ScalingDataset, params: &ScalingParams, depth_offset: usize) -> Result<Matrix> {
    let d = Design::new(data, depth_offset)?;
    let p = params.to_array();
    let mut jac = Matrix::zeros(d.n(), 7);
    for i in 0..d.n() {
        for (k, v) in d.dpred(&p, i).iter().enumerate() {
            jac[(i, k)] = -v;
        }
    }
    Ok(jac)
}

/// Objective value at `params` (no optimization).
pub fn objective_at(
    data: &ScalingDataset,
    params: &ScalingParams,
    depth_offset: usize,
    objective: Objective,
) -> Result<f64> {
    let d = Design::new(data, depth_offset)?;
    Ok(d.objective_and_grad(&params.to_array(), objective).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ScalingParams {
        ScalingParams::from_array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn predict_examples() {
        let row = ScalingRow { m: 1.0, ell: 1.0, d: 1.0, loss: 1.0 };
        assert!((predict(&unit(), &row, 0).unwrap() - 3.0).abs() < 1e-15);
        let mut p = unit();
        p.ln_c_m = -800.0;
        p.ln_c_ell = -800.0;
        p.ln_c_d = -800.0;
        p.l0 = 1.7;
        assert_eq!(predict(&p, &row, 0).unwrap(), 1.7);
        let r3 = ScalingRow { ell: 3.0, ..row };
        assert_eq!(
            terms(&unit(), &r3, 2).unwrap().depth,
            terms(&unit(), &row, 0).unwrap().depth
        );
        assert!(predict(&unit(), &ScalingRow { ell: 2.0, ..row }, 2).is_err());
    }

    #[test]
    fn too_little_variation_rejected() {
        let rows: Vec<ScalingRow> = (0..10)
            .map(|i| ScalingRow { m: 64.0, ell: 2.0 + i as f64, d: 1e9 * (1.0 + i as f64), loss: 3.0 })
            .collect();
        let d = ScalingDataset::new(rows, "t").unwrap();
        assert!(matches!(
            fit_decomposed(&d, 0, &FitOptions::default()),
            Err(Error::NotIdentifiable(_))
        ));
    }
}
