use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{gaussian_matrix, hash64, Matrix, Rng};
use crate::net::{
    evaluate_loss, loss_and_gradients_with_targets, BlockKind, LossSpec, Network, Targets,
};

use super::adam::{adam_step, AdamState};

/// Losses above this are treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0001;
const EVAL_STREAM: u64 = 0x6576_616c_0000_0002;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossSpec,
    pub eval_every: u64,
    pub n_eval_batches: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 40_000,
            batch_size: 256,
            lr: 6e-4,
            loss: LossSpec::KlToTeacher { temperature: 1.0 },
            eval_every: 500,
            n_eval_batches: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.n_eval_batches == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, n_eval_batches and eval_every must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        self.loss.validate()
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub temperature: Option<f64>,
    pub rho: u8,
    pub depth: usize,
    pub block_kind: BlockKind,
    pub temperature_index: Option<usize>,
    pub teacher_index: Option<usize>,
    pub teacher_seed: Option<u64>,
    pub config: TrainConfig,
    pub num_params: usize,
    /// `(step, mean training loss over the steps since the previous entry)`
    pub train_history: Vec<(u64, f64)>,
    /// `(step, held-out loss)`, starting at step 0.
    pub eval_history: Vec<(u64, f64)>,
    pub final_test_loss: Option<f64>,
    pub steps_completed: u64,
    pub diverged: bool,
    pub checkpoint: Option<PathBuf>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.error.is_none() && (self.diverged || self.final_test_loss.is_some())
    }
}

/// Held-out inputs and teacher targets, drawn once per run.
struct EvalSet {
    batches: Vec<(Matrix, Targets)>,
}

impl EvalSet {
    fn new(teacher: &Network, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = Rng::new(hash64(&[cfg.seed, EVAL_STREAM]));
        let batches = (0..cfg.n_eval_batches)
            .map(|_| {
                let x = gaussian_matrix(&mut rng, cfg.batch_size, teacher.width(), 1.0);
                let t = Targets::from_teacher(teacher, &x, &cfg.loss)?;
                Ok((x, t))
            })
            .collect::<Result<_>>()?;
        Ok(EvalSet { batches })
    }

    fn loss(&self, student: &Network) -> Result<f64> {
        let mut total = 0.0;
        for (x, t) in &self.batches {
            total += evaluate_loss(student, x, t)?;
        }
        Ok(total / self.batches.len() as f64)
    }
}

fn is_divergent(loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_THRESHOLD
}

/// Trains `student` against `teacher` in place.
///
/// Each step draws a fresh Gaussian batch; the held-out loss is evaluated at
/// step 0, every `eval_every` steps and after the final step. A run whose
/// loss blows up stops early and comes back with `diverged` set.
pub fn train(student: &mut Network, teacher: &Network, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    if student.width() != teacher.width() {
        return Err(Error::Shape(format!(
            "student width {} vs teacher width {}",
            student.width(),
            teacher.width()
        )));
    }
    if matches!(cfg.loss, LossSpec::KlToTeacher { .. })
        && student.config().logit_dim != teacher.config().logit_dim
    {
        return Err(Error::Shape(format!(
            "student has {} logits, teacher {}",
            student.config().logit_dim,
            teacher.config().logit_dim
        )));
    }

    let mut record = RunRecord {
        id: String::new(),
        temperature: cfg.loss.temperature(),
        rho: teacher.config().rho(),
        depth: student.depth(),
        block_kind: student.config().block_kind,
        temperature_index: None,
        teacher_index: None,
        teacher_seed: None,
        config: *cfg,
        num_params: student.num_params(),
        train_history: Vec::new(),
        eval_history: Vec::new(),
        final_test_loss: None,
        steps_completed: 0,
        diverged: false,
        checkpoint: None,
        error: None,
    };

    let eval = EvalSet::new(teacher, cfg)?;
    let mut adam = AdamState::for_params(&student.param_slices());
    let mut rng = Rng::new(hash64(&[cfg.seed, TRAIN_STREAM]));

    match eval.loss(student) {
        Ok(l) if !is_divergent(l) => record.eval_history.push((0, l)),
        Ok(_) | Err(Error::Diverged { .. }) => {
            record.diverged = true;
            return Ok(record);
        }
        Err(e) => return Err(e),
    }

    let (mut window_sum, mut window_len) = (0.0, 0u64);
    for step in 0..cfg.steps {
        let x = gaussian_matrix(&mut rng, cfg.batch_size, student.width(), 1.0);
        let targets = Targets::from_teacher(teacher, &x, &cfg.loss)?;
        let (loss, grads) = match loss_and_gradients_with_targets(student, &x, &targets) {
            Ok(v) => v,
            Err(Error::Diverged { layer }) => {
                log::warn!("run diverged at step {step} (layer {layer})");
                record.diverged = true;
                return Ok(record);
            }
            Err(e) => return Err(e),
        };
        if is_divergent(loss) {
            log::warn!("run diverged at step {step}: loss {loss}");
            record.diverged = true;
            return Ok(record);
        }
        if step == 0 {
            record.train_history.push((0, loss));
        } else {
            window_sum += loss;
            window_len += 1;
        }
        adam_step(&mut student.param_slices_mut(), &grads.slices(), &mut adam, cfg.lr)?;
        record.steps_completed = step + 1;

        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            if window_len > 0 {
                record.train_history.push((done, window_sum / window_len as f64));
            }
            (window_sum, window_len) = (0.0, 0);
            match eval.loss(student) {
                Ok(l) if !is_divergent(l) => record.eval_history.push((done, l)),
                Ok(_) | Err(Error::Diverged { .. }) => {
                    record.diverged = true;
                    return Ok(record);
                }
                Err(e) => return Err(e),
            }
            log::debug!("step {done}: eval loss {:.6e}", record.eval_history.last().unwrap().1);
        }
    }
    record.final_test_loss = record.eval_history.last().map(|&(_, l)| l);
    Ok(record)
}
