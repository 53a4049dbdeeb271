//! Objectives and their exact reverse-mode gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{gemm, ops, Matrix, Op};

use super::config::BlockKind;
use super::network::{add_assign, rms_norm_backward, rms_norm_rows, Block, ForwardCache, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// KL(teacher_T ‖ student), teacher logits sharpened by `temperature`.
    KlToTeacher { temperature: f64 },
    /// Mean squared error between final hidden states.
    MseLastHidden,
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::KlToTeacher { temperature } if !(temperature > 0.0 && temperature.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "teacher temperature must be positive, got {temperature}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        match *self {
            LossSpec::KlToTeacher { temperature } => Some(temperature),
            LossSpec::MseLastHidden => None,
        }
    }
}

/// Teacher outputs for a batch, one row per example.
#[derive(Clone, Debug)]
pub enum Targets {
    /// Target probability vectors (`batch × n`).
    Distributions(Matrix),
    /// Teacher final hidden states (`batch × m`).
    Hidden(Matrix),
}

impl Targets {
    /// Evaluates the teacher on `batch` for the given objective.
    pub fn from_teacher(teacher: &Network, batch: &Matrix, spec: &LossSpec) -> Result<Self> {
        spec.validate()?;
        match *spec {
            LossSpec::KlToTeacher { temperature } => {
                let logits = teacher.batch_logits(batch)?;
                let mut probs = Matrix::zeros(logits.rows(), logits.cols());
                let mut buf = Vec::with_capacity(logits.cols());
                for r in 0..logits.rows() {
                    ops::softmax_into(logits.row(r), 1.0 / temperature, &mut buf);
                    probs.row_mut(r).copy_from_slice(&buf);
                }
                Ok(Targets::Distributions(probs))
            }
            LossSpec::MseLastHidden => Ok(Targets::Hidden(teacher.final_hidden(batch)?)),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Targets::Distributions(m) | Targets::Hidden(m) => m.rows(),
        }
    }
}

/// Parameter gradients laid out like the network they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Block>,
    pub head: Matrix,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let cfg = net.config();
        Gradients {
            blocks: (0..cfg.stored_blocks())
                .map(|_| Block::zeros(cfg.width, cfg.block_kind))
                .collect(),
            head: Matrix::zeros(cfg.logit_dim, cfg.width),
        }
    }

    /// Flat slices in the order of [`Network::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for block in &self.blocks {
            for mlp in &block.mlps {
                out.push(mlp.a.as_slice());
                out.push(&mlp.bias);
                out.push(mlp.b.as_slice());
            }
        }
        out.push(self.head.as_slice());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Batch-mean objective of `student` against precomputed targets, without
/// gradients.
pub fn evaluate_loss(student: &Network, batch: &Matrix, targets: &Targets) -> Result<f64> {
    check_batch(student, batch, targets)?;
    let h = student.propagate(batch, None, None)?;
    let (loss, _) = output_loss(student, &h, targets, false)?;
    Ok(loss)
}

/// Batch-mean objective and its exact gradient with respect to every
/// student parameter.
///
/// Tied blocks accumulate the contributions of every layer; a frozen
/// (teacher-copied) head receives a zero gradient.
pub fn loss_and_gradients_with_targets(
    student: &Network,
    batch: &Matrix,
    targets: &Targets,
) -> Result<(f64, Gradients)> {
    check_batch(student, batch, targets)?;
    let mut cache = ForwardCache::default();
    let h = student.propagate(batch, Some(&mut cache), None)?;
    let mut grads = Gradients::zeros_like(student);
    let (loss, head_out) = output_loss(student, &h, targets, true)?;
    let OutputGrad { d_h, d_head } = head_out.expect("gradient requested");
    if !student.head_frozen() {
        grads.head = d_head;
    }

    let mut dh = d_h;
    for l in (0..student.depth()).rev() {
        let idx = student.block_index(l);
        let block = student.block(l);
        let layer = &cache.layers[l];
        let gblock = &mut grads.blocks[idx];
        match student.config().block_kind {
            BlockKind::FirstOrder => {
                let dv = block.mlps[0].backward(&layer.first, &dh, &mut gblock.mlps[0]);
                add_assign(&mut dh, &dv, 1.0);
            }
            BlockKind::SecondOrder => {
                let second = layer.second.as_ref().expect("second-order cache");
                // h_l = h + MLP2(h_c), h_c = h + ½·MLP1(h)
                let (g1, g2) = gblock.mlps.split_at_mut(1);
                let mut d_center = block.mlps[1].backward(second, &dh, &mut g2[0]);
                let d_inner = {
                    let mut half = d_center.clone();
                    half.scale(0.5);
                    block.mlps[0].backward(&layer.first, &half, &mut g1[0])
                };
                add_assign(&mut d_center, &d_inner, 1.0);
                add_assign(&mut dh, &d_center, 1.0);
            }
        }
    }
    // the input RMSNorm has no parameters; dh now holds d loss / d h_0
    Ok((loss, grads))
}

/// Evaluates the teacher targets and delegates to
/// [`loss_and_gradients_with_targets`].
pub fn loss_and_gradients(
    student: &Network,
    teacher: &Network,
    batch: &Matrix,
    spec: &LossSpec,
) -> Result<(f64, Gradients)> {
    if student.width() != teacher.width() {
        return Err(Error::Shape(format!(
            "student width {} vs teacher width {}",
            student.width(),
            teacher.width()
        )));
    }
    if matches!(spec, LossSpec::KlToTeacher { .. })
        && student.config().logit_dim != teacher.config().logit_dim
    {
        return Err(Error::Shape(format!(
            "student has {} logits, teacher {}",
            student.config().logit_dim,
            teacher.config().logit_dim
        )));
    }
    let targets = Targets::from_teacher(teacher, batch, spec)?;
    loss_and_gradients_with_targets(student, batch, &targets)
}

fn check_batch(student: &Network, batch: &Matrix, targets: &Targets) -> Result<()> {
    if batch.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.cols() != student.width() {
        return Err(Error::Shape(format!(
            "batch width {} vs network width {}",
            batch.cols(),
            student.width()
        )));
    }
    if targets.rows() != batch.rows() {
        return Err(Error::Shape(format!(
            "{} targets for {} inputs",
            targets.rows(),
            batch.rows()
        )));
    }
    let want = match targets {
        Targets::Distributions(p) => (p.cols(), student.config().logit_dim),
        Targets::Hidden(h) => (h.cols(), student.width()),
    };
    if want.0 != want.1 {
        return Err(Error::Shape(format!(
            "target rows have {} entries, expected {}",
            want.0, want.1
        )));
    }
    Ok(())
}

struct OutputGrad {
    d_h: Matrix,
    d_head: Matrix,
}

/// Loss of the final hidden states `h`, plus the gradient with respect to
/// `h` and the head when `want_grad`.
fn output_loss(
    net: &Network,
    h: &Matrix,
    targets: &Targets,
    want_grad: bool,
) -> Result<(f64, Option<OutputGrad>)> {
    let batch = h.rows() as f64;
    match targets {
        Targets::Hidden(target) => {
            let width = h.cols() as f64;
            let mut diff = h.clone();
            add_assign(&mut diff, target, -1.0);
            let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / (batch * width);
            let grad = want_grad.then(|| {
                diff.scale(2.0 / (batch * width));
                OutputGrad {
                    d_h: diff,
                    d_head: Matrix::zeros(net.head().rows(), net.head().cols()),
                }
            });
            Ok((loss, grad))
        }
        Targets::Distributions(target) => {
            let (u, inv_rms) = rms_norm_rows(h);
            let mut y = Matrix::zeros(h.rows(), net.config().logit_dim);
            gemm(&u, Op::N, net.head(), Op::T, 0.0, &mut y);
            let mut loss = 0.0;
            let mut dy = Matrix::zeros(y.rows(), y.cols());
            let mut q = Vec::with_capacity(y.cols());
            for r in 0..y.rows() {
                let (p, logits) = (target.row(r), y.row(r));
                let logq = ops::log_softmax(logits);
                let kl: f64 = p
                    .iter()
                    .zip(&logq)
                    .filter(|(&pi, _)| pi > 0.0)
                    .map(|(&pi, &lq)| pi * (pi.ln() - lq))
                    .sum();
                loss += kl;
                if want_grad {
                    ops::softmax_into(logits, 1.0, &mut q);
                    dy.row_mut(r)
                        .iter_mut()
                        .zip(q.iter().zip(p))
                        .for_each(|(d, (qi, pi))| *d = (qi - pi) / batch);
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite("KL loss".into()));
            }
            let grad = want_grad.then(|| {
                let mut d_head = Matrix::zeros(net.head().rows(), net.head().cols());
                gemm(&dy, Op::T, &u, Op::N, 0.0, &mut d_head);
                let mut du = Matrix::zeros(h.rows(), h.cols());
                gemm(&dy, Op::N, net.head(), Op::N, 0.0, &mut du);
                rms_norm_backward(&mut du, &u, &inv_rms);
                OutputGrad { d_h: du, d_head }
            });
            Ok((loss / batch, grad))
        }
    }
}
