use crate::error::{Error, Result};
use crate::math::{gaussian_matrix, gemm, ops, Matrix, Op, Rng, RMS_EPS};

use super::config::{BlockKind, HeadSource, NetworkConfig, RescaleTarget};

/// `MLP(v) = B · ReLU²(A · RMSNorm(v) + bias)`
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// `4m × m`
    pub a: Matrix,
    /// `4m`
    pub bias: Vec<f64>,
    /// `m × 4m`
    pub b: Matrix,
}

impl Mlp {
    pub fn zeros(width: usize) -> Self {
        Mlp {
            a: Matrix::zeros(4 * width, width),
            bias: vec![0.0; 4 * width],
            b: Matrix::zeros(width, 4 * width),
        }
    }

    fn sample(width: usize, rng: &mut Rng, a_scale: f64, b_scale: f64) -> Self {
        let hidden = 4 * width;
        let a_std = (2.0 / width as f64).sqrt() * a_scale;
        let b_std = (2.0 / hidden as f64).sqrt() * b_scale;
        Mlp {
            a: gaussian_matrix(rng, hidden, width, a_std),
            bias: vec![0.0; hidden],
            b: gaussian_matrix(rng, width, hidden, b_std),
        }
    }

    /// Batched forward over the rows of `v`; intermediates go to `cache`
    /// when provided.
    pub(crate) fn forward(&self, v: &Matrix, cache: Option<&mut MlpCache>) -> Matrix {
        let (batch, width) = v.shape();
        let hidden = self.bias.len();
        let (u, inv_rms) = rms_norm_rows(v);
        let mut z = Matrix::zeros(batch, hidden);
        for r in 0..batch {
            z.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(&u, Op::N, &self.a, Op::T, 1.0, &mut z);
        let mut act = z.clone();
        act.as_mut_slice().iter_mut().for_each(|x| {
            let r = x.max(0.0);
            *x = r * r;
        });
        let mut out = Matrix::zeros(batch, width);
        gemm(&act, Op::N, &self.b, Op::T, 0.0, &mut out);
        if let Some(c) = cache {
            *c = MlpCache { inv_rms, u, z, act };
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the MLP input.
    pub(crate) fn backward(&self, cache: &MlpCache, d_out: &Matrix, grad: &mut Mlp) -> Matrix {
        let (batch, width) = d_out.shape();
        gemm(d_out, Op::T, &cache.act, Op::N, 1.0, &mut grad.b);
        let mut dz = Matrix::zeros(batch, self.bias.len());
        gemm(d_out, Op::N, &self.b, Op::N, 0.0, &mut dz);
        dz.as_mut_slice()
            .iter_mut()
            .zip(cache.z.as_slice())
            .for_each(|(d, &z)| *d *= 2.0 * z.max(0.0));
        for r in 0..batch {
            grad.bias
                .iter_mut()
                .zip(dz.row(r))
                .for_each(|(g, d)| *g += d);
        }
        gemm(&dz, Op::T, &cache.u, Op::N, 1.0, &mut grad.a);
        let mut du = Matrix::zeros(batch, width);
        gemm(&dz, Op::N, &self.a, Op::N, 0.0, &mut du);
        rms_norm_backward(&mut du, &cache.u, &cache.inv_rms);
        du
    }
}

/// In-place `du → dv` for `u = v·inv_rms`:
/// `dv = inv_rms · (du − u · mean(du ∘ u))`.
pub(crate) fn rms_norm_backward(du: &mut Matrix, u: &Matrix, inv_rms: &[f64]) {
    let width = du.cols();
    for (r, &inv) in inv_rms.iter().enumerate() {
        let urow = u.row(r);
        let drow = du.row_mut(r);
        let proj = drow.iter().zip(urow).map(|(d, x)| d * x).sum::<f64>() / width as f64;
        drow.iter_mut()
            .zip(urow)
            .for_each(|(d, x)| *d = inv * (*d - x * proj));
    }
}

pub(crate) fn rms_norm_rows(v: &Matrix) -> (Matrix, Vec<f64>) {
    let mut u = v.clone();
    let width = v.cols();
    let mut inv_rms = Vec::with_capacity(v.rows());
    for r in 0..v.rows() {
        let row = u.row_mut(r);
        let ms = row.iter().map(|x| x * x).sum::<f64>() / width as f64;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        row.iter_mut().for_each(|x| *x *= inv);
        inv_rms.push(inv);
    }
    (u, inv_rms)
}

#[derive(Clone, Debug, Default)]
pub(crate) struct MlpCache {
    pub inv_rms: Vec<f64>,
    pub u: Matrix,
    pub z: Matrix,
    pub act: Matrix,
}

/// One residual block: a single MLP (first order) or a pair (second order).
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub mlps: Vec<Mlp>,
}

impl Block {
    pub fn zeros(width: usize, kind: BlockKind) -> Self {
        Block {
            mlps: (0..kind.mlps_per_block()).map(|_| Mlp::zeros(width)).collect(),
        }
    }
}

/// Residual network `h_0 = RMSNorm(x)`, residual blocks, `y = W·RMSNorm(h_ℓ)`.
///
/// With tied weights a single stored block serves every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    pub(crate) blocks: Vec<Block>,
    /// `n × m`
    pub(crate) head: Matrix,
}

/// Hidden states `h_0..h_ℓ` and logits for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTrace {
    pub states: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl HiddenTrace {
    pub fn depth(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

impl Network {
    /// All parameters zero: the residual stream is the identity.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Network {
            blocks: (0..config.stored_blocks())
                .map(|_| Block::zeros(config.width, config.block_kind))
                .collect(),
            head: Matrix::zeros(config.logit_dim, config.width),
            config,
        })
    }

    /// Samples parameters: `A ~ N(0, 2/m)`, `bias = 0`, `B ~ N(0, 2/(4m))`,
    /// with `B` (or both matrices, per `rescale_target`) scaled by
    /// `1/sqrt(init_rescale_depth)`; head `W ~ N(0, 1/m)`.
    ///
    /// Tied configurations draw a single block.
    pub fn init(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let rescale = 1.0 / (config.init_rescale_depth as f64).sqrt();
        let (a_scale, b_scale) = match config.rescale_target {
            RescaleTarget::OutputOnly => (1.0, rescale),
            RescaleTarget::Both => (rescale, rescale),
        };
        let blocks = (0..config.stored_blocks())
            .map(|_| Block {
                mlps: (0..config.block_kind.mlps_per_block())
                    .map(|_| Mlp::sample(config.width, rng, a_scale, b_scale))
                    .collect(),
            })
            .collect();
        let head = gaussian_matrix(
            rng,
            config.logit_dim,
            config.width,
            (1.0 / config.width as f64).sqrt(),
        );
        Ok(Network {
            config,
            blocks,
            head,
        })
    }

    /// Teacher construction; same sampling as [`Network::init`].
    pub fn build_teacher(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        Network::init(config, rng)
    }

    pub(crate) fn from_parts(config: NetworkConfig, blocks: Vec<Block>, head: Matrix) -> Result<Self> {
        config.validate()?;
        if blocks.len() != config.stored_blocks() {
            return Err(Error::Shape(format!(
                "{} stored blocks, config expects {}",
                blocks.len(),
                config.stored_blocks()
            )));
        }
        let (m, h) = (config.width, config.hidden());
        for block in &blocks {
            if block.mlps.len() != config.block_kind.mlps_per_block() {
                return Err(Error::Shape("wrong number of MLPs per block".into()));
            }
            for mlp in &block.mlps {
                if mlp.a.shape() != (h, m) || mlp.b.shape() != (m, h) || mlp.bias.len() != h {
                    return Err(Error::Shape(format!(
                        "MLP shapes A{:?} B{:?} bias {} for width {m}",
                        mlp.a.shape(),
                        mlp.b.shape(),
                        mlp.bias.len()
                    )));
                }
            }
        }
        if head.shape() != (config.logit_dim, m) {
            return Err(Error::Shape(format!("head shape {:?}", head.shape())));
        }
        Ok(Network {
            config,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn head(&self) -> &Matrix {
        &self.head
    }

    /// Block applied at layer `l` (0-based).
    #[inline]
    pub fn block(&self, l: usize) -> &Block {
        &self.blocks[self.block_index(l)]
    }

    #[inline]
    pub(crate) fn block_index(&self, l: usize) -> usize {
        if self.config.tie_weights {
            0
        } else {
            l
        }
    }

    /// Replaces the head with the teacher's and freezes it.
    pub fn copy_head_from(&mut self, teacher: &Network) -> Result<()> {
        if teacher.head.shape() != self.head.shape() {
            return Err(Error::Shape(format!(
                "teacher head {:?} vs student head {:?}",
                teacher.head.shape(),
                self.head.shape()
            )));
        }
        self.head = teacher.head.clone();
        self.config.head_source = HeadSource::CopiedFromTeacher;
        Ok(())
    }

    pub fn head_frozen(&self) -> bool {
        self.config.head_source == HeadSource::CopiedFromTeacher
    }

    /// `(name, shape)` of every stored tensor, in the order of
    /// [`Network::param_slices`].
    pub fn param_names(&self) -> Vec<(String, Vec<usize>)> {
        let (m, h) = (self.config.width, self.config.hidden());
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            for k in 0..block.mlps.len() {
                out.push((format!("blocks.{i}.mlp{k}.A"), vec![h, m]));
                out.push((format!("blocks.{i}.mlp{k}.bias"), vec![h]));
                out.push((format!("blocks.{i}.mlp{k}.B"), vec![m, h]));
            }
        }
        out.push(("head.W".to_string(), vec![self.config.logit_dim, m]));
        out
    }

    /// Every parameter value as flat slices (blocks then head).
    pub fn param_slices(&self) -> Vec<&[f64]> {
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

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for block in &mut self.blocks {
            for mlp in &mut block.mlps {
                out.push(mlp.a.as_mut_slice());
                out.push(&mut mlp.bias);
                out.push(mlp.b.as_mut_slice());
            }
        }
        out.push(self.head.as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for s in self.param_slices() {
            for v in s {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Single-input forward pass. States are kept only when `capture` is set;
    /// the logits do not depend on it.
    pub fn forward(&self, x: &[f64], capture: bool) -> Result<HiddenTrace> {
        if x.len() != self.config.width {
            return Err(Error::Shape(format!(
                "input has {} entries, width is {}",
                x.len(),
                self.config.width
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let mut states = Vec::new();
        let h = self.propagate(&xs, None, capture.then_some(&mut states))?;
        let logits = self.logits(&h);
        Ok(HiddenTrace {
            states: states.into_iter().map(Matrix::into_vec).collect(),
            logits: logits.into_vec(),
        })
    }

    /// Traces for every row of `xs`.
    pub fn forward_traces(&self, xs: &Matrix) -> Result<Vec<HiddenTrace>> {
        let mut states = Vec::new();
        let h = self.propagate(xs, None, Some(&mut states))?;
        let logits = self.logits(&h);
        Ok((0..xs.rows())
            .map(|r| HiddenTrace {
                states: states.iter().map(|s| s.row(r).to_vec()).collect(),
                logits: logits.row(r).to_vec(),
            })
            .collect())
    }

    /// Final hidden states `h_ℓ` for a batch of inputs (one per row).
    pub fn final_hidden(&self, xs: &Matrix) -> Result<Matrix> {
        self.propagate(xs, None, None)
    }

    /// Logits `W·RMSNorm(h_ℓ)` for a batch of inputs.
    pub fn batch_logits(&self, xs: &Matrix) -> Result<Matrix> {
        let h = self.propagate(xs, None, None)?;
        Ok(self.logits(&h))
    }

    /// Teacher target distribution `softmax(y*/T)` for one input.
    pub fn teacher_targets(&self, x: &[f64], temperature: f64) -> Result<Vec<f64>> {
        let trace = self.forward(x, false)?;
        ops::softmax_temperature(&trace.logits, temperature)
    }

    pub(crate) fn logits(&self, h: &Matrix) -> Matrix {
        let (u, _) = rms_norm_rows(h);
        let mut y = Matrix::zeros(h.rows(), self.config.logit_dim);
        gemm(&u, Op::N, &self.head, Op::T, 0.0, &mut y);
        y
    }

    /// Runs `h_0 = RMSNorm(x)` through all blocks and returns `h_ℓ`.
    pub(crate) fn propagate(
        &self,
        xs: &Matrix,
        mut caches: Option<&mut ForwardCache>,
        mut states: Option<&mut Vec<Matrix>>,
    ) -> Result<Matrix> {
        if xs.cols() != self.config.width {
            return Err(Error::Shape(format!(
                "inputs have {} columns, width is {}",
                xs.cols(),
                self.config.width
            )));
        }
        let (mut h, inv) = rms_norm_rows(xs);
        if let Some(c) = caches.as_deref_mut() {
            c.input_inv_rms = inv;
            c.layers.clear();
        }
        if let Some(s) = states.as_deref_mut() {
            s.clear();
            s.push(h.clone());
        }
        for l in 0..self.config.depth {
            let block = self.block(l);
            let mut layer_cache = caches.as_ref().map(|_| LayerCache::default());
            match self.config.block_kind {
                BlockKind::FirstOrder => {
                    let upd = block.mlps[0].forward(
                        &h,
                        layer_cache.as_mut().map(|c| &mut c.first),
                    );
                    add_assign(&mut h, &upd, 1.0);
                }
                BlockKind::SecondOrder => {
                    let half = block.mlps[0].forward(
                        &h,
                        layer_cache.as_mut().map(|c| &mut c.first),
                    );
                    let mut center = h.clone();
                    add_assign(&mut center, &half, 0.5);
                    let upd = block.mlps[1].forward(
                        &center,
                        layer_cache.as_mut().map(|c| c.second.get_or_insert_with(Default::default)),
                    );
                    add_assign(&mut h, &upd, 1.0);
                }
            }
            if !h.is_finite() {
                return Err(Error::Diverged { layer: l + 1 });
            }
            if let (Some(c), Some(lc)) = (caches.as_deref_mut(), layer_cache) {
                c.layers.push(lc);
            }
            if let Some(s) = states.as_deref_mut() {
                s.push(h.clone());
            }
        }
        Ok(h)
    }
}

#[inline]
pub(crate) fn add_assign(dst: &mut Matrix, src: &Matrix, alpha: f64) {
    dst.as_mut_slice()
        .iter_mut()
        .zip(src.as_slice())
        .for_each(|(d, s)| *d += alpha * s);
}

#[derive(Debug, Default)]
pub(crate) struct LayerCache {
    pub first: MlpCache,
    pub second: Option<MlpCache>,
}

#[derive(Debug, Default)]
pub(crate) struct ForwardCache {
    pub input_inv_rms: Vec<f64>,
    pub layers: Vec<LayerCache>,
}
