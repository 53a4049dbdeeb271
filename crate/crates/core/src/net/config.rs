use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// `h_l = h_{l-1} + MLP_l(h_{l-1})`
    #[default]
    FirstOrder,
    /// Midpoint update: `h_c = h_{l-1} + ½·MLP_{l,1}(h_{l-1})`,
    /// `h_l = h_{l-1} + MLP_{l,2}(h_c)`.
    SecondOrder,
}

impl BlockKind {
    pub fn mlps_per_block(self) -> usize {
        match self {
            BlockKind::FirstOrder => 1,
            BlockKind::SecondOrder => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSource {
    /// Trainable head sampled at initialization.
    #[default]
    Own,
    /// Head copied from the teacher and frozen during training.
    CopiedFromTeacher,
}

/// Which block matrices receive the `1/sqrt(init_rescale_depth)` factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleTarget {
    #[default]
    OutputOnly,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub width: usize,
    pub logit_dim: usize,
    pub depth: usize,
    pub block_kind: BlockKind,
    /// One MLP shared by every layer (ρ = 1) or independent layers (ρ = 0).
    pub tie_weights: bool,
    pub init_rescale_depth: usize,
    #[serde(default)]
    pub head_source: HeadSource,
    #[serde(default)]
    pub rescale_target: RescaleTarget,
}

impl NetworkConfig {
    /// First-order, untied, own head, rescaled by its own depth.
    pub fn new(width: usize, logit_dim: usize, depth: usize) -> Self {
        NetworkConfig {
            width,
            logit_dim,
            depth,
            block_kind: BlockKind::FirstOrder,
            tie_weights: false,
            init_rescale_depth: depth.max(1),
            head_source: HeadSource::Own,
            rescale_target: RescaleTarget::OutputOnly,
        }
    }

    pub fn with_block_kind(mut self, kind: BlockKind) -> Self {
        self.block_kind = kind;
        self
    }

    pub fn with_tied(mut self, tied: bool) -> Self {
        self.tie_weights = tied;
        self
    }

    pub fn with_head_source(mut self, head: HeadSource) -> Self {
        self.head_source = head;
        self
    }

    /// ρ as an integer, 1 when tied.
    pub fn rho(&self) -> u8 {
        u8::from(self.tie_weights)
    }

    pub fn hidden(&self) -> usize {
        4 * self.width
    }

    /// Number of distinct parameter blocks stored.
    pub fn stored_blocks(&self) -> usize {
        if self.tie_weights {
            self.depth.min(1)
        } else {
            self.depth
        }
    }

    /// A depth of zero is accepted and gives the identity network.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.logit_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "width {} and logit_dim {} must be positive",
                self.width, self.logit_dim
            )));
        }
        if self.init_rescale_depth == 0 {
            return Err(Error::InvalidArgument(
                "init_rescale_depth must be positive".into(),
            ));
        }
        Ok(())
    }
}
