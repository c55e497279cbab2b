use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the vision-transformer backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub num_layers: usize,
    pub token_dim: usize,
    pub patch_size: usize,
    pub num_heads: usize,
    pub input_size: usize,
    pub mlp_ratio: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            num_layers: 8,
            token_dim: 128,
            patch_size: 16,
            num_heads: 4,
            input_size: 224,
            mlp_ratio: 4,
        }
    }
}

impl BackboneSpec {
    /// A desk-scale backbone for 32×32 inputs.
    pub fn small() -> Self {
        Self {
            num_layers: 6,
            token_dim: 64,
            patch_size: 8,
            num_heads: 4,
            input_size: 32,
            mlp_ratio: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::InvalidArgument("backbone needs at least 2 layers".into()));
        }
        if self.patch_size == 0 || !self.input_size.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidArgument(format!(
                "input size {} not divisible by patch size {}",
                self.input_size, self.patch_size
            )));
        }
        if self.num_heads == 0 || !self.token_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidArgument(format!(
                "token dim {} not divisible by {} heads",
                self.token_dim, self.num_heads
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::InvalidArgument("mlp ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.input_size / self.patch_size
    }

    /// Patch tokens plus the cls token.
    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid() + 1
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.num_heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.token_dim * self.mlp_ratio
    }

    /// Middle layer used for atlases when none is configured: `⌊0.58·L⌋`.
    pub fn default_atlas_layer(&self) -> usize {
        ((0.58 * self.num_layers as f64).floor() as usize).min(self.num_layers - 1)
    }
}
