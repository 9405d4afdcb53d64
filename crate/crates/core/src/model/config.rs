use serde::{Deserialize, Serialize};

use super::ModelError;

/// Shape hyperparameters of the decoder-only transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The desk-scale model: 8 layers, width 64, 4 heads, character vocabulary.
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: 96,
            max_seq: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |why: &str| Err(ModelError::InvalidConfig(why.to_string()));
        if self.n_layers < 3 {
            return fail("n_layers must be at least 3 to admit a head/middle/tail split");
        }
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail("d_model must be a positive multiple of n_heads");
        }
        if self.d_ff == 0 || self.vocab_size == 0 || self.max_seq == 0 {
            return fail("d_ff, vocab_size and max_seq must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
