//! Character-level decoder-only transformer: weights, forward and backward
//! passes, sampling, training and checkpoints.

mod backward;
mod checkpoint;
mod config;
pub mod corpus;
mod sampling;
mod tokenizer;
mod train;
mod transformer;

use thiserror::Error;

pub use backward::{loss, loss_and_grad};
pub use checkpoint::{
    load_model, read_checkpoint, save_model, write_checkpoint, CheckpointHeader, CheckpointRole,
    MODEL_MAGIC, MODEL_VERSION,
};
pub use config::ModelConfig;
pub use sampling::{argmax, filtered_distribution, sample_next, SamplingParams};
pub use tokenizer::{TokenId, Tokenizer};
pub use train::{train, TrainConfig, TrainReport, WindowSampler};
pub use transformer::{Embedding, LayerWeights, OutputHead, TransformerModel};

pub(crate) use transformer::{embed_rows, project_logits, run_layers};

/// Convenience wrapper for [`TransformerModel::init`].
pub fn init_model(config: ModelConfig) -> Result<TransformerModel, ModelError> {
    TransformerModel::init(config)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens exceeds max_seq {max_seq}")]
    SequenceTooLong { len: usize, max_seq: usize },
    #[error("token {token} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error("layer range {start}..{end} invalid for {n_layers} layers")]
    LayerRange {
        start: usize,
        end: usize,
        n_layers: usize,
    },
    #[error(
        "hidden state is {rows}x{cols}; expected {d_model} rows and at most {max_seq} columns"
    )]
    HiddenShape {
        rows: usize,
        cols: usize,
        d_model: usize,
        max_seq: usize,
    },
    #[error("non-finite values in model computation")]
    NonFinite,
    #[error("character {0:?} is not in the tokenizer alphabet")]
    UnknownCharacter(char),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
