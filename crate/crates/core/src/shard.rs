//! Splitting a transformer into head, middle and tail shards.
//!
//! The head owns the embedding and layers `[0, K)`, the middle owns `[K, N)`
//! and the tail owns `[N, L)` plus the final norm and LM head. Shards hold
//! `Arc`s into the original weights, so splitting copies nothing.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::{
    read_checkpoint, write_checkpoint, CheckpointRole, Embedding, LayerWeights, ModelConfig,
    ModelError, OutputHead, TokenId, TransformerModel,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShardError {
    #[error("invalid layer range ({k}, {n}) for {n_layers} layers; need 0 < K < N < {n_layers}")]
    InvalidSpec { k: usize, n: usize, n_layers: usize },
    #[error("expected a {expected:?} checkpoint, found {found:?}")]
    WrongRole {
        expected: CheckpointRole,
        found: CheckpointRole,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Layer boundaries: head `[0, K)`, middle `[K, N)`, tail `[N, L)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShardSpec {
    pub split_k: usize,
    pub split_n: usize,
}

impl Default for ShardSpec {
    fn default() -> Self {
        Self {
            split_k: 3,
            split_n: 5,
        }
    }
}

impl ShardSpec {
    pub fn new(split_k: usize, split_n: usize) -> Self {
        Self { split_k, split_n }
    }

    pub fn validate(&self, n_layers: usize) -> Result<(), ShardError> {
        if 0 < self.split_k && self.split_k < self.split_n && self.split_n < n_layers {
            Ok(())
        } else {
            Err(ShardError::InvalidSpec {
                k: self.split_k,
                n: self.split_n,
                n_layers,
            })
        }
    }

    pub fn head_range(&self) -> Range<usize> {
        0..self.split_k
    }

    pub fn middle_range(&self) -> Range<usize> {
        self.split_k..self.split_n
    }

    pub fn tail_range(&self, n_layers: usize) -> Range<usize> {
        self.split_n..n_layers
    }

    /// Which shard owns `layer`: 0 head, 1 middle, 2 tail.
    pub fn owner(&self, layer: usize) -> usize {
        if layer < self.split_k {
            0
        } else if layer < self.split_n {
            1
        } else {
            2
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadShard {
    config: ModelConfig,
    embedding: Arc<Embedding>,
    layers: Vec<Arc<LayerWeights>>,
}

impl HeadShard {
    /// Embeds `tokens` and runs the head layers; returns `d × n`.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Matrix, ModelError> {
        let x = crate::model::embed_rows(&self.config, &self.embedding, tokens)?.transpose();
        crate::model::run_layers(&self.config, &self.layers, &x)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Clone, Debug)]
pub struct MiddleShard {
    config: ModelConfig,
    spec: ShardSpec,
    layers: Vec<Arc<LayerWeights>>,
}

impl MiddleShard {
    pub fn forward(&self, h: &Matrix) -> Result<Matrix, ModelError> {
        crate::model::run_layers(&self.config, &self.layers, h)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spec(&self) -> ShardSpec {
        self.spec
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Server checkpoint: only the middle layers are stored.
    pub fn export(&self) -> Vec<u8> {
        let mut model = placeholder(&self.config);
        for (slot, layer) in model.layers[self.spec.middle_range()]
            .iter_mut()
            .zip(&self.layers)
        {
            *slot = layer.clone();
        }
        write_checkpoint(
            &model,
            CheckpointRole::Server,
            (self.spec.split_k, self.spec.split_n),
        )
    }

    pub fn import(bytes: &[u8]) -> Result<Self, ShardError> {
        let (header, model) = read_checkpoint(bytes)?;
        expect_role(CheckpointRole::Server, header.role)?;
        let spec = ShardSpec::new(header.split.0, header.split.1);
        Ok(split(&model, spec)?.middle)
    }
}

#[derive(Clone, Debug)]
pub struct TailShard {
    config: ModelConfig,
    layers: Vec<Arc<LayerWeights>>,
    output: Arc<OutputHead>,
}

impl TailShard {
    /// Tail layers, final norm and LM head; returns `vocab × n` logits.
    pub fn forward(&self, h: &Matrix) -> Result<Matrix, ModelError> {
        let h = crate::model::run_layers(&self.config, &self.layers, h)?;
        crate::model::project_logits(&self.config, &self.output, &h)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

/// The part a client deploys: head and tail.
#[derive(Clone, Debug)]
pub struct ClientShards {
    pub spec: ShardSpec,
    pub head: HeadShard,
    pub tail: TailShard,
}

impl ClientShards {
    pub fn config(&self) -> &ModelConfig {
        &self.head.config
    }

    /// Client checkpoint: embedding, head and tail layers, output head.
    pub fn export(&self) -> Vec<u8> {
        let mut model = placeholder(&self.head.config);
        let n_layers = model.config.n_layers;
        model.embedding = self.head.embedding.clone();
        model.output = self.tail.output.clone();
        for (slot, layer) in model.layers[self.spec.head_range()]
            .iter_mut()
            .zip(&self.head.layers)
        {
            *slot = layer.clone();
        }
        for (slot, layer) in model.layers[self.spec.tail_range(n_layers)]
            .iter_mut()
            .zip(&self.tail.layers)
        {
            *slot = layer.clone();
        }
        write_checkpoint(
            &model,
            CheckpointRole::Client,
            (self.spec.split_k, self.spec.split_n),
        )
    }

    pub fn import(bytes: &[u8]) -> Result<Self, ShardError> {
        let (header, model) = read_checkpoint(bytes)?;
        expect_role(CheckpointRole::Client, header.role)?;
        let spec = ShardSpec::new(header.split.0, header.split.1);
        Ok(split(&model, spec)?.client())
    }
}

/// One transformer partitioned into three shards.
#[derive(Clone, Debug)]
pub struct ShardedModel {
    pub spec: ShardSpec,
    pub head: HeadShard,
    pub middle: MiddleShard,
    pub tail: TailShard,
}

impl ShardedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.head.config
    }

    pub fn head_forward(&self, tokens: &[TokenId]) -> Result<Matrix, ModelError> {
        self.head.forward(tokens)
    }

    pub fn middle_forward(&self, h: &Matrix) -> Result<Matrix, ModelError> {
        self.middle.forward(h)
    }

    pub fn tail_forward(&self, h: &Matrix) -> Result<Matrix, ModelError> {
        self.tail.forward(h)
    }

    pub fn client(&self) -> ClientShards {
        ClientShards {
            spec: self.spec,
            head: self.head.clone(),
            tail: self.tail.clone(),
        }
    }

    /// Reassembles the monolithic model (sharing the same weights).
    pub fn to_model(&self) -> TransformerModel {
        let mut layers = self.head.layers.clone();
        layers.extend(self.middle.layers.iter().cloned());
        layers.extend(self.tail.layers.iter().cloned());
        TransformerModel {
            config: self.head.config,
            embedding: self.head.embedding.clone(),
            layers,
            output: self.tail.output.clone(),
        }
    }
}

/// Partitions `model` by `spec`. The model is left untouched; shards share its weights.
pub fn split(model: &TransformerModel, spec: ShardSpec) -> Result<ShardedModel, ShardError> {
    let cfg = &model.config;
    spec.validate(cfg.n_layers)?;
    let take = |r: Range<usize>| model.layers[r].to_vec();
    Ok(ShardedModel {
        spec,
        head: HeadShard {
            config: *cfg,
            embedding: model.embedding.clone(),
            layers: take(spec.head_range()),
        },
        middle: MiddleShard {
            config: *cfg,
            spec,
            layers: take(spec.middle_range()),
        },
        tail: TailShard {
            config: *cfg,
            layers: take(spec.tail_range(cfg.n_layers)),
            output: model.output.clone(),
        },
    })
}

fn placeholder(config: &ModelConfig) -> TransformerModel {
    TransformerModel::init(*config)
        .expect("shard configs are validated at split time")
        .zeros_like()
}

fn expect_role(expected: CheckpointRole, found: CheckpointRole) -> Result<(), ShardError> {
    if expected == found {
        Ok(())
    } else {
        Err(ShardError::WrongRole { expected, found })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn model(n_layers: usize) -> TransformerModel {
        init_model(ModelConfig {
            n_layers,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            max_seq: 32,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn eight_layers_split_three_two_three() {
        let s = split(&model(8), ShardSpec::new(3, 5)).unwrap();
        assert_eq!(
            (s.head.n_layers(), s.middle.n_layers(), s.tail.n_layers()),
            (3, 2, 3)
        );
    }

    #[test]
    fn thirty_two_layers_split_thirteen_six_thirteen() {
        let cfg = ModelConfig {
            n_layers: 32,
            d_model: 8,
            n_heads: 2,
            d_ff: 8,
            max_seq: 8,
            ..Default::default()
        };
        let s = split(&init_model(cfg).unwrap(), ShardSpec::new(13, 19)).unwrap();
        assert_eq!(
            (s.head.n_layers(), s.middle.n_layers(), s.tail.n_layers()),
            (13, 6, 13)
        );
    }

    #[test]
    fn empty_head_is_rejected_with_the_offending_values() {
        let err = split(&model(8), ShardSpec::new(0, 5)).unwrap_err();
        assert_eq!(
            err,
            ShardError::InvalidSpec {
                k: 0,
                n: 5,
                n_layers: 8
            }
        );
        assert!(err.to_string().contains("(0, 5)"));
        for (k, n) in [(3, 3), (5, 3), (3, 8), (3, 9)] {
            assert!(
                split(&model(8), ShardSpec::new(k, n)).is_err(),
                "({k}, {n})"
            );
        }
    }

    #[test]
    fn shards_share_weights() {
        let m = model(8);
        let s = split(&m, ShardSpec::new(3, 5)).unwrap();
        assert!(Arc::ptr_eq(&s.head.embedding, &m.embedding));
        assert!(Arc::ptr_eq(&s.middle.layers[0], &m.layers[3]));
        assert!(Arc::ptr_eq(&s.tail.output, &m.output));
    }

    #[test]
    fn composition_is_bitwise_monolithic() {
        let m = model(8);
        let tokens: Vec<TokenId> = vec![40, 65, 72, 14, 0, 33, 91];
        let whole = m.forward(&tokens).unwrap();
        for (k, n) in [(1, 2), (3, 5), (1, 7), (6, 7)] {
            let s = split(&m, ShardSpec::new(k, n)).unwrap();
            let h = s.head_forward(&tokens).unwrap();
            assert_eq!(h.shape(), (16, tokens.len()));
            let logits = s.tail_forward(&s.middle_forward(&h).unwrap()).unwrap();
            assert_eq!(logits, whole);
        }
    }

    #[test]
    fn tail_edit_leaves_head_and_middle_alone() {
        let m = model(8);
        let tokens: Vec<TokenId> = vec![5, 6, 7];
        let s = split(&m, ShardSpec::new(3, 5)).unwrap();
        let h = s.head_forward(&tokens).unwrap();
        let mid = s.middle_forward(&h).unwrap();
        let before = s.tail_forward(&mid).unwrap();

        let mut edited = m.clone();
        Arc::make_mut(&mut edited.layers[6]).w1.set(0, 0, 5.0);
        let e = split(&edited, ShardSpec::new(3, 5)).unwrap();
        assert_eq!(e.head_forward(&tokens).unwrap(), h);
        assert_eq!(e.middle_forward(&h).unwrap(), mid);
        assert_ne!(e.tail_forward(&mid).unwrap(), before);
        // The original model is untouched.
        assert_eq!(s.tail_forward(&mid).unwrap(), before);
    }

    #[test]
    fn wrong_hidden_shape_is_an_error() {
        let s = split(&model(8), ShardSpec::new(3, 5)).unwrap();
        assert!(s.middle_forward(&Matrix::zeros(15, 4)).is_err());
        assert!(s.tail_forward(&Matrix::zeros(16, 33)).is_err());
    }

    #[test]
    fn export_import_round_trip_per_role() {
        let m = model(8);
        let s = split(&m, ShardSpec::new(3, 5)).unwrap();
        let client_bytes = s.client().export();
        let server_bytes = s.middle.export();
        let client = ClientShards::import(&client_bytes).unwrap();
        let middle = MiddleShard::import(&server_bytes).unwrap();
        assert!(matches!(
            ClientShards::import(&server_bytes),
            Err(ShardError::WrongRole { .. })
        ));
        assert_eq!(middle.spec(), ShardSpec::new(3, 5));

        // Exported weights are binary32, so compare with a tolerance.
        let tokens: Vec<TokenId> = vec![12, 40, 3, 77];
        let want = s
            .tail_forward(&s.middle_forward(&s.head_forward(&tokens).unwrap()).unwrap())
            .unwrap();
        let got = client
            .tail
            .forward(
                &middle
                    .forward(&client.head.forward(&tokens).unwrap())
                    .unwrap(),
            )
            .unwrap();
        let diff = got.sub(&want).unwrap().frobenius_norm() / want.frobenius_norm();
        assert!(diff < 1e-5, "{diff}");
    }
}
