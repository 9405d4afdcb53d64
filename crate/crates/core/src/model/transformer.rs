//! Pre-norm decoder-only transformer with RMS normalization, learned absolute
//! positions and a GELU feed-forward block.
//!
//! Public entry points take and return hidden states as `d × n` (features ×
//! positions). Internally every activation is `n × d` so each position is a
//! contiguous row; the transpose happens only at these boundaries.

use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError, TokenId};
use crate::linalg::{dot, gemm_nn, Matrix};

pub(crate) const RMS_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Token and position embedding tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// `vocab × d`
    pub tokens: Matrix,
    /// `max_seq × d`
    pub positions: Matrix,
}

/// Weights of one decoder block. Projections are stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f64>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ffn_norm: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Final normalization and the LM head (`d × vocab`).
#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead {
    pub norm: Vec<f64>,
    pub lm_head: Matrix,
}

/// A complete model. Weight blocks sit behind `Arc` so shards can share
/// them without copying; mutation goes through copy-on-write.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub embedding: Arc<Embedding>,
    pub layers: Vec<Arc<LayerWeights>>,
    pub output: Arc<OutputHead>,
}

impl LayerWeights {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        Self {
            attn_norm: vec![0.0; d],
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            ffn_norm: vec![0.0; d],
            w1: Matrix::zeros(d, f),
            b1: vec![0.0; f],
            w2: Matrix::zeros(f, d),
            b2: vec![0.0; d],
        }
    }

    fn tensors(&self) -> [&[f64]; 10] {
        [
            &self.attn_norm,
            self.wq.as_slice(),
            self.wk.as_slice(),
            self.wv.as_slice(),
            self.wo.as_slice(),
            &self.ffn_norm,
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            &mut self.attn_norm,
            self.wq.as_mut_slice(),
            self.wk.as_mut_slice(),
            self.wv.as_mut_slice(),
            self.wo.as_mut_slice(),
            &mut self.ffn_norm,
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }
}

const LAYER_TENSOR_NAMES: [&str; 10] = [
    "attn_norm",
    "wq",
    "wk",
    "wv",
    "wo",
    "ffn_norm",
    "w1",
    "b1",
    "w2",
    "b2",
];

impl TransformerModel {
    /// Seeded initialization; the same config always yields identical weights.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut gauss = |rows: usize, cols: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            Matrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
        };
        let embedding = Embedding {
            tokens: gauss(v, d, 0.5),
            positions: gauss(config.max_seq, d, 0.1),
        };
        let proj = 1.0 / (d as f64).sqrt();
        let resid = proj / (2.0 * config.n_layers as f64).sqrt();
        let layers = (0..config.n_layers)
            .map(|_| {
                Arc::new(LayerWeights {
                    attn_norm: vec![1.0; d],
                    wq: gauss(d, d, proj),
                    wk: gauss(d, d, proj),
                    wv: gauss(d, d, proj),
                    wo: gauss(d, d, resid),
                    ffn_norm: vec![1.0; d],
                    w1: gauss(d, f, proj),
                    b1: vec![0.0; f],
                    w2: gauss(
                        f,
                        d,
                        1.0 / (f as f64).sqrt() / (2.0 * config.n_layers as f64).sqrt(),
                    ),
                    b2: vec![0.0; d],
                })
            })
            .collect();
        let output = OutputHead {
            norm: vec![1.0; d],
            lm_head: gauss(d, v, proj),
        };
        Ok(Self {
            config,
            embedding: Arc::new(embedding),
            layers,
            output: Arc::new(output),
        })
    }

    /// A model of the same shape with every weight zero (gradient buffers).
    pub fn zeros_like(&self) -> Self {
        let cfg = &self.config;
        Self {
            config: *cfg,
            embedding: Arc::new(Embedding {
                tokens: Matrix::zeros(cfg.vocab_size, cfg.d_model),
                positions: Matrix::zeros(cfg.max_seq, cfg.d_model),
            }),
            layers: (0..cfg.n_layers)
                .map(|_| Arc::new(LayerWeights::zeros(cfg)))
                .collect(),
            output: Arc::new(OutputHead {
                norm: vec![0.0; cfg.d_model],
                lm_head: Matrix::zeros(cfg.d_model, cfg.vocab_size),
            }),
        }
    }

    /// Every weight tensor in canonical order, with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("embedding.tokens".into(), self.embedding.tokens.as_slice()),
            (
                "embedding.positions".into(),
                self.embedding.positions.as_slice(),
            ),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSOR_NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layers.{l}.{name}"), t));
            }
        }
        out.push(("output.norm".into(), &self.output.norm));
        out.push(("output.lm_head".into(), self.output.lm_head.as_slice()));
        out
    }

    /// Mutable view of [`named_tensors`](Self::named_tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let emb = Arc::make_mut(&mut self.embedding);
        let mut out: Vec<&mut [f64]> =
            vec![emb.tokens.as_mut_slice(), emb.positions.as_mut_slice()];
        for layer in self.layers.iter_mut() {
            out.extend(Arc::make_mut(layer).tensors_mut());
        }
        let head = Arc::make_mut(&mut self.output);
        out.push(&mut head.norm);
        out.push(head.lm_head.as_mut_slice());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Token plus positional embeddings, `d × n`.
    pub fn embed(&self, tokens: &[TokenId]) -> Result<Matrix, ModelError> {
        Ok(embed_rows(&self.config, &self.embedding, tokens)?.transpose())
    }

    /// Applies layers `range` in order to a `d × n` hidden state.
    pub fn forward_layers(&self, range: Range<usize>, h: &Matrix) -> Result<Matrix, ModelError> {
        if range.start > range.end || range.end > self.config.n_layers {
            return Err(ModelError::LayerRange {
                start: range.start,
                end: range.end,
                n_layers: self.config.n_layers,
            });
        }
        run_layers(&self.config, &self.layers[range], h)
    }

    /// Final normalization and LM head: `d × n` hidden state to `vocab × n` logits.
    pub fn logits(&self, h: &Matrix) -> Result<Matrix, ModelError> {
        project_logits(&self.config, &self.output, h)
    }

    /// Monolithic forward pass from tokens to `vocab × n` logits.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Matrix, ModelError> {
        let h = self.embed(tokens)?;
        let h = self.forward_layers(0..self.config.n_layers, &h)?;
        self.logits(&h)
    }
}

pub(crate) fn check_hidden(cfg: &ModelConfig, h: &Matrix) -> Result<(), ModelError> {
    if h.rows() != cfg.d_model || h.cols() > cfg.max_seq {
        return Err(ModelError::HiddenShape {
            rows: h.rows(),
            cols: h.cols(),
            d_model: cfg.d_model,
            max_seq: cfg.max_seq,
        });
    }
    if !h.is_finite() {
        return Err(ModelError::NonFinite);
    }
    Ok(())
}

/// Embedding lookup producing `n × d` rows.
pub(crate) fn embed_rows(
    cfg: &ModelConfig,
    emb: &Embedding,
    tokens: &[TokenId],
) -> Result<Matrix, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if tokens.len() > cfg.max_seq {
        return Err(ModelError::SequenceTooLong {
            len: tokens.len(),
            max_seq: cfg.max_seq,
        });
    }
    let d = cfg.d_model;
    let mut x = Matrix::zeros(tokens.len(), d);
    for (i, &t) in tokens.iter().enumerate() {
        if t as usize >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                token: t,
                vocab_size: cfg.vocab_size,
            });
        }
        let row = x.row_mut(i);
        for ((o, &a), &b) in row
            .iter_mut()
            .zip(emb.tokens.row(t as usize))
            .zip(emb.positions.row(i))
        {
            *o = a + b;
        }
    }
    Ok(x)
}

/// Runs a contiguous slice of layers on a `d × n` hidden state.
pub(crate) fn run_layers(
    cfg: &ModelConfig,
    layers: &[Arc<LayerWeights>],
    h: &Matrix,
) -> Result<Matrix, ModelError> {
    check_hidden(cfg, h)?;
    if layers.is_empty() {
        return Ok(h.clone());
    }
    let mut x = h.transpose();
    for layer in layers {
        x = layer_forward(cfg, layer, &x).0;
    }
    Ok(x.transpose())
}

pub(crate) fn project_logits(
    cfg: &ModelConfig,
    out: &OutputHead,
    h: &Matrix,
) -> Result<Matrix, ModelError> {
    check_hidden(cfg, h)?;
    let x = h.transpose();
    let (normed, _) = rmsnorm(&x, &out.norm);
    Ok(gemm_nn(&normed, &out.lm_head).transpose())
}

/// Activations retained for the backward pass of one layer.
pub(crate) struct LayerCache {
    pub x: Matrix,
    pub inv1: Vec<f64>,
    pub a: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub probs: Vec<Matrix>,
    pub ctx: Matrix,
    pub x_mid: Matrix,
    pub inv2: Vec<f64>,
    pub b: Matrix,
    pub pre: Matrix,
    pub act: Matrix,
}

/// Row-wise RMS normalization with gain; returns the output and `1/rms` per row.
pub(crate) fn rmsnorm(x: &Matrix, gain: &[f64]) -> (Matrix, Vec<f64>) {
    let d = x.cols();
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let r = 1.0 / (dot(row, row) / d as f64 + RMS_EPS).sqrt();
        inv.push(r);
        for ((o, &xi), &g) in out.row_mut(i).iter_mut().zip(row).zip(gain) {
            *o = xi * r * g;
        }
    }
    (out, inv)
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fast_tanh(GELU_C * (x + GELU_A * x * x * x)))
}

/// `tanh` through one `exp`; about twice as fast as the libm routine.
#[inline]
fn fast_tanh(u: f64) -> f64 {
    if u.abs() > 20.0 {
        return u.signum();
    }
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = fast_tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn layer_forward(
    cfg: &ModelConfig,
    w: &LayerWeights,
    x: &Matrix,
) -> (Matrix, LayerCache) {
    let n = x.rows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, inv1) = rmsnorm(x, &w.attn_norm);
    let q = gemm_nn(&a, &w.wq);
    let k = gemm_nn(&a, &w.wk);
    let v = gemm_nn(&a, &w.wv);

    let mut ctx = Matrix::zeros(n, cfg.d_model);
    let mut probs = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let cols = head * dh..(head + 1) * dh;
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            let row = p.row_mut(i);
            let mut max = f64::NEG_INFINITY;
            for (j, slot) in row[..=i].iter_mut().enumerate() {
                let s = dot(qi, &k.row(j)[cols.clone()]) * scale;
                *slot = s;
                max = max.max(s);
            }
            let mut total = 0.0;
            for r in row[..=i].iter_mut() {
                *r = (*r - max).exp();
                total += *r;
            }
            for r in row[..=i].iter_mut() {
                *r /= total;
            }
        }
        for i in 0..n {
            let pi = p.row(i)[..=i].to_vec();
            let out = &mut ctx.row_mut(i)[cols.clone()];
            for (j, &pij) in pi.iter().enumerate() {
                for (o, &vj) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += pij * vj;
                }
            }
        }
        probs.push(p);
    }

    let attn = gemm_nn(&ctx, &w.wo);
    let mut x_mid = x.clone();
    for (o, &r) in x_mid.as_mut_slice().iter_mut().zip(attn.as_slice()) {
        *o += r;
    }

    let (b, inv2) = rmsnorm(&x_mid, &w.ffn_norm);
    let mut pre = gemm_nn(&b, &w.w1);
    for i in 0..n {
        for (p, &bias) in pre.row_mut(i).iter_mut().zip(&w.b1) {
            *p += bias;
        }
    }
    let mut act = pre.clone();
    act.as_mut_slice().iter_mut().for_each(|z| *z = gelu(*z));
    let ffn = gemm_nn(&act, &w.w2);
    let mut y = x_mid.clone();
    for i in 0..n {
        for ((o, &f), &bias) in y.row_mut(i).iter_mut().zip(ffn.row(i)).zip(&w.b2) {
            *o += f + bias;
        }
    }

    let cache = LayerCache {
        x: x.clone(),
        inv1,
        a,
        q,
        k,
        v,
        probs,
        ctx,
        x_mid,
        inv2,
        b,
        pre,
        act,
    };
    (y, cache)
}
