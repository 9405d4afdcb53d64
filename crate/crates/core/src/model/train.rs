use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{loss, loss_and_grad};
use super::{ModelError, TokenId, Tokenizer, TransformerModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Positions per training window (each window also carries one target).
    pub block_size: usize,
    pub warmup_steps: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 3e-3,
            seed: 0,
            batch_size: 8,
            block_size: 64,
            warmup_steps: 50,
            grad_clip: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch loss at every step.
    pub losses: Vec<f64>,
    /// Loss on a fixed held-aside batch before the first update.
    pub initial_eval_loss: f64,
    /// Same batch after the last update.
    pub final_eval_loss: f64,
}

/// Windows of the token stream that always start at a line boundary, so
/// position 0 is a sentence start during training just as during generation.
pub struct WindowSampler {
    stream: Vec<TokenId>,
    line_starts: Vec<usize>,
    block: usize,
}

impl WindowSampler {
    pub fn new(corpus: &str, tokenizer: &Tokenizer, block: usize) -> Result<Self, ModelError> {
        if corpus.trim().is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let stream = tokenizer.encode(corpus)?;
        let eos = tokenizer.eos();
        let mut line_starts = vec![0];
        for (i, &t) in stream.iter().enumerate() {
            if t == eos && i + 1 < stream.len() {
                line_starts.push(i + 1);
            }
        }
        Ok(Self {
            stream,
            line_starts,
            block,
        })
    }

    /// A window of `block + 1` tokens starting at the given line; wraps around.
    pub fn window(&self, line: usize) -> Vec<TokenId> {
        let start = self.line_starts[line % self.line_starts.len()];
        (0..=self.block)
            .map(|i| self.stream[(start + i) % self.stream.len()])
            .collect()
    }

    pub fn batch<R: Rng>(&self, size: usize, rng: &mut R) -> Vec<Vec<TokenId>> {
        (0..size)
            .map(|_| self.window(rng.random_range(0..self.line_starts.len())))
            .collect()
    }
}

/// Next-token training with Adam, warmup and cosine decay.
pub fn train(
    mut model: TransformerModel,
    corpus: &str,
    tokenizer: &Tokenizer,
    cfg: &TrainConfig,
) -> Result<(TransformerModel, TrainReport), ModelError> {
    if cfg.steps == 0 {
        return Err(ModelError::InvalidConfig("steps must be at least 1".into()));
    }
    if tokenizer.vocab_size() > model.config.vocab_size {
        return Err(ModelError::InvalidConfig(format!(
            "tokenizer has {} symbols but the model vocabulary is {}",
            tokenizer.vocab_size(),
            model.config.vocab_size
        )));
    }
    let block = cfg.block_size.min(model.config.max_seq);
    let sampler = WindowSampler::new(corpus, tokenizer, block)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval_batch = sampler.batch(
        cfg.batch_size.max(8),
        &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE7A1),
    );
    let initial_eval_loss = loss(&model, &eval_batch)?;

    let mut adam = Adam::new(&model);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sampler.batch(cfg.batch_size, &mut rng);
        let (batch_loss, mut grads) = loss_and_grad(&model, &batch)?;
        if !batch_loss.is_finite() {
            return Err(ModelError::NonFinite);
        }
        losses.push(batch_loss);
        clip(&mut grads, cfg.grad_clip);
        adam.step(&mut model, &grads, learning_rate(cfg, step));
    }
    let final_eval_loss = loss(&model, &eval_batch)?;
    Ok((
        model,
        TrainReport {
            losses,
            initial_eval_loss,
            final_eval_loss,
        },
    ))
}

fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    let warmup = cfg.warmup_steps.min(cfg.steps / 10).max(1);
    if step < warmup {
        return cfg.lr * (step + 1) as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (cfg.steps - warmup).max(1) as f64;
    let floor = 0.1 * cfg.lr;
    floor + 0.5 * (cfg.lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

fn clip(grads: &mut TransformerModel, max_norm: f64) {
    let norm = grads
        .named_tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.99;
    const EPS: f64 = 1e-8;

    fn new(model: &TransformerModel) -> Self {
        let shapes: Vec<usize> = model.named_tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut TransformerModel, grads: &TransformerModel, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let grads = grads.named_tensors();
        for (i, param) in model.tensors_mut().into_iter().enumerate() {
            let g = grads[i].1;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..param.len() {
                m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * g[j];
                v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
                param[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_and_zero_steps_rejected() {
        let tok = Tokenizer::default();
        let cfg = super::super::ModelConfig {
            n_layers: 3,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            max_seq: 16,
            ..Default::default()
        };
        let model = TransformerModel::init(cfg).unwrap();
        assert!(matches!(
            train(model.clone(), "  \n", &tok, &TrainConfig::default()),
            Err(ModelError::EmptyCorpus)
        ));
        let zero = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(train(model, "abc\n", &tok, &zero).is_err());
    }

    #[test]
    fn windows_start_at_lines() {
        let tok = Tokenizer::default();
        let s = WindowSampler::new("ab\ncd\n", &tok, 3).unwrap();
        assert_eq!(tok.decode(&s.window(1)), "cd\na");
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig {
            steps: 100,
            lr: 1.0,
            warmup_steps: 10,
            ..Default::default()
        };
        assert!(learning_rate(&cfg, 0) < learning_rate(&cfg, 9));
        assert!((learning_rate(&cfg, 10) - 1.0).abs() < 1e-12);
        assert!(learning_rate(&cfg, 99) < 0.15);
    }
}
