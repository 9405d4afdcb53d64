//! Temperature, top-k and nucleus sampling over a single logits vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub max_new_tokens: usize,
    /// Pure argmax; the stochastic fields are ignored.
    pub greedy: bool,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.5,
            top_k: 50,
            max_new_tokens: 300,
            greedy: false,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            greedy: true,
            max_new_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.top_k == 0 {
            return Err("top_k must be positive".into());
        }
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be positive".into());
        }
        Ok(())
    }
}

/// Index of the largest logit; ties go to the lowest id.
pub fn argmax(logits: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

/// The distribution the sampler draws from after temperature, top-k and
/// top-p filtering, as `(token, probability)` in descending probability.
pub fn filtered_distribution(logits: &[f64], params: &SamplingParams) -> Vec<(TokenId, f64)> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(params.top_k.max(1));

    let max = logits[order[0]];
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| ((logits[i] - max) / params.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();

    let mut kept = Vec::new();
    let mut cumulative = 0.0;
    for (&i, w) in order.iter().zip(&weights) {
        let p = w / total;
        kept.push((i as TokenId, p));
        cumulative += p;
        if cumulative >= params.top_p {
            break;
        }
    }
    let mass: f64 = kept.iter().map(|(_, p)| p).sum();
    kept.iter_mut().for_each(|(_, p)| *p /= mass);
    kept
}

/// Picks the next token from the last position's logits.
pub fn sample_next<R: Rng + ?Sized>(
    logits: &[f64],
    params: &SamplingParams,
    rng: &mut R,
) -> TokenId {
    if params.greedy || params.top_k == 1 {
        return argmax(logits);
    }
    let dist = filtered_distribution(logits, params);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(t, p) in &dist {
        acc += p;
        if u < acc {
            return t;
        }
    }
    dist.last().map(|&(t, _)| t).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_picks_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = SamplingParams::greedy(10);
        assert_eq!(sample_next(&[0.1, 2.0, 0.3], &p, &mut rng), 1);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
    }

    #[test]
    fn top_k_one_is_greedy_at_any_temperature() {
        let logits = [0.5, -1.0, 0.49, 0.2];
        for temperature in [0.01, 0.7, 5.0, 100.0] {
            let p = SamplingParams {
                top_k: 1,
                temperature,
                top_p: 1.0,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..50 {
                assert_eq!(sample_next(&logits, &p, &mut rng), 0);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(SamplingParams::default().validate().is_ok());
        assert!(SamplingParams {
            top_p: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SamplingParams {
            temperature: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
