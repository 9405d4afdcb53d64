//! Fidelity and privacy scores: BLEU, token agreement, logit divergence,
//! singular spectra and communication cost.

mod baseline;
mod comm;
mod report;
mod spectra;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TokenId;
use crate::protocol::GenerationTrace;

pub use baseline::{noise_baseline, NoiseBaseline, NoiseSearch};
pub use comm::{affine_fit, comm_table, AffineFit, CommRow};
pub use report::{evaluate_scenario, summarize, EvalReport, PromptCase, ScenarioReport, Scores};
pub use spectra::{spectra_report, spectrum_stats, LayerSpectrum, SpectraReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("empty reference")]
    EmptyReference,
    #[error("empty trace")]
    EmptyTrace,
    #[error("trace has no logits at step {0}")]
    MissingLogits(usize),
    #[error("logit vectors differ in length: {0} vs {1}")]
    LogitLength(usize, usize),
    #[error("{0}")]
    Invalid(String),
}

/// How BLEU splits text into units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuLevel {
    #[default]
    Word,
    Char,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuOptions {
    pub level: BleuLevel,
    /// Add one to numerator and denominator of n-gram orders with no matches.
    pub smoothing: bool,
    pub max_order: usize,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            level: BleuLevel::Word,
            smoothing: true,
            max_order: 4,
        }
    }
}

impl BleuOptions {
    pub fn char_level() -> Self {
        Self {
            level: BleuLevel::Char,
            ..Self::default()
        }
    }
}

fn units(text: &str, level: BleuLevel) -> Vec<String> {
    match level {
        BleuLevel::Word => text.split_whitespace().map(str::to_string).collect(),
        BleuLevel::Char => text.chars().map(String::from).collect(),
    }
}

fn ngram_counts(units: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in units.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU in `[0, 100]` over `(candidate, reference)` pairs: clipped
/// n-gram counts and lengths are summed over the corpus before combining.
pub fn corpus_bleu(pairs: &[(&str, &str)], opts: &BleuOptions) -> Result<f64, MetricsError> {
    if opts.max_order == 0 {
        return Err(MetricsError::Invalid("max_order must be positive".into()));
    }
    let mut matches = vec![0usize; opts.max_order];
    let mut totals = vec![0usize; opts.max_order];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, reference) in pairs {
        let c = units(cand, opts.level);
        let r = units(reference, opts.level);
        if r.is_empty() {
            return Err(MetricsError::EmptyReference);
        }
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=opts.max_order {
            let rc = ngram_counts(&r, n);
            for (g, count) in ngram_counts(&c, n) {
                matches[n - 1] += count.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for (&m, &t) in matches.iter().zip(&totals) {
        let (m, t) = if m == 0 && opts.smoothing {
            (1, t + 1)
        } else {
            (m, t)
        };
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok((100.0 * bp * (log_sum / opts.max_order as f64).exp()).clamp(0.0, 100.0))
}

/// Sentence BLEU with the given options.
pub fn bleu_with(
    candidate: &str,
    reference: &str,
    opts: &BleuOptions,
) -> Result<f64, MetricsError> {
    corpus_bleu(&[(candidate, reference)], opts)
}

/// Word-level sentence BLEU, smoothed, up to 4-grams.
pub fn bleu(candidate: &str, reference: &str) -> Result<f64, MetricsError> {
    bleu_with(candidate, reference, &BleuOptions::default())
}

/// Matching positions over the longer length: the match rate on the shared
/// prefix, scaled by `min/max` length.
pub fn sequence_agreement(a: &[TokenId], b: &[TokenId]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len().max(b.len()) as f64)
}

pub fn token_agreement(a: &GenerationTrace, b: &GenerationTrace) -> Result<f64, MetricsError> {
    sequence_agreement(&a.tokens(), &b.tokens())
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// `KL(softmax(p) ‖ softmax(q))` in nats.
pub fn kl_from_logits(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::LogitLength(p.len(), q.len()));
    }
    let (lp, lq) = (log_softmax(p), log_softmax(q));
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    // Rounding can leave a tiny negative value for equal inputs.
    Ok(kl.max(0.0))
}

/// Mean per-step KL over the steps both traces have.
pub fn logit_kl(a: &GenerationTrace, b: &GenerationTrace) -> Result<f64, MetricsError> {
    let steps = a.steps.len().min(b.steps.len());
    if steps == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    let mut total = 0.0;
    for (i, (x, y)) in a.steps.iter().zip(&b.steps).enumerate() {
        if x.logits.is_empty() || y.logits.is_empty() {
            return Err(MetricsError::MissingLogits(i));
        }
        total += kl_from_logits(&x.logits, &y.logits)?;
    }
    Ok(total / steps as f64)
}

/// Fraction of `secret`'s characters (as a multiset) that occur in `text`.
pub fn char_overlap(text: &str, secret: &str) -> f64 {
    let mut pool: HashMap<char, usize> = HashMap::new();
    for c in text.chars() {
        *pool.entry(c).or_insert(0) += 1;
    }
    let total = secret.chars().count();
    if total == 0 {
        return 0.0;
    }
    let hit = secret
        .chars()
        .filter(|c| match pool.get_mut(c) {
            Some(k) if *k > 0 => {
                *k -= 1;
                true
            }
            _ => false,
        })
        .count();
    hit as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_text_scores_100() {
        assert!((bleu("a b c d e", "a b c d e").unwrap() - 100.0).abs() < 1e-9);
        let c = bleu_with("hello", "hello", &BleuOptions::char_level()).unwrap();
        assert!((c - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_text_scores_zero_without_smoothing() {
        let raw = BleuOptions {
            smoothing: false,
            ..Default::default()
        };
        assert_eq!(bleu_with("x y z w", "a b c d", &raw).unwrap(), 0.0);
        assert!(bleu("x y z w", "a b c d").unwrap() > 0.0);
    }

    #[test]
    fn the_cat_sat_by_hand() {
        // Precisions 3/3, 2/2, 1/1 and (0+1)/(0+1); brevity penalty exp(1 - 4/3).
        let expect = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
        let got = bleu("the cat sat", "the cat sat down").unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        assert!((expect - 71.653_131_057_378_9).abs() < 1e-9);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert_eq!(bleu("a", "  "), Err(MetricsError::EmptyReference));
    }

    #[test]
    fn agreement_cases() {
        assert_eq!(sequence_agreement(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(sequence_agreement(&[1, 2, 3], &[4, 5, 6]).unwrap(), 0.0);
        assert_eq!(sequence_agreement(&[1, 2], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(sequence_agreement(&[], &[1]).is_err());
    }

    #[test]
    fn kl_three_classes_by_hand() {
        // softmax(ln p) = p, so logits can be chosen as log-probabilities.
        let p = [0.5f64, 0.3, 0.2];
        let q = [0.2f64, 0.5, 0.3];
        let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
        let lq: Vec<f64> = q.iter().map(|x| x.ln() + 7.0).collect();
        let expect =
            0.5 * (0.5f64 / 0.2).ln() + 0.3 * (0.3f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.3).ln();
        assert!((kl_from_logits(&lp, &lq).unwrap() - expect).abs() < 1e-9);
        assert_eq!(kl_from_logits(&lp, &lp).unwrap(), 0.0);
        assert!(kl_from_logits(&lp, &[0.0]).is_err());
    }

    #[test]
    fn overlap_counts_multiset() {
        assert_eq!(char_overlap("abc 123", "123"), 1.0);
        assert_eq!(char_overlap("1", "11"), 0.5);
        assert_eq!(char_overlap("", "9"), 0.0);
    }
}
