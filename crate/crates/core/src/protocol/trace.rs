use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PfidConfig, ProtocolError};
use crate::linalg::Matrix;
use crate::model::{sample_next, ModelError, SamplingParams, TokenId, Tokenizer};

/// Bytes moved for one generated token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommRecord {
    pub step: usize,
    pub d: usize,
    pub n: usize,
    pub bytes_up: usize,
    pub bytes_down: usize,
}

impl CommRecord {
    /// An untruncated binary32 `d × n` state, per direction.
    pub fn baseline(&self) -> usize {
        4 * self.d * self.n
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub records: Vec<CommRecord>,
    pub total_up: usize,
    pub total_down: usize,
    /// Sum of [`CommRecord::baseline`] over records, per direction.
    pub baseline_per_direction: usize,
}

impl CommLedger {
    pub fn push(&mut self, record: CommRecord) {
        self.total_up += record.bytes_up;
        self.total_down += record.bytes_down;
        self.baseline_per_direction += record.baseline();
        self.records.push(record);
    }

    /// Upload bytes relative to sending every state uncompressed.
    pub fn up_ratio(&self) -> f64 {
        self.total_up as f64 / self.baseline_per_direction.max(1) as f64
    }

    pub fn down_ratio(&self) -> f64 {
        self.total_down as f64 / self.baseline_per_direction.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub token: TokenId,
    /// The five largest logits, highest first.
    pub top5: Vec<(TokenId, f64)>,
    /// Full last-position logits, for divergence metrics.
    pub logits: Vec<f64>,
    pub k_head: usize,
    pub k_tail: usize,
    pub bytes_up: usize,
    pub bytes_down: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub prompt: String,
    pub steps: Vec<StepRecord>,
    /// Generated continuation, without the end-of-sequence token.
    pub text: String,
    pub stopped_at_eos: bool,
    pub config: PfidConfig,
    pub seed: u64,
    pub ledger: CommLedger,
}

impl GenerationTrace {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.steps.iter().map(|s| s.token).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("traces contain only finite numbers")
    }

    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::Config(e.to_string()))
    }
}

/// What one decoding step produced besides the token.
pub(crate) struct StepOutput {
    pub logits: Vec<f64>,
    pub k_head: usize,
    pub k_tail: usize,
    pub bytes_up: usize,
    pub bytes_down: usize,
    pub comm: Option<CommRecord>,
}

impl StepOutput {
    pub fn plain(logits: Vec<f64>) -> Self {
        Self {
            logits,
            k_head: 0,
            k_tail: 0,
            bytes_up: 0,
            bytes_down: 0,
            comm: None,
        }
    }
}

/// Last column of a `vocab × n` logits matrix.
pub(crate) fn last_logits(logits: &Matrix) -> Vec<f64> {
    logits.col(logits.cols() - 1)
}

fn top5(logits: &[f64]) -> Vec<(TokenId, f64)> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.into_iter()
        .take(5)
        .map(|i| (i as TokenId, logits[i]))
        .collect()
}

/// The autoregressive loop shared by every decoding path. `step` receives the
/// step index and the current token sequence and returns next-token logits,
/// or `None` when its input is exhausted.
pub(crate) fn decode_loop(
    tokenizer: &Tokenizer,
    prompt: &str,
    config: &PfidConfig,
    max_seq: usize,
    mut step: impl FnMut(usize, &[TokenId]) -> Result<Option<StepOutput>, ProtocolError>,
) -> Result<GenerationTrace, ProtocolError> {
    let sampling: &SamplingParams = &config.sampling;
    let mut tokens = tokenizer.encode(prompt)?;
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence.into());
    }
    if tokens.len() > max_seq {
        return Err(ModelError::SequenceTooLong {
            len: tokens.len(),
            max_seq,
        }
        .into());
    }
    let prompt_len = tokens.len();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut steps = Vec::new();
    let mut ledger = CommLedger::default();
    let mut stopped_at_eos = false;
    for i in 0..sampling.max_new_tokens {
        if tokens.len() > max_seq {
            break;
        }
        let Some(out) = step(i, &tokens)? else { break };
        let token = sample_next(&out.logits, sampling, &mut rng);
        if let Some(c) = out.comm {
            ledger.push(c);
        }
        steps.push(StepRecord {
            token,
            top5: top5(&out.logits),
            logits: out.logits,
            k_head: out.k_head,
            k_tail: out.k_tail,
            bytes_up: out.bytes_up,
            bytes_down: out.bytes_down,
        });
        if token == tokenizer.eos() {
            stopped_at_eos = true;
            break;
        }
        tokens.push(token);
    }
    Ok(GenerationTrace {
        prompt: prompt.to_string(),
        steps,
        text: tokenizer.decode(&tokens[prompt_len..]),
        stopped_at_eos,
        config: *config,
        seed: sampling.seed,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_totals_are_sums() {
        let mut l = CommLedger::default();
        for (i, (up, down)) in [(10, 20), (30, 5)].into_iter().enumerate() {
            l.push(CommRecord {
                step: i,
                d: 4,
                n: 2 + i,
                bytes_up: up,
                bytes_down: down,
            });
        }
        assert_eq!((l.total_up, l.total_down), (40, 25));
        assert_eq!(l.baseline_per_direction, 4 * 4 * 2 + 4 * 4 * 3);
    }

    #[test]
    fn top5_orders_by_value_then_id() {
        let t = top5(&[0.0, 3.0, 1.0, 3.0, -1.0, 2.0, 0.5]);
        let ids: Vec<_> = t.iter().map(|x| x.0).collect();
        assert_eq!(ids, vec![1, 3, 5, 2, 6]);
    }

    #[test]
    fn loop_stops_at_eos_and_limits() {
        let tok = Tokenizer::default();
        let mut cfg = PfidConfig::degenerate(SamplingParams::greedy(10));
        let eos = tok.eos() as usize;
        let logits_for = |t: usize| {
            let mut l = vec![0.0; tok.vocab_size()];
            l[t] = 1.0;
            l
        };
        let a = tok.encode("a").unwrap()[0] as usize;
        let trace = decode_loop(&tok, "x", &cfg, 64, |i, _| {
            Ok(Some(StepOutput::plain(logits_for(if i < 3 {
                a
            } else {
                eos
            }))))
        })
        .unwrap();
        assert_eq!(trace.text, "aaa");
        assert_eq!(trace.steps.len(), 4);
        assert!(trace.stopped_at_eos);

        cfg.sampling.max_new_tokens = 2;
        let trace = decode_loop(&tok, "x", &cfg, 64, |_, _| {
            Ok(Some(StepOutput::plain(logits_for(a))))
        })
        .unwrap();
        assert_eq!(trace.text, "aa");
        assert!(!trace.stopped_at_eos);

        // The sequence never grows past max_seq.
        cfg.sampling.max_new_tokens = 50;
        let trace = decode_loop(&tok, "xy", &cfg, 5, |_, t| {
            assert!(t.len() <= 5);
            Ok(Some(StepOutput::plain(logits_for(a))))
        })
        .unwrap();
        assert_eq!(trace.text, "aaaa");
    }

    #[test]
    fn json_round_trip() {
        let tok = Tokenizer::default();
        let cfg = PfidConfig::default();
        let trace = decode_loop(&tok, "hi", &cfg, 64, |i, _| {
            Ok((i < 3)
                .then(|| StepOutput::plain((0..96).map(|x| (x as f64 * 0.37).sin()).collect())))
        })
        .unwrap();
        assert_eq!(GenerationTrace::from_json(&trace.to_json()).unwrap(), trace);
    }
}
