use serde::{Deserialize, Serialize};

use super::{
    char_overlap, corpus_bleu, logit_kl, token_agreement, AffineFit, BleuOptions, CommRow,
    MetricsError, NoiseBaseline, SpectraReport,
};
use crate::model::corpus::HeldOutPrompt;
use crate::model::Tokenizer;
use crate::protocol::{run_local_sim, GenerationTrace, PfidConfig, SimOutcome};
use crate::shard::ShardedModel;

/// A prompt with its ground-truth continuation and the private detail it carries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCase {
    pub prompt: String,
    pub reference: String,
    pub secret: String,
}

impl From<HeldOutPrompt> for PromptCase {
    fn from(p: HeldOutPrompt) -> Self {
        Self {
            prompt: p.prompt,
            reference: p.reference,
            secret: p.secret,
        }
    }
}

/// Character BLEU against the references, plus agreement and mean KL
/// against the pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bleu: f64,
    pub token_agreement: f64,
    pub mean_logit_kl: f64,
}

impl Scores {
    pub fn minus(&self, other: &Scores) -> Scores {
        Scores {
            bleu: self.bleu - other.bleu,
            token_agreement: self.token_agreement - other.token_agreement,
            mean_logit_kl: self.mean_logit_kl - other.mean_logit_kl,
        }
    }

    fn is_finite(&self) -> bool {
        self.bleu.is_finite() && self.token_agreement.is_finite() && self.mean_logit_kl.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub config: PfidConfig,
    pub prompts: usize,
    pub pipeline: Scores,
    pub local: Scores,
    pub eavesdropper_tail_only: Scores,
    pub eavesdropper_with_head: Scores,
    pub remnant: Scores,
    /// `local − eavesdropper_tail_only`.
    pub privacy_gap: Scores,
    /// `local − eavesdropper_with_head`.
    pub privacy_gap_with_head: Scores,
    /// Share of prompts where local and tail-only eavesdropper tokens differ.
    pub differing_fraction: f64,
    pub comm_up_ratio: f64,
    pub comm_down_ratio: f64,
    /// Mean character overlap between remnant text and the prompt's secret.
    pub remnant_secret_overlap: f64,
    pub remnant_empty_fraction: f64,
}

fn score(
    traces: &[&GenerationTrace],
    pipeline: &[&GenerationTrace],
    cases: &[PromptCase],
) -> Result<Scores, MetricsError> {
    let pairs: Vec<(&str, &str)> = traces
        .iter()
        .zip(cases)
        .map(|(t, c)| (t.text.as_str(), c.reference.as_str()))
        .collect();
    let bleu = corpus_bleu(&pairs, &BleuOptions::char_level())?;
    let n = traces.len() as f64;
    let mut agreement = 0.0;
    let mut kl = 0.0;
    for (t, p) in traces.iter().zip(pipeline) {
        agreement += token_agreement(t, p)?;
        kl += logit_kl(t, p)?;
    }
    Ok(Scores {
        bleu,
        token_agreement: agreement / n,
        mean_logit_kl: kl / n,
    })
}

/// Runs every prompt through the in-process simulator and scores each view.
pub fn evaluate_scenario(
    name: &str,
    model: &ShardedModel,
    tokenizer: &Tokenizer,
    config: &PfidConfig,
    cases: &[PromptCase],
) -> Result<(ScenarioReport, Vec<SimOutcome>), MetricsError> {
    if cases.is_empty() {
        return Err(MetricsError::Invalid("no prompts".into()));
    }
    let runs = cases
        .iter()
        .map(|c| run_local_sim(model, config, tokenizer, &c.prompt))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| MetricsError::Invalid(e.to_string()))?;
    let report = summarize(name, config, cases, &runs)?;
    Ok((report, runs))
}

/// Scores already-simulated runs.
pub fn summarize(
    name: &str,
    config: &PfidConfig,
    cases: &[PromptCase],
    runs: &[SimOutcome],
) -> Result<ScenarioReport, MetricsError> {
    let view = |f: fn(&SimOutcome) -> &GenerationTrace| runs.iter().map(f).collect::<Vec<_>>();
    let pipeline = view(|r| &r.pipeline);
    let local = score(&view(|r| &r.local), &pipeline, cases)?;
    let tail_only = score(&view(|r| &r.eavesdropper_tail_only), &pipeline, cases)?;
    let with_head = score(&view(|r| &r.eavesdropper_with_head), &pipeline, cases)?;
    let remnant = score(&view(|r| &r.remnant.trace), &pipeline, cases)?;
    let n = runs.len() as f64;
    let (mut up, mut down, mut base) = (0usize, 0usize, 0usize);
    for r in runs {
        up += r.local.ledger.total_up;
        down += r.local.ledger.total_down;
        base += r.local.ledger.baseline_per_direction;
    }
    let report = ScenarioReport {
        name: name.to_string(),
        config: *config,
        prompts: runs.len(),
        pipeline: score(&pipeline, &pipeline, cases)?,
        privacy_gap: local.minus(&tail_only),
        privacy_gap_with_head: local.minus(&with_head),
        local,
        eavesdropper_tail_only: tail_only,
        eavesdropper_with_head: with_head,
        remnant,
        differing_fraction: runs
            .iter()
            .filter(|r| r.local.tokens() != r.eavesdropper_tail_only.tokens())
            .count() as f64
            / n,
        comm_up_ratio: up as f64 / base.max(1) as f64,
        comm_down_ratio: down as f64 / base.max(1) as f64,
        remnant_secret_overlap: runs
            .iter()
            .zip(cases)
            .map(|(r, c)| char_overlap(&r.remnant.trace.text, &c.secret))
            .sum::<f64>()
            / n,
        remnant_empty_fraction: runs.iter().filter(|r| r.remnant.empty).count() as f64 / n,
    };
    report.check()?;
    Ok(report)
}

impl ScenarioReport {
    fn check(&self) -> Result<(), MetricsError> {
        let all = [
            &self.pipeline,
            &self.local,
            &self.eavesdropper_tail_only,
            &self.eavesdropper_with_head,
            &self.remnant,
        ];
        for s in all {
            if !s.is_finite()
                || !(0.0..=100.0).contains(&s.bleu)
                || !(0.0..=1.0).contains(&s.token_agreement)
            {
                return Err(MetricsError::Invalid(format!(
                    "scores out of range in {}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Everything an evaluation run produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// SHA-256 of the run manifest that produced this report.
    pub manifest_sha256: Option<String>,
    pub scenarios: Vec<ScenarioReport>,
    pub spectra: Option<SpectraReport>,
    pub comm: Vec<CommRow>,
    pub comm_fit: Option<AffineFit>,
    pub noise_baseline: Option<NoiseBaseline>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values are finite")
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        serde_json::from_str(text).map_err(|e| MetricsError::Invalid(e.to_string()))
    }

    /// One row per scenario and view.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:<16} {:>8} {:>9} {:>9}\n",
            "scenario", "view", "bleu", "agree", "kl"
        );
        for s in &self.scenarios {
            for (view, sc) in [
                ("pipeline", &s.pipeline),
                ("local", &s.local),
                ("eaves_tail_only", &s.eavesdropper_tail_only),
                ("eaves_with_head", &s.eavesdropper_with_head),
                ("remnant", &s.remnant),
                ("gap", &s.privacy_gap),
            ] {
                out.push_str(&format!(
                    "{:<24} {:<16} {:>8.2} {:>9.4} {:>9.4}\n",
                    s.name, view, sc.bleu, sc.token_agreement, sc.mean_logit_kl
                ));
            }
        }
        if let Some(nb) = &self.noise_baseline {
            out.push_str(&nb.to_table());
        }
        out
    }
}
