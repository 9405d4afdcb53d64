use serde::{Deserialize, Serialize};

use super::{evaluate_scenario, MetricsError, PromptCase, ScenarioReport};
use crate::model::Tokenizer;
use crate::protocol::PfidConfig;
use crate::shard::ShardedModel;

/// Search range and budget for the noise level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSearch {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub iterations: usize,
}

impl Default for NoiseSearch {
    fn default() -> Self {
        Self {
            sigma_lo: 0.25,
            sigma_hi: 8.0,
            iterations: 6,
        }
    }
}

/// SVD-only, noise-only and SVD+noise runs, with the noise level chosen so
/// the noise-only client degrades as much as the SVD-only client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBaseline {
    pub sigma: f64,
    pub svd: ScenarioReport,
    pub noise: ScenarioReport,
    pub svd_noise: ScenarioReport,
    /// `(sigma, noise-only local agreement)` for every level tried.
    pub calibration: Vec<(f64, f64)>,
}

impl NoiseBaseline {
    /// Local and tail-only eavesdropper agreement and char-BLEU per scheme.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}\n",
            "scheme", "local", "eaves", "gap", "bleu_l", "bleu_e", "gap"
        );
        for (name, r) in [
            ("svd", &self.svd),
            ("noise", &self.noise),
            ("svd+noise", &self.svd_noise),
        ] {
            out.push_str(&format!(
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8.2} {:>8.2} {:>8.2}\n",
                name,
                r.local.token_agreement,
                r.eavesdropper_tail_only.token_agreement,
                r.privacy_gap.token_agreement,
                r.local.bleu,
                r.eavesdropper_tail_only.bleu,
                r.privacy_gap.bleu
            ));
        }
        out.push_str(&format!("noise sigma {:.4}\n", self.sigma));
        out
    }
}

/// Bisects `sigma` on a log scale until the noise-only client's agreement
/// with the pipeline is closest to the SVD-only client's. Noise-only keeps
/// the SVD config's split, `Ω` and sampling but sends dense states.
pub fn noise_baseline(
    model: &ShardedModel,
    tokenizer: &Tokenizer,
    svd_config: &PfidConfig,
    cases: &[PromptCase],
    search: &NoiseSearch,
) -> Result<NoiseBaseline, MetricsError> {
    if !(search.sigma_lo > 0.0 && search.sigma_hi > search.sigma_lo) {
        return Err(MetricsError::Invalid("need 0 < sigma_lo < sigma_hi".into()));
    }
    let svd_only = PfidConfig {
        noise_sigma: 0.0,
        ..*svd_config
    };
    let (svd, _) = evaluate_scenario("svd", model, tokenizer, &svd_only, cases)?;
    let target = svd.local.token_agreement;
    let noise_at = |sigma: f64| {
        let cfg = PfidConfig {
            phead: 0.0,
            ptail: 0.0,
            bypass_svd_at_zero: true,
            noise_sigma: sigma,
            ..svd_only
        };
        evaluate_scenario("noise", model, tokenizer, &cfg, cases).map(|(r, _)| r)
    };

    let (mut lo, mut hi) = (search.sigma_lo.ln(), search.sigma_hi.ln());
    let mut tried: Vec<(f64, ScenarioReport)> = Vec::new();
    for _ in 0..search.iterations.max(1) {
        let mid = 0.5 * (lo + hi);
        let report = noise_at(mid.exp())?;
        // More noise, lower agreement: move towards the target.
        if report.local.token_agreement > target {
            lo = mid;
        } else {
            hi = mid;
        }
        tried.push((mid.exp(), report));
    }
    let (sigma, noise) = tried
        .iter()
        .min_by(|a, b| {
            let da = (a.1.local.token_agreement - target).abs();
            let db = (b.1.local.token_agreement - target).abs();
            da.total_cmp(&db)
        })
        .cloned()
        .expect("at least one level tried");
    let calibration = tried
        .iter()
        .map(|(s, r)| (*s, r.local.token_agreement))
        .collect();
    let both = PfidConfig {
        noise_sigma: sigma,
        ..svd_only
    };
    let (svd_noise, _) = evaluate_scenario("svd+noise", model, tokenizer, &both, cases)?;
    Ok(NoiseBaseline {
        sigma,
        svd,
        noise,
        svd_noise,
        calibration,
    })
}
