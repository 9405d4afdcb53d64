use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::linalg::singular_values;
use crate::model::{TokenId, TransformerModel};

/// Tail-share and nuclear-norm summary of one layer's hidden states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrum {
    /// 0 is the embedding output; `l` is the output of layer `l - 1`.
    pub layer: usize,
    /// Singular values averaged index-wise over prompts, descending.
    pub singular_values: Vec<f64>,
    /// Share of the spectrum's mass held by the smallest `q` values.
    pub tail_share: f64,
    /// Nuclear norm, averaged over prompts.
    pub nuclear_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectraReport {
    pub q: usize,
    pub layers: Vec<LayerSpectrum>,
}

impl SpectraReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>5}  {:>12}  {:>12}\n",
            "layer",
            format!("tail{}_share", self.q),
            "nuclear"
        );
        for l in &self.layers {
            out.push_str(&format!(
                "{:>5}  {:>12.4}  {:>12.3}\n",
                l.layer, l.tail_share, l.nuclear_norm
            ));
        }
        out
    }
}

/// `(tail share of the last q values, sum)` for a descending spectrum.
pub fn spectrum_stats(sv: &[f64], q: usize) -> (f64, f64) {
    let total: f64 = sv.iter().sum();
    let tail: f64 = sv.iter().rev().take(q).sum();
    (if total > 0.0 { tail / total } else { 0.0 }, total)
}

/// Per-layer spectra over `prompts`. `q` defaults to 70% of the spectrum
/// length, the share the reference analysis uses for its tail.
pub fn spectra_report(
    model: &TransformerModel,
    prompts: &[Vec<TokenId>],
    q: Option<usize>,
) -> Result<SpectraReport, MetricsError> {
    if prompts.is_empty() {
        return Err(MetricsError::Invalid("no prompts".into()));
    }
    let invalid = |e: &dyn std::fmt::Display| MetricsError::Invalid(e.to_string());
    let d = model.config.d_model;
    let len = prompts.iter().map(|p| p.len().min(d)).max().unwrap_or(1);
    let q = q
        .unwrap_or(((0.7 * len as f64).round() as usize).max(1))
        .min(len);
    let n_layers = model.config.n_layers;
    let mut sums = vec![vec![0.0; len]; n_layers + 1];
    let mut nuclear = vec![0.0; n_layers + 1];
    for tokens in prompts {
        let mut h = model.embed(tokens).map_err(|e| invalid(&e))?;
        for l in 0..=n_layers {
            if l > 0 {
                h = model
                    .forward_layers(l - 1..l, &h)
                    .map_err(|e| invalid(&e))?;
            }
            let sv = singular_values(&h).map_err(|e| invalid(&e))?;
            nuclear[l] += sv.iter().sum::<f64>();
            for (acc, s) in sums[l].iter_mut().zip(sv) {
                *acc += s;
            }
        }
    }
    let count = prompts.len() as f64;
    let layers = sums
        .into_iter()
        .zip(nuclear)
        .enumerate()
        .map(|(layer, (sum, nuc))| {
            let sv: Vec<f64> = sum.iter().map(|s| s / count).collect();
            LayerSpectrum {
                layer,
                tail_share: spectrum_stats(&sv, q).0,
                singular_values: sv,
                nuclear_norm: nuc / count,
            }
        })
        .collect();
    Ok(SpectraReport { q, layers })
}
