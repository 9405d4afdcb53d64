use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::model::SamplingParams;
use crate::shard::ShardSpec;

/// Protocol knobs shared by client and server.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfidConfig {
    #[serde(flatten)]
    pub spec: ShardSpec,
    /// Weight of the locally retained head output in re-privatization.
    pub omega: f64,
    /// Fraction of singular components discarded on the upload.
    pub phead: f64,
    /// Fraction discarded on the download.
    pub ptail: f64,
    pub sampling: SamplingParams,
    /// At a zero ratio, send the dense binary64 state instead of a full-rank SVD.
    pub bypass_svd_at_zero: bool,
    /// Standard deviation of Gaussian noise the server adds to the received
    /// head state; 0 disables it.
    pub noise_sigma: f64,
    /// Seeds the per-step SVD sketches and noise draws.
    pub seed: u64,
}

impl Default for PfidConfig {
    fn default() -> Self {
        Self {
            spec: ShardSpec::default(),
            omega: 1.0,
            phead: 0.65,
            ptail: 0.75,
            sampling: SamplingParams::default(),
            bypass_svd_at_zero: true,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PfidConfig {
    /// No truncation, no re-privatization, no noise: plain split inference.
    pub fn degenerate(sampling: SamplingParams) -> Self {
        Self {
            omega: 0.0,
            phead: 0.0,
            ptail: 0.0,
            sampling,
            bypass_svd_at_zero: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |msg: String| Err(ProtocolError::Config(msg));
        for (name, p) in [("phead", self.phead), ("ptail", self.ptail)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return bad(format!(
                "omega must be finite and nonnegative, got {}",
                self.omega
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be finite and nonnegative, got {}",
                self.noise_sigma
            ));
        }
        self.sampling.validate().map_err(ProtocolError::Config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ProtocolError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ProtocolError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are plain scalars")
    }
}

/// Seed for one step and channel, so every packet gets its own sketch.
pub(crate) fn step_seed(base: u64, step: usize, channel: u64) -> u64 {
    // splitmix64 finalizer over the packed inputs.
    let mut z = base ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ channel.rotate_left(48);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const CHANNEL_UP: u64 = 1;
pub(crate) const CHANNEL_DOWN: u64 = 2;
pub(crate) const CHANNEL_NOISE: u64 = 3;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = PfidConfig {
            omega: 0.5,
            noise_sigma: 0.25,
            ..Default::default()
        };
        let text = cfg.to_toml();
        assert!(text.contains("split_k = 3"));
        assert!(text.contains("[sampling]"));
        assert_eq!(PfidConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = PfidConfig::from_toml("omega = 2.0\n[sampling]\ngreedy = true\n").unwrap();
        assert_eq!(cfg.omega, 2.0);
        assert_eq!(cfg.phead, 0.65);
        assert!(cfg.sampling.greedy);
        assert_eq!(cfg.sampling.top_k, 50);
    }

    #[test]
    fn out_of_range_values_rejected() {
        for text in [
            "phead = 1.0",
            "ptail = -0.1",
            "omega = -1.0",
            "noise_sigma = -2.0",
            "[sampling]\ntop_p = 0.0",
        ] {
            assert!(
                matches!(PfidConfig::from_toml(text), Err(ProtocolError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn step_seeds_differ() {
        let a = step_seed(7, 0, CHANNEL_UP);
        assert_ne!(a, step_seed(7, 1, CHANNEL_UP));
        assert_ne!(a, step_seed(7, 0, CHANNEL_DOWN));
        assert_ne!(a, step_seed(8, 0, CHANNEL_UP));
    }
}
