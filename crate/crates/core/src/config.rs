//! Run configuration (TOML) and its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::lcdn::{LcdnConfig, LcdnTrainConfig};
use crate::lgdm::{LgdmConfig, LgdmTrainConfig, SampleConfig};
pub use crate::weathersim::Pairing;
use crate::weathersim::WeatherKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of clean PNGs; toy scenes are generated when absent.
    pub clean_dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_heldout: usize,
    pub size: usize,
    pub kinds: Vec<WeatherKind>,
    pub severities: Vec<u8>,
    pub pairing: Pairing,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clean_dir: None,
            n_train: 8,
            n_heldout: 8,
            size: 64,
            kinds: WeatherKind::ALL.to_vec(),
            severities: vec![3],
            pairing: Pairing::Product,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub ks: Vec<f64>,
    /// LGDM training steps per k.
    pub steps: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            ks: vec![0.0, 1.0, 3.0, 5.0, 7.0],
            steps: 1000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub lcdn: LcdnConfig,
    pub lcdn_train: LcdnTrainConfig,
    pub lgdm: LgdmConfig,
    pub lgdm_train: LgdmTrainConfig,
    pub sample: SampleConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.lcdn.validate()?;
        self.lgdm.validate()?;
        // the wavelet bands must hold one 11x11 SSIM window
        ensure!(self.data.size >= 22 && self.data.size % 2 == 0, Config, "data.size must be even and >= 22");
        ensure!(!self.data.kinds.is_empty(), Config, "data.kinds is empty");
        ensure!(
            self.data.severities.iter().all(|s| (1..=5).contains(s)),
            Config,
            "data.severities must lie in 1..=5"
        );
        if let Some(tau) = self.sample.tau {
            ensure!(tau <= self.lgdm.timesteps, Config, "sample.tau {tau} exceeds lgdm.timesteps");
        }
        ensure!(self.ablation.ks.iter().all(|k| *k >= 0.0), Config, "ablation.ks must be nonnegative");
        Ok(())
    }

    /// Sets the top-level seed and every seed derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.lcdn_train.seed = seed;
        self.lgdm_train.seed = seed.wrapping_add(1);
        self.sample.seed = seed;
        self
    }

    /// Short hex digest of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serialises");
        hex::encode(&Sha256::digest(&canonical)[..6])
    }

    /// `sample.tau`, defaulting to `T/2`.
    pub fn tau(&self) -> usize {
        self.sample.tau.unwrap_or(self.lgdm.timesteps / 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echo_the_method() {
        let c = RunConfig::default();
        assert_eq!(c.lcdn_train.lr, 2e-4);
        assert_eq!((c.lcdn_train.adam.beta1, c.lcdn_train.adam.beta2), (0.9, 0.999));
        assert_eq!(c.lgdm_train.ema_decay, 0.995);
        assert_eq!(c.data.size, 64);
        assert_eq!(c.lgdm.timesteps, 200);
        assert_eq!(c.tau(), 100);
        assert_eq!(c.ablation.ks, vec![0.0, 1.0, 3.0, 5.0, 7.0]);
        let w = c.lcdn_train.weights;
        assert_eq!((w.eta, w.theta, w.lambda), (1.0, 0.5, 0.1));
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = RunConfig::default().with_seed(9);
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::from_toml("seed = 1\n[lcdn]\nwidth = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("width") && msg.contains("line 3"), "{msg}");
        assert!(RunConfig::from_toml("[lgdm]\ntimesteps = 1\n").is_err());
    }
}
