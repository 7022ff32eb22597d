//! Run configuration: model hyperparameters, training protocol, and the
//! ablation switches. Loadable from a JSON file with CLI flag overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::TextMode;
use crate::error::{Error, Result};
use crate::postproc::GapMode;
use crate::retrieval::ClassifierMode;
use crate::segmenter::CofMode;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub width: usize,
    pub heads: usize,
    /// Feed-forward hidden size as a multiple of the width.
    pub ffn_mult: usize,
    pub text_layers: usize,
    pub xmodal_layers: usize,
    pub tem_layers: usize,
    pub pem_reduce: usize,
    pub pem_hidden: usize,
    pub pem_mid: usize,
    pub bm_samples: usize,
    /// Longest scored duration in clips; `None` allows every duration.
    pub d_max: Option<usize>,
    pub max_text_len: usize,
    pub max_clips: usize,
    pub ple_enabled: bool,
    pub text_mode: TextMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 32,
            heads: 4,
            ffn_mult: 4,
            text_layers: 1,
            xmodal_layers: 2,
            tem_layers: 2,
            pem_reduce: 16,
            pem_hidden: 32,
            pem_mid: 16,
            bm_samples: 8,
            d_max: None,
            max_text_len: 64,
            max_clips: 256,
            ple_enabled: true,
            text_mode: TextMode::Learned,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub tem_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            tem_loss_weight: crate::segmenter::DEFAULT_TEM_LOSS_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub use_video: bool,
    pub use_audio: bool,
    pub use_text: bool,
    pub classifier: ClassifierMode,
    pub sga: bool,
    pub cof_mode: CofMode,
    pub gap_mode: GapMode,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            use_video: true,
            use_audio: true,
            use_text: true,
            classifier: ClassifierMode::Ensemble,
            sga: true,
            cof_mode: CofMode::Product,
            gap_mode: GapMode::Fill,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub seed: Option<u64>,
    pub threads: usize,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn validate(&self, needs_seed: bool) -> Result<()> {
        let m = &self.model;
        if m.width == 0 || m.heads == 0 || m.width % m.heads != 0 {
            return Err(Error::Config(format!(
                "width {} must be a positive multiple of heads {}",
                m.width, m.heads
            )));
        }
        if m.width % 4 != 0 {
            return Err(Error::Config(format!(
                "width {} must be divisible by the 4 inception branches",
                m.width
            )));
        }
        if m.bm_samples < 2 {
            return Err(Error::Config("bm_samples must be at least 2".into()));
        }
        if m.d_max == Some(0) {
            return Err(Error::Config("d_max must be positive when set".into()));
        }
        let a = &self.ablation;
        if !a.use_video && !a.use_audio && !a.use_text {
            return Err(Error::Config("at least one modality must stay enabled".into()));
        }
        if needs_seed && self.seed.is_none() {
            return Err(Error::Config("training requires an explicit seed".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
