//! The JSON run configuration shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{BasicAugConfig, TcaConfig};
use crate::error::{Error, Result};
use crate::evaluation::{ProbeConfig, SynthConfig};
use crate::model::EncoderSpec;
use crate::objective::ObjectiveConfig;
use crate::sampling::SamplingConfig;
use crate::training::TrainConfig;

/// Environment variable that overrides `train.seed` and `synth.seed`.
pub const SEED_ENV: &str = "VTDL_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sampling: SamplingConfig,
    pub basic_aug: BasicAugConfig,
    pub tca: TcaConfig,
    pub model: EncoderSpec,
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub probe: ProbeConfig,
}

impl Config {
    /// Parses and validates a JSON document. Unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces both seeds, e.g. from [`SEED_ENV`] or a command-line flag.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.basic_aug.validate()?;
        self.tca.validate()?;
        self.model.validate()?;
        self.objective.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.probe.validate()?;
        let bank = self.objective.bank_size;
        if bank > 0 && self.train.batch_size > bank {
            return Err(Error::Config(format!(
                "train.batch_size {} exceeds objective.bank_size {bank}",
                self.train.batch_size
            )));
        }
        if self.tca.enable_external_mix && self.train.batch_size < 2 {
            return Err(Error::Config("external mix needs train.batch_size >= 2".into()));
        }
        if self.sampling.crop_size > self.synth.frame_size {
            return Err(Error::Config("sampling.crop_size exceeds synth.frame_size".into()));
        }
        if self.model.in_channels != 3 {
            return Err(Error::Config("model.in_channels must be 3 for the RGB pipeline".into()));
        }
        Ok(())
    }
}
