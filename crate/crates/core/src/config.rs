//! Run configuration file (TOML).
//!
//! ```toml
//! seed = 7                 # required
//! data_dir = "data"        # dataset directory, relative to this file
//! out_dir = "runs/a"       # run directory, relative to this file
//!
//! [synth]   # synthetic data generation
//! [model]   # network shape
//! [augment] # intensity augmentation ranges
//! [pairing] # training-pair policy
//! [trainer] # strategy and schedule
//! [eval]    # evaluation options
//! ```
//!
//! Unknown keys are rejected in every section. Command-line flags override
//! the file, which overrides the defaults; `POPCORN_SEED` overrides the seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::io::Format;
use crate::nn::ModelConfig;
use crate::pairing::PairPolicy;
use crate::synth::SynthConfig;
use crate::trainer::TrainerConfig;

pub const SEED_ENV: &str = "POPCORN_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_format")]
    pub format: Format,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub pairing: PairPolicy,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_format() -> Format {
    Format::RawTensor
}

impl RunConfig {
    /// Defaults for every section with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        let mut c = Self {
            seed,
            data_dir: default_data_dir(),
            out_dir: default_out_dir(),
            format: default_format(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            pairing: PairPolicy::default(),
            trainer: TrainerConfig::default(),
            eval: EvalConfig::default(),
        };
        c.trainer.seed = seed;
        c
    }

    /// Parse and validate. Relative paths are kept as written.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| {
            let field = if e.message().contains("missing field `seed`") {
                "seed"
            } else {
                "config"
            };
            Error::config(field, e.to_string())
        })?;
        c.trainer.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    /// Read a file, apply the seed environment override, and resolve relative
    /// paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse(&text)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config(SEED_ENV, format!("not an unsigned integer: {v:?}")))?;
            c.set_seed(seed);
        }
        let base = path.parent().unwrap_or(Path::new(""));
        c.data_dir = base.join(&c.data_dir);
        c.out_dir = base.join(&c.out_dir);
        Ok(c)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.trainer.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.augment.validate()?;
        self.pairing.validate()?;
        self.trainer.validate()?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::config("eval.threshold", "must lie in (0, 1)"));
        }
        if self.model.dims as usize != self.synth.image_size.len() {
            return Err(Error::config(
                "model.dims",
                format!("synth.image_size has {} axes", self.synth.image_size.len()),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
