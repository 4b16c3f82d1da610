use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSpec;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::model::ModelConfig;
use crate::seed::derive_seed;
use crate::unlearn::{MemorizeConfig, UnlearnConfig};

/// Everything one experiment needs. Loaded from TOML; every section is optional.
///
/// The master `seed` fully determines a run: [`PipelineConfig::resolved`]
/// overwrites the per-section seeds with values derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Refuse (rather than warn about) upstream artifacts built from a different config.
    pub strict: bool,
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub memorize: MemorizeConfig,
    pub unlearn: UnlearnConfig,
    pub eval: EvalOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            strict: false,
            corpus: CorpusSpec::default(),
            model: ModelConfig::default(),
            memorize: MemorizeConfig::default(),
            unlearn: UnlearnConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with the master seed pushed into every section.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.corpus.seed = derive_seed(self.seed, "corpus", 0);
        c.model.seed = derive_seed(self.seed, "model", 0);
        c.memorize.seed = derive_seed(self.seed, "memorize", 0);
        c.unlearn.seed = derive_seed(self.seed, "unlearn", 0);
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PipelineConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.memorize.validate()?;
        self.unlearn.validate()?;
        // vocab_size is taken from the corpus, so only the rest is checked here.
        ModelConfig {
            vocab_size: self.model.vocab_size.max(2),
            ..self.model.clone()
        }
        .validate()
    }
}

/// Reads a standalone corpus spec (TOML); absent keys take their defaults.
pub fn load_corpus_spec(path: &Path) -> Result<CorpusSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
