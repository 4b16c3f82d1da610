use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LoraTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sugd,
    AltGaGd,
    GaOnly,
    GradDiffNoChunk,
    GoldRetrain,
    Memorize,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sugd" => Ok(Method::Sugd),
            "alt_ga_gd" | "alternating" => Ok(Method::AltGaGd),
            "ga_only" | "ga" => Ok(Method::GaOnly),
            "grad_diff_no_chunk" | "graddiff" => Ok(Method::GradDiffNoChunk),
            "gold_retrain" | "gold" => Ok(Method::GoldRetrain),
            "memorize" => Ok(Method::Memorize),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    #[serde(default = "default_targets")]
    pub targets: Vec<LoraTarget>,
}

fn default_targets() -> Vec<LoraTarget> {
    vec![
        LoraTarget::Q,
        LoraTarget::K,
        LoraTarget::V,
        LoraTarget::FfIn,
        LoraTarget::FfOut,
    ]
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 16,
            alpha: 64.0,
            targets: default_targets(),
        }
    }
}

/// `Option<LoraConfig>` as either a table or `false`, since TOML has no null.
mod lora_switch {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::LoraConfig;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Switch(bool),
        On(LoraConfig),
    }

    pub fn serialize<S: Serializer>(v: &Option<LoraConfig>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(l) => Repr::On(l.clone()).serialize(s),
            None => Repr::Switch(false).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<LoraConfig>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Switch(false) => Ok(None),
            Repr::Switch(true) => Ok(Some(LoraConfig::default())),
            Repr::On(l) => Ok(Some(l)),
        }
    }
}

/// Which parameters an unlearning run may change.
#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    Full,
    Lora(LoraConfig),
    LastK(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub method: Method,
    pub chunk_size: usize,
    /// Retain samples following each forget sample.
    pub retain_ratio: usize,
    pub learning_rate: f64,
    pub epochs_per_chunk: usize,
    /// Mini-batch size for single-role phases (ascent-only and annealing).
    /// Interleaved phases always step on one `(f, r×n)` group, i.e. `n + 1` samples.
    pub effective_batch_size: usize,
    /// Adapter settings; `lora = false` in a config file switches it off.
    #[serde(with = "lora_switch")]
    pub lora: Option<LoraConfig>,
    pub last_k: Option<usize>,
    /// Annealing happens after every `round(1/λ)`-th chunk; 0 disables it.
    pub interleave: f64,
    pub anneal_fraction: f64,
    pub final_annealing: bool,
    pub anneal_learning_rate: Option<f64>,
    pub anneal_epochs: Option<usize>,
    /// Abort when the forget loss exceeds this multiple of
    /// `max(initial forget loss, ln vocab)`. Zero disables the guard.
    pub divergence_factor: f64,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            method: Method::Sugd,
            chunk_size: 16,
            retain_ratio: 7,
            learning_rate: 1e-4,
            epochs_per_chunk: 7,
            effective_batch_size: 8,
            lora: Some(LoraConfig::default()),
            last_k: None,
            interleave: 0.5,
            anneal_fraction: 0.25,
            final_annealing: false,
            anneal_learning_rate: None,
            anneal_epochs: None,
            divergence_factor: 50.0,
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be >= 1".into()));
        }
        if self.retain_ratio == 0 {
            return Err(Error::Config("retain_ratio must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(lr) = self.anneal_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(
                    "anneal_learning_rate must be positive".into(),
                ));
            }
        }
        if self.epochs_per_chunk == 0 || self.anneal_epochs == Some(0) {
            return Err(Error::Config("epoch counts must be >= 1".into()));
        }
        if self.effective_batch_size == 0 {
            return Err(Error::Config("effective_batch_size must be >= 1".into()));
        }
        if self.lora.is_some() && self.last_k.is_some() {
            return Err(Error::Config(
                "choose one of `lora` or `last_k`, not both".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.interleave) {
            return Err(Error::Config(format!(
                "interleave factor {} outside [0, 1]",
                self.interleave
            )));
        }
        if !(self.anneal_fraction > 0.0 && self.anneal_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "anneal_fraction {} outside (0, 1]",
                self.anneal_fraction
            )));
        }
        if self.divergence_factor.is_nan() || self.divergence_factor < 0.0 {
            return Err(Error::Config("divergence_factor must be >= 0".into()));
        }
        Ok(())
    }

    pub fn regime(&self) -> Regime {
        match (&self.lora, self.last_k) {
            (Some(l), _) => Regime::Lora(l.clone()),
            (None, Some(k)) => Regime::LastK(k),
            (None, None) => Regime::Full,
        }
    }

    /// Period in chunks between annealing phases, if any.
    pub fn anneal_period(&self) -> Option<usize> {
        (self.interleave > 0.0).then(|| ((1.0 / self.interleave).round() as usize).max(1))
    }

    pub fn anneal_lr(&self) -> f64 {
        self.anneal_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn anneal_epochs(&self) -> usize {
        self.anneal_epochs.unwrap_or(self.epochs_per_chunk)
    }
}

/// Plain descent used to memorize the corpus (and to retrain the gold model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorizeConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Keep training at least this long even once the target is met; deeper
    /// minima make memorized facts harder to disturb.
    pub min_epochs: usize,
    /// Required QA exact match on every trained subset.
    pub em_target: f64,
    /// Epochs between exact-match checks.
    pub check_every: usize,
    pub seed: u64,
}

impl Default for MemorizeConfig {
    fn default() -> Self {
        MemorizeConfig {
            learning_rate: 3e-3,
            batch_size: 16,
            max_epochs: 90,
            min_epochs: 0,
            em_target: 1.0,
            check_every: 5,
            seed: 0,
        }
    }
}

impl MemorizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "memorize learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.check_every == 0 {
            return Err(Error::Config(
                "memorize batch_size, max_epochs and check_every must be >= 1".into(),
            ));
        }
        if self.min_epochs > self.max_epochs {
            return Err(Error::Config(
                "memorize min_epochs exceeds max_epochs".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.em_target) {
            return Err(Error::Config("em_target outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anneal_periods() {
        let mut c = UnlearnConfig {
            interleave: 0.5,
            ..UnlearnConfig::default()
        };
        assert_eq!(c.anneal_period(), Some(2));
        c.interleave = 0.0;
        assert_eq!(c.anneal_period(), None);
        c.interleave = 0.3;
        assert_eq!(c.anneal_period(), Some(3));
        c.interleave = 1.0;
        assert_eq!(c.anneal_period(), Some(1));
    }

    #[test]
    fn validation() {
        assert!(UnlearnConfig::default().validate().is_ok());
        let both = UnlearnConfig {
            last_k: Some(1),
            ..UnlearnConfig::default()
        };
        assert!(both.validate().is_err());
        assert!(UnlearnConfig {
            chunk_size: 0,
            ..UnlearnConfig::default()
        }
        .validate()
        .is_err());
        assert!(UnlearnConfig {
            retain_ratio: 0,
            ..UnlearnConfig::default()
        }
        .validate()
        .is_err());
        assert!(UnlearnConfig {
            learning_rate: 0.0,
            ..UnlearnConfig::default()
        }
        .validate()
        .is_err());
        assert!(UnlearnConfig {
            anneal_fraction: 0.0,
            ..UnlearnConfig::default()
        }
        .validate()
        .is_err());
        assert!(UnlearnConfig {
            interleave: 1.5,
            ..UnlearnConfig::default()
        }
        .validate()
        .is_err());
        let full = UnlearnConfig {
            lora: None,
            ..UnlearnConfig::default()
        };
        assert_eq!(full.regime(), Regime::Full);
    }

    #[test]
    fn method_names() {
        assert_eq!("sugd".parse::<Method>().unwrap(), Method::Sugd);
        assert_eq!("alt-ga-gd".parse::<Method>().unwrap(), Method::AltGaGd);
        assert_eq!(
            "grad_diff_no_chunk".parse::<Method>().unwrap(),
            Method::GradDiffNoChunk
        );
        assert!("npo".parse::<Method>().is_err());
    }
}
