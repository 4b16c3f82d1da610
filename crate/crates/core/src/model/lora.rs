use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{block_name, ModelConfig, ModelState, Param};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Weight matrices a low-rank adapter can attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraTarget {
    Q,
    K,
    V,
    O,
    FfIn,
    FfOut,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 6] = [
        LoraTarget::Q,
        LoraTarget::K,
        LoraTarget::V,
        LoraTarget::O,
        LoraTarget::FfIn,
        LoraTarget::FfOut,
    ];

    pub(crate) fn key(self) -> &'static str {
        match self {
            LoraTarget::Q => "attn.q",
            LoraTarget::K => "attn.k",
            LoraTarget::V => "attn.v",
            LoraTarget::O => "attn.o",
            LoraTarget::FfIn => "ff_in.w",
            LoraTarget::FfOut => "ff_out.w",
        }
    }

    /// `(d_out, d_in)` of the adapted matrix.
    pub(crate) fn dims(self, config: &ModelConfig) -> (usize, usize) {
        let (d, f) = (config.d_model, config.d_ff);
        match self {
            LoraTarget::Q | LoraTarget::K | LoraTarget::V | LoraTarget::O => (d, d),
            LoraTarget::FfIn => (f, d),
            LoraTarget::FfOut => (d, f),
        }
    }
}

impl std::str::FromStr for LoraTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q" => Ok(LoraTarget::Q),
            "k" => Ok(LoraTarget::K),
            "v" => Ok(LoraTarget::V),
            "o" => Ok(LoraTarget::O),
            "ff_in" => Ok(LoraTarget::FfIn),
            "ff_out" => Ok(LoraTarget::FfOut),
            other => Err(Error::Config(format!("unknown LoRA target `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<LoraTarget>,
}

impl LoraSpec {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

impl ModelState {
    /// Freezes the base model and adds a trainable `(A, B)` pair to every
    /// `target` matrix of every block. `B` starts at zero, so the adapted
    /// model is initially identical to the base model.
    pub fn attach_lora(
        &mut self,
        rank: usize,
        alpha: f64,
        targets: &[LoraTarget],
        seed: u64,
    ) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::Config("a LoRA adapter is already attached".into()));
        }
        if rank == 0 {
            return Err(Error::Config("LoRA rank must be >= 1".into()));
        }
        if targets.is_empty() {
            return Err(Error::Config("LoRA target set is empty".into()));
        }
        let mut targets = targets.to_vec();
        targets.sort();
        targets.dedup();
        for &t in &targets {
            let (d_out, d_in) = t.dims(&self.config);
            if rank > d_out.min(d_in) {
                return Err(Error::Config(format!(
                    "LoRA rank {rank} exceeds min(d_in, d_out) = {} for {}",
                    d_out.min(d_in),
                    t.key()
                )));
            }
        }
        self.set_all_trainable(false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in 0..self.config.n_layers {
            for &t in &targets {
                let (d_out, d_in) = t.dims(&self.config);
                let a = Tensor::randn(&[rank, d_in], 1.0 / (d_in as f64).sqrt(), &mut rng);
                let b = Tensor::zeros(&[d_out, rank]);
                let ia = self.params.len();
                self.params.push(Param {
                    name: block_name(layer, &format!("{}.lora_a", t.key())),
                    value: a,
                    trainable: true,
                });
                self.params.push(Param {
                    name: block_name(layer, &format!("{}.lora_b", t.key())),
                    value: b,
                    trainable: true,
                });
                self.layout.blocks[layer].lora.insert(t, (ia, ia + 1));
            }
        }
        self.lora = Some(LoraSpec {
            rank,
            alpha,
            targets,
        });
        Ok(())
    }

    /// Folds `(alpha / r)·B·A` into each adapted weight and removes the adapter.
    /// Base tensors become trainable again.
    pub fn merge_lora(&mut self) -> Result<()> {
        let spec = self
            .lora
            .take()
            .ok_or_else(|| Error::Config("no LoRA adapter attached".into()))?;
        let scaling = spec.scaling();
        let r = spec.rank;
        for block in &self.layout.blocks {
            for (&t, &(ia, ib)) in &block.lora {
                let (d_out, d_in) = t.dims(&self.config);
                let a = self.params[ia].value.data().to_vec();
                let b = self.params[ib].value.data().to_vec();
                let w = self.params[block.weight(t)].value.data_mut();
                for o in 0..d_out {
                    for i in 0..d_in {
                        let mut acc = 0.0;
                        for k in 0..r {
                            acc += b[o * r + k] * a[k * d_in + i];
                        }
                        w[o * d_in + i] += scaling * acc;
                    }
                }
            }
        }
        let keep: Vec<Param> = self
            .params
            .drain(..)
            .filter(|p| !p.name.contains(".lora_"))
            .map(|mut p| {
                p.trainable = true;
                p
            })
            .collect();
        let rebuilt = ModelState::from_parts(self.config.clone(), keep, None)?;
        *self = rebuilt;
        Ok(())
    }

    /// Names of adapter tensors, grouped per layer.
    pub fn lora_param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .params
            .iter()
            .filter(|p| p.name.contains(".lora_"))
            .map(|p| p.name.clone())
            .collect();
        names.sort();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_config;
    use super::*;

    #[test]
    fn attach_is_transparent_at_init() {
        let mut state = ModelState::init(small_config()).unwrap();
        let ids = [3, 1, 4, 1, 5, 9, 2];
        let before = state.logits_tensor(&ids).unwrap();
        state.attach_lora(2, 8.0, &LoraTarget::ALL, 1).unwrap();
        let after = state.logits_tensor(&ids).unwrap();
        assert_eq!(before, after);
        assert!(state
            .params()
            .iter()
            .all(|p| p.trainable == p.name.contains(".lora_")));
    }

    #[test]
    fn rank_and_target_validation() {
        let mut state = ModelState::init(small_config()).unwrap();
        assert!(state.attach_lora(0, 1.0, &[LoraTarget::Q], 0).is_err());
        assert!(state.attach_lora(2, 1.0, &[], 0).is_err());
        assert!(state.attach_lora(9, 1.0, &[LoraTarget::Q], 0).is_err());
        // d_model 8 < d_ff 12: rank 9 also too large for the feed-forward input
        assert!(state.attach_lora(9, 1.0, &[LoraTarget::FfIn], 0).is_err());
        assert!(state.attach_lora(8, 1.0, &[LoraTarget::FfIn], 0).is_ok());
        assert!(state.attach_lora(2, 1.0, &[LoraTarget::Q], 0).is_err());
    }

    #[test]
    fn merge_reproduces_adapted_logits() {
        let mut state = ModelState::init(small_config()).unwrap();
        state
            .attach_lora(
                3,
                12.0,
                &[LoraTarget::Q, LoraTarget::V, LoraTarget::FfOut],
                4,
            )
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for p in state.params_mut() {
            if p.name.ends_with("lora_b") {
                p.value = Tensor::randn(p.value.shape(), 0.1, &mut rng);
            }
        }
        let ids = [2, 7, 1, 8, 2, 8];
        let adapted = state.logits_tensor(&ids).unwrap();
        state.merge_lora().unwrap();
        assert!(state.lora().is_none());
        let merged = state.logits_tensor(&ids).unwrap();
        for (a, b) in adapted.data().iter().zip(merged.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn target_parsing() {
        assert_eq!("ff_in".parse::<LoraTarget>().unwrap(), LoraTarget::FfIn);
        assert_eq!("Q".parse::<LoraTarget>().unwrap(), LoraTarget::Q);
        assert!("proj".parse::<LoraTarget>().is_err());
    }
}
