//! Tiny decoder-only transformer language model.
//!
//! Linear weights are stored `[d_out, d_in]` and applied as `y = x·Wᵀ`, so a
//! LoRA pair `(A: [r, d_in], B: [d_out, r])` merges as `W + (alpha / r)·B·A`.

mod checkpoint;
mod lora;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, MANIFEST_FILE, WEIGHTS_FILE,
};
pub use lora::{LoraSpec, LoraTarget};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 400,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Parameter count of the base architecture (no adapters).
    pub fn base_param_count(&self) -> usize {
        let (v, d, f, s) = (self.vocab_size, self.d_model, self.d_ff, self.max_seq_len);
        let block = 2 * d + 4 * d * d + 2 * d + (f * d + f) + (d * f + d);
        v * d + s * d + self.n_layers * block + 2 * d + v * d
    }
}

/// One named tensor with its trainability flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2_g: usize,
    ln2_b: usize,
    ff_in_w: usize,
    ff_in_b: usize,
    ff_out_w: usize,
    ff_out_b: usize,
    /// `(A, B)` parameter indices per adapted matrix.
    lora: HashMap<LoraTarget, (usize, usize)>,
}

impl BlockLayout {
    fn weight(&self, target: LoraTarget) -> usize {
        match target {
            LoraTarget::Q => self.wq,
            LoraTarget::K => self.wk,
            LoraTarget::V => self.wv,
            LoraTarget::O => self.wo,
            LoraTarget::FfIn => self.ff_in_w,
            LoraTarget::FfOut => self.ff_out_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    blocks: Vec<BlockLayout>,
    lnf_g: usize,
    lnf_b: usize,
    unembed: usize,
}

/// Parameters of the model plus trainability mask and optional adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
    lora: Option<LoraSpec>,
}

/// One training/evaluation sequence: `input` is context, `output` is
/// supervised (and should end with the end-of-sequence id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

fn block_name(layer: usize, leaf: &str) -> String {
    format!("blocks.{layer}.{leaf}")
}

impl ModelState {
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (v, d, f, s, l) = (
            config.vocab_size,
            config.d_model,
            config.d_ff,
            config.max_seq_len,
            config.n_layers,
        );
        let emb_std = 0.02;
        let in_std = 1.0 / (d as f64).sqrt();
        let ff_std = 1.0 / (f as f64).sqrt();
        let resid = 1.0 / (2.0 * l as f64).sqrt();

        let mut params = Vec::new();
        let mut add = |name: String, value: Tensor| {
            params.push(Param {
                name,
                value,
                trainable: true,
            })
        };
        add("tok_emb".into(), Tensor::randn(&[v, d], emb_std, &mut rng));
        add("pos_emb".into(), Tensor::randn(&[s, d], emb_std, &mut rng));
        for layer in 0..l {
            add(block_name(layer, "ln1.g"), Tensor::filled(&[d], 1.0));
            add(block_name(layer, "ln1.b"), Tensor::zeros(&[d]));
            add(
                block_name(layer, "attn.q"),
                Tensor::randn(&[d, d], in_std, &mut rng),
            );
            add(
                block_name(layer, "attn.k"),
                Tensor::randn(&[d, d], in_std, &mut rng),
            );
            add(
                block_name(layer, "attn.v"),
                Tensor::randn(&[d, d], in_std, &mut rng),
            );
            add(
                block_name(layer, "attn.o"),
                Tensor::randn(&[d, d], in_std * resid, &mut rng),
            );
            add(block_name(layer, "ln2.g"), Tensor::filled(&[d], 1.0));
            add(block_name(layer, "ln2.b"), Tensor::zeros(&[d]));
            add(
                block_name(layer, "ff_in.w"),
                Tensor::randn(&[f, d], in_std, &mut rng),
            );
            add(block_name(layer, "ff_in.b"), Tensor::zeros(&[f]));
            add(
                block_name(layer, "ff_out.w"),
                Tensor::randn(&[d, f], ff_std * resid, &mut rng),
            );
            add(block_name(layer, "ff_out.b"), Tensor::zeros(&[d]));
        }
        add("ln_f.g".into(), Tensor::filled(&[d], 1.0));
        add("ln_f.b".into(), Tensor::zeros(&[d]));
        add("unembed".into(), Tensor::randn(&[v, d], emb_std, &mut rng));
        Self::from_parts(config, params, None)
    }

    /// Reassembles a state from named tensors, checking every tensor the
    /// architecture names exists exactly once with the right shape.
    pub(crate) fn from_parts(
        config: ModelConfig,
        params: Vec<Param>,
        lora: Option<LoraSpec>,
    ) -> Result<Self> {
        config.validate()?;
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for (i, p) in params.iter().enumerate() {
            if by_name.insert(p.name.as_str(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate tensor {}", p.name)));
            }
        }
        let (v, d, f, s) = (
            config.vocab_size,
            config.d_model,
            config.d_ff,
            config.max_seq_len,
        );
        let get = |name: &str, shape: &[usize]| -> Result<usize> {
            let idx = *by_name
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("missing tensor {name}")))?;
            if params[idx].value.shape() != shape {
                return Err(Error::shape("checkpoint", params[idx].value.shape(), shape));
            }
            Ok(idx)
        };
        let mut blocks = Vec::with_capacity(config.n_layers);
        let mut used = 0;
        for layer in 0..config.n_layers {
            let b = |leaf: &str| block_name(layer, leaf);
            let mut block = BlockLayout {
                ln1_g: get(&b("ln1.g"), &[d])?,
                ln1_b: get(&b("ln1.b"), &[d])?,
                wq: get(&b("attn.q"), &[d, d])?,
                wk: get(&b("attn.k"), &[d, d])?,
                wv: get(&b("attn.v"), &[d, d])?,
                wo: get(&b("attn.o"), &[d, d])?,
                ln2_g: get(&b("ln2.g"), &[d])?,
                ln2_b: get(&b("ln2.b"), &[d])?,
                ff_in_w: get(&b("ff_in.w"), &[f, d])?,
                ff_in_b: get(&b("ff_in.b"), &[f])?,
                ff_out_w: get(&b("ff_out.w"), &[d, f])?,
                ff_out_b: get(&b("ff_out.b"), &[d])?,
                lora: HashMap::new(),
            };
            used += 12;
            if let Some(spec) = &lora {
                for &t in &spec.targets {
                    let (d_out, d_in) = t.dims(&config);
                    let a = get(&b(&format!("{}.lora_a", t.key())), &[spec.rank, d_in])?;
                    let bb = get(&b(&format!("{}.lora_b", t.key())), &[d_out, spec.rank])?;
                    block.lora.insert(t, (a, bb));
                    used += 2;
                }
            }
            blocks.push(block);
        }
        let layout = Layout {
            tok_emb: get("tok_emb", &[v, d])?,
            pos_emb: get("pos_emb", &[s, d])?,
            blocks,
            lnf_g: get("ln_f.g", &[d])?,
            lnf_b: get("ln_f.b", &[d])?,
            unembed: get("unembed", &[v, d])?,
        };
        used += 5;
        if used != params.len() {
            return Err(Error::Invalid(format!(
                "{} tensors present but architecture names {used}",
                params.len()
            )));
        }
        Ok(ModelState {
            config,
            params,
            layout,
            lora,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn lora(&self) -> Option<&LoraSpec> {
        self.lora.as_ref()
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Mutable values for optimizers. Names, shapes and order must not change.
    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Values of one tensor, for in-place edits that keep its shape.
    pub fn param_data_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| p.value.data_mut())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Freezes everything except the last `k` blocks, the final layer norm and the unembedding.
    pub fn freeze_except_last_k(&mut self, k: usize) -> Result<()> {
        let layers = self.config.n_layers;
        if k == 0 || k > layers {
            return Err(Error::Config(format!("last-k k={k} outside 1..={layers}")));
        }
        let first = layers - k;
        for p in &mut self.params {
            p.trainable = match p.name.strip_prefix("blocks.") {
                Some(rest) => {
                    let layer: usize = rest
                        .split('.')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .expect("block tensor names carry a layer index");
                    layer >= first
                }
                None => matches!(p.name.as_str(), "ln_f.g" | "ln_f.b" | "unembed"),
            };
        }
        Ok(())
    }

    /// Records every parameter on `tape`; returns one handle per parameter.
    /// Parameters require grad only when `train` is set and they are trainable.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, train: bool) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(&p.value, i, train && p.trainable))
            .collect()
    }

    fn linear(
        &self,
        tape: &mut Tape<'_>,
        vars: &[Var],
        block: &BlockLayout,
        target: LoraTarget,
        x: Var,
    ) -> Result<Var> {
        let w = vars[block.weight(target)];
        let mut y = tape.matmul_t(x, w, false, true)?;
        if let (Some(spec), Some(&(a, b))) = (&self.lora, block.lora.get(&target)) {
            let down = tape.matmul_t(x, vars[a], false, true)?;
            let up = tape.matmul_t(down, vars[b], false, true)?;
            let scaled = tape.scale(up, spec.scaling());
            y = tape.add(y, scaled)?;
        }
        Ok(y)
    }

    /// Final normalized hidden states `[seq, d_model]` for `ids`.
    pub fn hidden(&self, tape: &mut Tape<'_>, vars: &[Var], ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Invalid("empty token sequence".into()));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::Invalid(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        let lay = &self.layout;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = tape.embed(vars[lay.tok_emb], ids)?;
        let pos = tape.embed(vars[lay.pos_emb], &positions)?;
        let mut h = tape.add(tok, pos)?;
        for block in &lay.blocks {
            let a = tape.layernorm(h, vars[block.ln1_g], vars[block.ln1_b], LN_EPS)?;
            let q = self.linear(tape, vars, block, LoraTarget::Q, a)?;
            let k = self.linear(tape, vars, block, LoraTarget::K, a)?;
            let v = self.linear(tape, vars, block, LoraTarget::V, a)?;
            let att = tape.causal_attention(q, k, v, self.config.n_heads)?;
            let o = self.linear(tape, vars, block, LoraTarget::O, att)?;
            h = tape.add(h, o)?;
            let b = tape.layernorm(h, vars[block.ln2_g], vars[block.ln2_b], LN_EPS)?;
            let up = self.linear(tape, vars, block, LoraTarget::FfIn, b)?;
            let up = tape.add_bias(up, vars[block.ff_in_b])?;
            let act = tape.gelu(up);
            let down = self.linear(tape, vars, block, LoraTarget::FfOut, act)?;
            let down = tape.add_bias(down, vars[block.ff_out_b])?;
            h = tape.add(h, down)?;
        }
        tape.layernorm(h, vars[lay.lnf_g], vars[lay.lnf_b], LN_EPS)
    }

    /// Next-token logits `[seq, vocab]` for every position of `ids`.
    pub fn logits(&self, tape: &mut Tape<'_>, vars: &[Var], ids: &[usize]) -> Result<Var> {
        let h = self.hidden(tape, vars, ids)?;
        tape.matmul_t(h, vars[self.layout.unembed], false, true)
    }

    /// Records the supervised loss of one example: mean cross-entropy over the
    /// output segment, the input segment acting as unsupervised context.
    pub fn example_loss(
        &self,
        tape: &mut Tape<'_>,
        vars: &[Var],
        example: &Example,
    ) -> Result<Var> {
        if example.output.is_empty() {
            return Err(Error::Invalid(
                "example has no supervised output tokens".into(),
            ));
        }
        if example.input.is_empty() {
            return Err(Error::Invalid("example has an empty input".into()));
        }
        let total = example.input.len() + example.output.len();
        if total > self.config.max_seq_len {
            return Err(Error::Invalid(format!(
                "sequence of {total} tokens exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        let mut ids = Vec::with_capacity(total);
        ids.extend_from_slice(&example.input);
        ids.extend_from_slice(&example.output);
        let fed = &ids[..total - 1];
        let boundary = example.input.len() - 1;
        let targets: Vec<Option<usize>> = (0..fed.len())
            .map(|t| (t >= boundary).then(|| ids[t + 1]))
            .collect();
        let logits = self.logits(tape, vars, fed)?;
        tape.cross_entropy(logits, &targets)
    }

    /// Per-example losses without gradient tracking.
    pub fn forward_loss(&self, batch: &[Example]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|ex| {
                let mut tape = Tape::new();
                let vars = self.bind(&mut tape, false);
                let loss = self.example_loss(&mut tape, &vars, ex)?;
                Ok(tape.value(loss).item())
            })
            .collect()
    }

    /// Logits for every position, as a plain tensor.
    pub fn logits_tensor(&self, ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let l = self.logits(&mut tape, &vars, ids)?;
        Ok(tape.value(l).clone())
    }

    /// Greedy argmax decoding; ties go to the lowest token id. Stops after
    /// emitting `eos` (not included in the result), after `max_new_tokens`,
    /// or when the context reaches `max_seq_len`.
    pub fn generate_greedy(
        &self,
        input: &[usize],
        max_new_tokens: usize,
        eos: usize,
    ) -> Result<Vec<usize>> {
        if input.is_empty() {
            return Err(Error::Invalid(
                "generation requires a non-empty input".into(),
            ));
        }
        let mut ids = input.to_vec();
        let mut out = Vec::new();
        let unembed = &self.params[self.layout.unembed].value;
        while out.len() < max_new_tokens && ids.len() < self.config.max_seq_len {
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, false);
            let h = self.hidden(&mut tape, &vars, &ids)?;
            let last = tape.value(h).row(ids.len() - 1);
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for tok in 0..self.config.vocab_size {
                let score: f64 = unembed.row(tok).iter().zip(last).map(|(w, x)| w * x).sum();
                if score > best_score {
                    best_score = score;
                    best = tok;
                }
            }
            if best == eos {
                break;
            }
            out.push(best);
            ids.push(best);
        }
        Ok(out)
    }
}
