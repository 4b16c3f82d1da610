//! Stage runners: generate → memorize → unlearn → evaluate, plus sweeps.
//!
//! Every stage writes its artifacts and a [`Manifest`] into its own
//! directory. Downstream stages refuse to start without the upstream
//! manifest and warn (or, with `strict`, fail) when it is stale.

mod config;
mod manifest;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{load_corpus_spec, PipelineConfig};
pub use manifest::{config_hash, hash_dir, hash_file, sha256_hex, Manifest, MANIFEST_FILE};
pub use sweep::{
    parse_sweep_values, read_table, run_sweep, SweepParam, SweepRow, SweepValue, PLOT_FILE,
    TABLE_FILE,
};

use crate::corpus::{
    generate_corpus, read_corpus_dir, write_corpus_dir, CorpusSpec, Dataset, Subset,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, knowledge_score, EvalOptions, EvalReport};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelState};
use crate::unlearn::{
    gold_retrain, memorize, unlearn, FitOutcome, MemorizeConfig, Method, UnlearnConfig,
};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const KNOWLEDGE_FILE: &str = "knowledge.json";
pub const REPORT_FILE: &str = "report.json";

/// Knowledge score of the memorized model; the gate reference for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBaseline {
    pub knowledge_score: f64,
    pub fit: FitOutcome,
}

impl KnowledgeBaseline {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::StageOrder {
                stage: "memorize",
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Default artifact layout under one output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn memorized(&self) -> PathBuf {
        self.root.join("memorized")
    }
    pub fn unlearned(&self) -> PathBuf {
        self.root.join("unlearned")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn report(&self) -> PathBuf {
        self.eval().join(REPORT_FILE)
    }
    pub fn baseline(&self) -> PathBuf {
        self.memorized().join(KNOWLEDGE_FILE)
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }
}

/// Stage result: manifest written plus any staleness warnings.
#[derive(Debug, Clone)]
pub struct StageOutput<T> {
    pub value: T,
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct MemorizeKey<'a> {
    model: &'a ModelConfig,
    memorize: &'a MemorizeConfig,
    eval: &'a EvalOptions,
}

#[derive(Serialize)]
struct UnlearnKey<'a> {
    unlearn: &'a UnlearnConfig,
    memorize: &'a MemorizeConfig,
}

impl PipelineConfig {
    fn memorize_key(&self) -> MemorizeKey<'_> {
        MemorizeKey {
            model: &self.model,
            memorize: &self.memorize,
            eval: &self.eval,
        }
    }
}

/// Checks the corpus directory and loads it.
fn load_data(cfg: &PipelineConfig, data: &Path, warnings: &mut Vec<String>) -> Result<Dataset> {
    let m = Manifest::require(data, "gen")?;
    warnings.extend(m.check_fresh(data, &config_hash(&cfg.corpus)?, cfg.strict)?);
    Dataset::from_samples(&read_corpus_dir(data)?)
}

/// Writes a corpus generated from `spec` (seed used as given).
pub fn gen_from_spec(spec: &CorpusSpec, out: &Path) -> Result<Manifest> {
    let corpus = generate_corpus(spec)?;
    write_corpus_dir(out, &corpus.samples)?;
    let mut m = Manifest::new("gen", spec.seed, spec)?;
    m.outputs = hash_dir(out, "")?;
    m.write(out)?;
    Ok(m)
}

pub fn stage_gen(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    gen_from_spec(&cfg.corpus, out)
}

pub fn stage_memorize(
    cfg: &PipelineConfig,
    data: &Path,
    out: &Path,
) -> Result<StageOutput<KnowledgeBaseline>> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let mut warnings = Vec::new();
    let ds = load_data(&cfg, data, &mut warnings)?;
    let model_cfg = ModelConfig {
        vocab_size: ds.vocab.len(),
        ..cfg.model.clone()
    };
    let mut state = ModelState::init(model_cfg)?;
    let (log, fit) = memorize(&mut state, &ds, &cfg.memorize, &cfg.eval)?;
    let baseline = KnowledgeBaseline {
        knowledge_score: knowledge_score(&state, &ds, &cfg.eval)?,
        fit,
    };
    create_dir(out)?;
    save_checkpoint(&state, out)?;
    log.write_jsonl(&out.join(LOG_FILE))?;
    write_json(&out.join(KNOWLEDGE_FILE), &baseline)?;
    let mut m = Manifest::new("memorize", cfg.memorize.seed, &cfg.memorize_key())?;
    m.inputs = hash_dir(data, "data/")?;
    m.outputs = hash_dir(out, "")?;
    m.write(out)?;
    Ok(StageOutput {
        value: baseline,
        manifest: m,
        warnings,
    })
}

/// Unlearns from the memorized checkpoint in `model`, or retrains from
/// scratch on retain ∪ general for [`Method::GoldRetrain`].
pub fn stage_unlearn(
    cfg: &PipelineConfig,
    model: &Path,
    data: &Path,
    out: &Path,
) -> Result<StageOutput<()>> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let mut warnings = Vec::new();
    let ds = load_data(&cfg, data, &mut warnings)?;
    let upstream = Manifest::require(model, "memorize")?;
    warnings.extend(upstream.check_fresh(model, &config_hash(&cfg.memorize_key())?, cfg.strict)?);
    let memorized = load_checkpoint(model)?;
    let (state, log) = match cfg.unlearn.method {
        Method::GoldRetrain => {
            let (state, log, _) =
                gold_retrain(memorized.config().clone(), &ds, &cfg.memorize, &cfg.eval)?;
            (state, log)
        }
        _ => {
            let mut state = memorized;
            let log = unlearn(
                &mut state,
                &ds.examples(Subset::Forget),
                &ds.examples(Subset::Retain),
                &cfg.unlearn,
            )?;
            (state, log)
        }
    };
    create_dir(out)?;
    save_checkpoint(&state, out)?;
    log.write_jsonl(&out.join(LOG_FILE))?;
    // The gate reference travels with the model so `eval` can find it.
    let baseline = model.join(KNOWLEDGE_FILE);
    if baseline.exists() {
        fs::copy(&baseline, out.join(KNOWLEDGE_FILE)).map_err(|e| Error::io(&baseline, e))?;
    }
    let key = UnlearnKey {
        unlearn: &cfg.unlearn,
        memorize: &cfg.memorize,
    };
    let mut m = Manifest::new("unlearn", cfg.unlearn.seed, &key)?;
    m.inputs = hash_dir(data, "data/")?;
    m.inputs.extend(hash_dir(model, "model/")?);
    m.outputs = hash_dir(out, "")?;
    m.write(out)?;
    Ok(StageOutput {
        value: (),
        manifest: m,
        warnings,
    })
}

/// Scores the checkpoint in `model` and writes the report to `report`; the
/// report's directory also receives a manifest.
pub fn stage_eval(
    cfg: &PipelineConfig,
    model: &Path,
    data: &Path,
    baseline: &Path,
    report: &Path,
) -> Result<StageOutput<EvalReport>> {
    let cfg = cfg.resolved();
    let mut warnings = Vec::new();
    let ds = load_data(&cfg, data, &mut warnings)?;
    let base = KnowledgeBaseline::read(baseline)?;
    if !model.join(crate::model::MANIFEST_FILE).exists() {
        return Err(Error::StageOrder {
            stage: "unlearn",
            path: model.join(crate::model::MANIFEST_FILE),
        });
    }
    let state = load_checkpoint(model)?;
    let rep = evaluate_model(&state, &ds, base.knowledge_score, &cfg.eval)?;
    let dir = report
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    create_dir(dir)?;
    write_json(report, &rep)?;
    let mut m = Manifest::new("eval", cfg.seed, &cfg.eval)?;
    m.inputs = hash_dir(data, "data/")?;
    m.inputs.extend(hash_dir(model, "model/")?);
    m.inputs.insert("baseline".into(), hash_file(baseline)?);
    m.outputs.insert(
        report
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        hash_file(report)?,
    );
    m.write(dir)?;
    Ok(StageOutput {
        value: rep,
        manifest: m,
        warnings,
    })
}

/// Runs every stage under `cfg.out_dir` and returns the evaluation report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<StageOutput<EvalReport>> {
    let l = Layout::new(&cfg.out_dir);
    stage_gen(cfg, &l.data())?;
    let mem = stage_memorize(cfg, &l.data(), &l.memorized())?;
    let unl = stage_unlearn(cfg, &l.memorized(), &l.data(), &l.unlearned())?;
    let mut ev = stage_eval(cfg, &l.unlearned(), &l.data(), &l.baseline(), &l.report())?;
    let mut warnings = mem.warnings;
    warnings.extend(unl.warnings);
    warnings.append(&mut ev.warnings);
    ev.warnings = warnings;
    Ok(ev)
}

/// Plain-text summary of a report.
pub fn render_report(r: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("task  retain_rl  retain_em  forget_rl  forget_em\n");
    for (name, c) in [
        ("t1", &r.scores.t1),
        ("t2", &r.scores.t2),
        ("t3", &r.scores.t3),
    ] {
        s.push_str(&format!(
            "{name:<4}  {:>9.3}  {:>9.3}  {:>9.3}  {:>9.3}\n",
            c.retain_rouge_l, c.retain_em, c.forget_rouge_l, c.forget_em
        ));
    }
    s.push_str(&format!("task aggregate   {:.4}\n", r.hmta));
    s.push_str(&format!(
        "mia auc          {:.4} (score {:.4})\n",
        r.auc, r.mia_score
    ));
    s.push_str(&format!(
        "knowledge        {:.4} (before {:.4}, gate {})\n",
        r.knowledge_score,
        r.pre_unlearn_knowledge,
        if r.gate_passed { "passed" } else { "failed" }
    ));
    s.push_str(&format!("final score      {:.4}\n", r.final_score));
    s
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests;
