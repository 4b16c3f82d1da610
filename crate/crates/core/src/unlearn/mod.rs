//! Memorization, gold retraining and the unlearning methods: sequential
//! chunked gradient difference, alternating ascent/annealing, and the
//! unchunked ascent and gradient-difference baselines.

mod config;
mod optim;
mod plan;
mod train;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Subset};
use crate::error::{Error, Result};
use crate::eval::{qa_exact_match, EvalOptions};
use crate::model::{Example, ModelConfig, ModelState};
use crate::seed::derive_seed;

pub use config::{LoraConfig, MemorizeConfig, Method, Regime, UnlearnConfig};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub use plan::{build_chunk_plan, partition_forget, plan_all, ChunkPlan, Role};
pub use train::{
    graddiff_objective, graddiff_step, objective_step, role_objective, Guard, LogEvent, Phase,
    StepStats, TrainingLog,
};

use train::EpochMeans;

/// Sets the trainability mask for the configured regime, attaching a fresh
/// adapter for LoRA.
pub fn apply_regime(state: &mut ModelState, cfg: &UnlearnConfig) -> Result<()> {
    match cfg.regime() {
        Regime::Full => {
            state.set_all_trainable(true);
            Ok(())
        }
        Regime::LastK(k) => state.freeze_except_last_k(k),
        Regime::Lora(l) => state.attach_lora(
            l.rank,
            l.alpha,
            &l.targets,
            derive_seed(cfg.seed, "lora", 0),
        ),
    }
}

fn guard_for(state: &ModelState, forget: &[Example], cfg: &UnlearnConfig) -> Result<Guard> {
    if cfg.divergence_factor == 0.0 {
        return Ok(Guard::disabled());
    }
    let losses = state.forward_loss(forget)?;
    let initial = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(Guard::new(
        cfg.divergence_factor,
        initial,
        state.config().vocab_size,
    ))
}

fn require_sets(forget: &[Example], retain: &[Example]) -> Result<()> {
    if forget.is_empty() {
        return Err(Error::Invalid("forget set is empty".into()));
    }
    if retain.is_empty() {
        return Err(Error::Invalid("retain set is empty".into()));
    }
    Ok(())
}

/// Gradient difference over interleaved chunk streams, one fresh trainer per
/// chunk. `on_trainer` sees every trainer before its first step.
fn run_interleaved(
    state: &mut ModelState,
    forget: &[Example],
    retain: &[Example],
    cfg: &UnlearnConfig,
    chunk_size: usize,
    on_trainer: &mut dyn FnMut(&ChunkPlan, &Adam),
) -> Result<TrainingLog> {
    require_sets(forget, retain)?;
    let guard = guard_for(state, forget, cfg)?;
    let mut log = TrainingLog::default();
    for plan in plan_all(forget.len(), retain.len(), chunk_size, cfg.retain_ratio)? {
        let steps = cfg.epochs_per_chunk * plan.groups().count();
        let mut opt = Adam::new(AdamConfig::with_lr(cfg.learning_rate), steps)?;
        on_trainer(&plan, &opt);
        for epoch in 0..cfg.epochs_per_chunk {
            let mut means = EpochMeans::default();
            for group in plan.groups() {
                let f: Vec<&Example> = group
                    .iter()
                    .filter(|e| e.1 == Role::Forget)
                    .map(|e| &forget[e.0])
                    .collect();
                let r: Vec<&Example> = group
                    .iter()
                    .filter(|e| e.1 == Role::Retain)
                    .map(|e| &retain[e.0])
                    .collect();
                let s = graddiff_step(state, &mut opt, &f, &r)?;
                log.steps += 1;
                guard.check(plan.chunk_index, epoch, s.forget_loss.unwrap_or(0.0))?;
                means.add(s);
            }
            log.events
                .push(means.event(Phase::Interleaved, plan.chunk_index, epoch, log.steps));
        }
    }
    Ok(log)
}

/// Sequential unlearning with gradient difference over forget chunks.
pub fn run_sugd(
    state: &mut ModelState,
    forget: &[Example],
    retain: &[Example],
    cfg: &UnlearnConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    run_interleaved(state, forget, retain, cfg, cfg.chunk_size, &mut |_, _| {})
}

/// As [`run_sugd`], reporting each chunk's trainer before its first step.
pub fn run_sugd_observed(
    state: &mut ModelState,
    forget: &[Example],
    retain: &[Example],
    cfg: &UnlearnConfig,
    on_trainer: &mut dyn FnMut(&ChunkPlan, &Adam),
) -> Result<TrainingLog> {
    cfg.validate()?;
    run_interleaved(state, forget, retain, cfg, cfg.chunk_size, on_trainer)
}

/// Gradient difference over one stream built from the whole forget set.
pub fn run_graddiff_no_chunk(
    state: &mut ModelState,
    forget: &[Example],
    retain: &[Example],
    cfg: &UnlearnConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    run_interleaved(
        state,
        forget,
        retain,
        cfg,
        forget.len().max(1),
        &mut |_, _| {},
    )
}

struct PhaseSpec {
    phase: Phase,
    chunk: usize,
    lr: f64,
    epochs: usize,
    batch: usize,
    forget_sign: Option<f64>,
}

/// Mini-batched single-role training over `data` in order, one fresh trainer.
/// With `forget_sign` set the data is treated as forget samples.
fn single_role_phase(
    state: &mut ModelState,
    data: &[&Example],
    spec: PhaseSpec,
    guard: &Guard,
    log: &mut TrainingLog,
) -> Result<()> {
    let batches: Vec<&[&Example]> = data.chunks(spec.batch).collect();
    let mut opt = Adam::new(AdamConfig::with_lr(spec.lr), spec.epochs * batches.len())?;
    for epoch in 0..spec.epochs {
        let mut means = EpochMeans::default();
        for b in &batches {
            let s = match spec.forget_sign {
                Some(sign) => objective_step(state, &mut opt, b, &[], sign)?,
                None => objective_step(state, &mut opt, &[], b, 1.0)?,
            };
            log.steps += 1;
            if let Some(f) = s.forget_loss {
                guard.check(spec.chunk, epoch, f)?;
            }
            means.add(s);
        }
        log.events
            .push(means.event(spec.phase, spec.chunk, epoch, log.steps));
    }
    Ok(())
}

/// Alternating gradient ascent on forget chunks with periodic descent on a
/// sampled retain subset, and an optional final pass on the whole retain set.
pub fn run_alternating(
    state: &mut ModelState,
    forget: &[Example],
    retain: &[Example],
    cfg: &UnlearnConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    require_sets(forget, retain)?;
    let guard = guard_for(state, forget, cfg)?;
    let mut log = TrainingLog::default();
    let anneal_size =
        ((cfg.anneal_fraction * retain.len() as f64).ceil() as usize).clamp(1, retain.len());
    for (i, chunk) in partition_forget(forget.len(), cfg.chunk_size)?
        .into_iter()
        .enumerate()
    {
        let data: Vec<&Example> = forget[chunk].iter().collect();
        let spec = PhaseSpec {
            phase: Phase::Forget,
            chunk: i,
            lr: cfg.learning_rate,
            epochs: cfg.epochs_per_chunk,
            batch: cfg.effective_batch_size,
            forget_sign: Some(-1.0),
        };
        single_role_phase(state, &data, spec, &guard, &mut log)?;
        if cfg.anneal_period().is_some_and(|p| (i + 1) % p == 0) {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "anneal", i as u64));
            let picked = rand::seq::index::sample(&mut rng, retain.len(), anneal_size);
            let subset: Vec<&Example> = picked.iter().map(|j| &retain[j]).collect();
            let spec = PhaseSpec {
                phase: Phase::Anneal,
                chunk: i,
                lr: cfg.anneal_lr(),
                epochs: cfg.anneal_epochs(),
                batch: cfg.effective_batch_size,
                forget_sign: None,
            };
            single_role_phase(state, &subset, spec, &guard, &mut log)?;
        }
    }
    if cfg.final_annealing {
        let all: Vec<&Example> = retain.iter().collect();
        let spec = PhaseSpec {
            phase: Phase::FinalAnneal,
            chunk: 0,
            lr: cfg.anneal_lr(),
            epochs: cfg.anneal_epochs(),
            batch: cfg.effective_batch_size,
            forget_sign: None,
        };
        single_role_phase(state, &all, spec, &guard, &mut log)?;
    }
    Ok(log)
}

/// Gradient ascent on the whole forget set with a single trainer.
pub fn run_ga_only(
    state: &mut ModelState,
    forget: &[Example],
    cfg: &UnlearnConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if forget.is_empty() {
        return Err(Error::Invalid("forget set is empty".into()));
    }
    let guard = guard_for(state, forget, cfg)?;
    let mut log = TrainingLog::default();
    let data: Vec<&Example> = forget.iter().collect();
    let spec = PhaseSpec {
        phase: Phase::Forget,
        chunk: 0,
        lr: cfg.learning_rate,
        epochs: cfg.epochs_per_chunk,
        batch: cfg.effective_batch_size,
        forget_sign: Some(-1.0),
    };
    single_role_phase(state, &data, spec, &guard, &mut log)?;
    Ok(log)
}

/// Validates `cfg`, applies its regime and runs its unlearning method.
pub fn unlearn(
    state: &mut ModelState,
    forget: &[Example],
    retain: &[Example],
    cfg: &UnlearnConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    apply_regime(state, cfg)?;
    match cfg.method {
        Method::Sugd => run_sugd(state, forget, retain, cfg),
        Method::AltGaGd => run_alternating(state, forget, retain, cfg),
        Method::GaOnly => run_ga_only(state, forget, cfg),
        Method::GradDiffNoChunk => run_graddiff_no_chunk(state, forget, retain, cfg),
        Method::GoldRetrain | Method::Memorize => Err(Error::Config(format!(
            "{:?} trains from data rather than unlearning; use the memorize stage",
            cfg.method
        ))),
    }
}

/// Exact match per trained subset after a fitting run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitOutcome {
    pub epochs: usize,
    pub em: Vec<(Subset, f64)>,
}

fn fit(
    state: &mut ModelState,
    ds: &Dataset,
    subsets: &[Subset],
    cfg: &MemorizeConfig,
    opts: &EvalOptions,
) -> Result<(TrainingLog, FitOutcome)> {
    cfg.validate()?;
    let data: Vec<&Example> = subsets
        .iter()
        .flat_map(|&s| ds.get(s).iter().map(|i| &i.example))
        .collect();
    if data.is_empty() {
        return Err(Error::Invalid("nothing to train on".into()));
    }
    state.set_all_trainable(true);
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let mut opt = Adam::new(
        AdamConfig::with_lr(cfg.learning_rate),
        cfg.max_epochs * per_epoch,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "memorize", 0));
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut em = Vec::new();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut means = EpochMeans::default();
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| data[i]).collect();
            means.add(objective_step(state, &mut opt, &[], &batch, 1.0)?);
            log.steps += 1;
        }
        log.events
            .push(means.event(Phase::Memorize, 0, epoch, log.steps));
        let done = epoch + 1;
        if (done % cfg.check_every == 0 && done >= cfg.min_epochs) || done == cfg.max_epochs {
            em.clear();
            for &s in subsets {
                let v = qa_exact_match(state, ds, ds.get(s), opts)?.unwrap_or(1.0);
                em.push((s, v));
            }
            if em.iter().all(|&(_, v)| v >= cfg.em_target) {
                return Ok((log, FitOutcome { epochs: done, em }));
            }
        }
    }
    let detail: Vec<String> = em
        .iter()
        .map(|(s, v)| format!("{} {v:.3}", s.file_stem()))
        .collect();
    Err(Error::Memorization(format!(
        "exact match target {} not reached within {} epochs ({})",
        cfg.em_target,
        cfg.max_epochs,
        detail.join(", ")
    )))
}

/// Descent on retain ∪ forget ∪ general until every subset's QA exact match
/// reaches the target.
pub fn memorize(
    state: &mut ModelState,
    ds: &Dataset,
    cfg: &MemorizeConfig,
    opts: &EvalOptions,
) -> Result<(TrainingLog, FitOutcome)> {
    fit(
        state,
        ds,
        &[Subset::Retain, Subset::Forget, Subset::General],
        cfg,
        opts,
    )
}

/// A fresh model trained on retain ∪ general only.
pub fn gold_retrain(
    config: ModelConfig,
    ds: &Dataset,
    cfg: &MemorizeConfig,
    opts: &EvalOptions,
) -> Result<(ModelState, TrainingLog, FitOutcome)> {
    let mut state = ModelState::init(config)?;
    let (log, outcome) = fit(
        &mut state,
        ds,
        &[Subset::Retain, Subset::General],
        cfg,
        opts,
    )?;
    Ok((state, log, outcome))
}
