//! Scoring: ROUGE-L on sentence completion, exact match on question answering,
//! a loss-based membership-inference AUC, a knowledge-retention gate and the
//! combined final score.

mod metrics;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EvalType, Item, Subset, Task};
use crate::error::{Error, Result};
use crate::model::ModelState;

pub use metrics::{
    exact_match, final_score, gate_passed, harmonic_mean, harmonic_task_aggregate, lcs_len,
    mia_auc, mia_score, rouge_l, SubtaskScores, TaskCells, KNOWLEDGE_GATE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Decoding budget beyond the reference length.
    pub decode_slack: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { decode_slack: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: SubtaskScores,
    pub hmta: f64,
    pub auc: f64,
    pub mia_score: f64,
    pub knowledge_score: f64,
    pub pre_unlearn_knowledge: f64,
    pub gate_passed: bool,
    /// Mean of aggregate, MIA score and knowledge; 0 when the gate fails.
    pub final_score: f64,
    pub member_loss_mean: f64,
    pub nonmember_loss_mean: f64,
}

fn generate(state: &ModelState, item: &Item, eos: usize, opts: &EvalOptions) -> Result<Vec<usize>> {
    state.generate_greedy(
        &item.example.input,
        item.reference.len() + opts.decode_slack,
        eos,
    )
}

fn sample_em(state: &ModelState, ds: &Dataset, item: &Item, opts: &EvalOptions) -> Result<bool> {
    let out = generate(state, item, ds.vocab.eos(), opts)?;
    Ok(exact_match(&item.sample.output, &ds.vocab.decode(&out)))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean exact match over the QA samples of `items`; `None` when there are none.
pub fn qa_exact_match(
    state: &ModelState,
    ds: &Dataset,
    items: &[Item],
    opts: &EvalOptions,
) -> Result<Option<f64>> {
    let mut hits = Vec::new();
    for item in items.iter().filter(|i| i.sample.etype == EvalType::QA) {
        hits.push(if sample_em(state, ds, item, opts)? {
            1.0
        } else {
            0.0
        });
    }
    Ok((!hits.is_empty()).then(|| mean(&hits)))
}

/// Mean ROUGE-L over the SC samples of `items`; `None` when there are none.
pub fn sc_rouge_l(
    state: &ModelState,
    ds: &Dataset,
    items: &[Item],
    opts: &EvalOptions,
) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    for item in items.iter().filter(|i| i.sample.etype == EvalType::SC) {
        let out = generate(state, item, ds.vocab.eos(), opts)?;
        scores.push(rouge_l(&item.reference, &out));
    }
    Ok((!scores.is_empty()).then(|| mean(&scores)))
}

/// Exact match on the General split's questions.
pub fn knowledge_score(state: &ModelState, ds: &Dataset, opts: &EvalOptions) -> Result<f64> {
    qa_exact_match(state, ds, &ds.general, opts)?
        .ok_or_else(|| Error::Invalid("knowledge score needs general QA samples".into()))
}

fn task_items(items: &[Item], task: Task) -> Vec<Item> {
    items
        .iter()
        .filter(|i| i.sample.task == task)
        .cloned()
        .collect()
}

fn cell(value: Option<f64>, what: &str, task: Task, subset: Subset) -> Result<f64> {
    value.ok_or_else(|| {
        Error::Invalid(format!(
            "no {task:?} {} {what} samples to score",
            subset.file_stem()
        ))
    })
}

pub fn subtask_scores(
    state: &ModelState,
    ds: &Dataset,
    opts: &EvalOptions,
) -> Result<SubtaskScores> {
    let mut cells = Vec::with_capacity(3);
    for task in Task::ALL {
        let retain = task_items(&ds.retain, task);
        let forget = task_items(&ds.forget, task);
        cells.push(TaskCells {
            retain_rouge_l: cell(
                sc_rouge_l(state, ds, &retain, opts)?,
                "SC",
                task,
                Subset::Retain,
            )?,
            retain_em: cell(
                qa_exact_match(state, ds, &retain, opts)?,
                "QA",
                task,
                Subset::Retain,
            )?,
            forget_rouge_l: cell(
                sc_rouge_l(state, ds, &forget, opts)?,
                "SC",
                task,
                Subset::Forget,
            )?,
            forget_em: cell(
                qa_exact_match(state, ds, &forget, opts)?,
                "QA",
                task,
                Subset::Forget,
            )?,
        });
    }
    Ok(SubtaskScores {
        t1: cells[0],
        t2: cells[1],
        t3: cells[2],
    })
}

/// Forget samples are members, holdout samples non-members.
pub fn membership_auc(state: &ModelState, ds: &Dataset) -> Result<(f64, f64, f64)> {
    let members = state.forward_loss(&ds.examples(Subset::Forget))?;
    let nonmembers = state.forward_loss(&ds.examples(Subset::Holdout))?;
    let auc = mia_auc(&members, &nonmembers)?;
    Ok((auc, mean(&members), mean(&nonmembers)))
}

pub fn evaluate_model(
    state: &ModelState,
    ds: &Dataset,
    pre_unlearn_knowledge: f64,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    ds.require_all()?;
    let scores = subtask_scores(state, ds, opts)?;
    let hmta = harmonic_task_aggregate(&scores);
    let (auc, member_loss_mean, nonmember_loss_mean) = membership_auc(state, ds)?;
    let mia = mia_score(auc);
    let knowledge = knowledge_score(state, ds, opts)?;
    let gate = gate_passed(knowledge, pre_unlearn_knowledge);
    Ok(EvalReport {
        scores,
        hmta,
        auc,
        mia_score: mia,
        knowledge_score: knowledge,
        pre_unlearn_knowledge,
        gate_passed: gate,
        final_score: if gate {
            final_score(hmta, mia, knowledge)
        } else {
            0.0
        },
        member_loss_mean,
        nonmember_loss_mean,
    })
}
