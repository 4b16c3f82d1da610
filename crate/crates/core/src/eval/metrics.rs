use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

/// Longest common subsequence length, two-row DP.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1 between a reference and a candidate token sequence.
pub fn rouge_l<T: PartialEq>(reference: &[T], candidate: &[T]) -> f64 {
    let lcs = lcs_len(reference, candidate);
    if lcs == 0 {
        return 0.0;
    }
    // 2PR/(P+R) with P = l/|c|, R = l/|r|, reduced to one rounding.
    (2 * lcs) as f64 / (reference.len() + candidate.len()) as f64
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Trim, collapse whitespace and casefold, then compare. Punctuation counts.
pub fn exact_match(reference: &str, candidate: &str) -> bool {
    normalize(reference) == normalize(candidate)
}

/// Probability that a random member loss is below a random non-member loss,
/// ties counting one half. Computed by sorting, `O((m + n) log(m + n))`.
pub fn mia_auc(members: &[f64], nonmembers: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Invalid(
            "membership AUC needs non-empty member and non-member losses".into(),
        ));
    }
    if members.iter().chain(nonmembers).any(|x| x.is_nan()) {
        return Err(Error::Invalid("membership AUC got a NaN loss".into()));
    }
    let mut non = nonmembers.to_vec();
    non.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let mut wins = 0.0;
    for &m in members {
        let greater = non.len() - non.partition_point(|&x| x <= m);
        let lower_or_eq = non.partition_point(|&x| x < m);
        let ties = non.len() - greater - lower_or_eq;
        wins += greater as f64 + 0.5 * ties as f64;
    }
    Ok(wins / (members.len() * non.len()) as f64)
}

pub fn mia_score(auc: f64) -> f64 {
    1.0 - 2.0 * (auc - 0.5).abs()
}

/// One task's four cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskCells {
    pub retain_rouge_l: f64,
    pub retain_em: f64,
    pub forget_rouge_l: f64,
    pub forget_em: f64,
}

/// The twelve per-task scores (three tasks × two metrics × retain/forget).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubtaskScores {
    pub t1: TaskCells,
    pub t2: TaskCells,
    pub t3: TaskCells,
}

impl SubtaskScores {
    pub fn task(&self, task: Task) -> &TaskCells {
        match task {
            Task::T1 => &self.t1,
            Task::T2 => &self.t2,
            Task::T3 => &self.t3,
        }
    }

    /// Aggregate operands: retain cells as-is, forget cells as `1 - value`.
    pub fn operands(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (i, c) in [self.t1, self.t2, self.t3].iter().enumerate() {
            out[4 * i] = c.retain_rouge_l;
            out[4 * i + 1] = c.retain_em;
            out[4 * i + 2] = 1.0 - c.forget_rouge_l;
            out[4 * i + 3] = 1.0 - c.forget_em;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for c in [self.t1, self.t2, self.t3] {
            for v in [c.retain_rouge_l, c.retain_em, c.forget_rouge_l, c.forget_em] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invalid(format!("score {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn mean_retain_em(&self) -> f64 {
        (self.t1.retain_em + self.t2.retain_em + self.t3.retain_em) / 3.0
    }

    pub fn mean_forget_em(&self) -> f64 {
        (self.t1.forget_em + self.t2.forget_em + self.t3.forget_em) / 3.0
    }

    pub fn mean_retain_rouge_l(&self) -> f64 {
        (self.t1.retain_rouge_l + self.t2.retain_rouge_l + self.t3.retain_rouge_l) / 3.0
    }

    pub fn mean_forget_rouge_l(&self) -> f64 {
        (self.t1.forget_rouge_l + self.t2.forget_rouge_l + self.t3.forget_rouge_l) / 3.0
    }
}

/// Harmonic mean of arbitrary non-negative values; 0 if any value is 0.
pub fn harmonic_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

pub fn harmonic_task_aggregate(scores: &SubtaskScores) -> f64 {
    harmonic_mean(&scores.operands())
}

pub fn final_score(hmta: f64, mia_score: f64, knowledge_score: f64) -> f64 {
    (hmta + mia_score + knowledge_score) / 3.0
}

/// Knowledge may fall to 75% of its pre-unlearning value before a run is discarded.
pub const KNOWLEDGE_GATE: f64 = 0.75;

pub fn gate_passed(knowledge: f64, pre_unlearn_knowledge: f64) -> bool {
    knowledge >= KNOWLEDGE_GATE * pre_unlearn_knowledge
}
