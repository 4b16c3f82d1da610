use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Example, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Memorize,
    /// Gradient difference over an interleaved stream.
    Interleaved,
    /// Ascent on forget samples only.
    Forget,
    /// Descent on a retain subset between forgetting phases.
    Anneal,
    FinalAnneal,
    /// Descent on retain data only.
    Retain,
}

/// One line of the training log. `timestamp` is a logical clock (optimizer
/// steps taken so far in the run) so logs are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub phase: Phase,
    pub chunk: usize,
    pub epoch: usize,
    pub forget_loss: Option<f64>,
    pub retain_loss: Option<f64>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub events: Vec<LogEvent>,
    pub steps: u64,
}

impl TrainingLog {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.events {
            text.push_str(&serde_json::to_string(e)?);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn last_forget_loss(&self) -> Option<f64> {
        self.events.iter().rev().find_map(|e| e.forget_loss)
    }
}

/// Aborts runs whose forget loss runs away. The reference is the larger of
/// the initial forget loss and `ln V` (the loss of a uniform predictor), so a
/// memorized model with near-zero initial loss does not trip it immediately.
#[derive(Debug, Clone, Copy)]
pub struct Guard {
    ceiling: Option<f64>,
}

impl Guard {
    pub fn new(factor: f64, initial_forget_loss: f64, vocab_size: usize) -> Self {
        let reference = initial_forget_loss.max((vocab_size as f64).ln());
        Guard {
            ceiling: (factor > 0.0).then_some(factor * reference),
        }
    }

    pub fn disabled() -> Self {
        Guard { ceiling: None }
    }

    pub fn ceiling(&self) -> Option<f64> {
        self.ceiling
    }

    pub fn check(&self, chunk: usize, epoch: usize, loss: f64) -> Result<()> {
        let ceiling = self.ceiling.unwrap_or(f64::INFINITY);
        if !loss.is_finite() || loss.abs() > ceiling {
            return Err(Error::Diverged {
                chunk,
                epoch,
                loss,
                ceiling,
            });
        }
        Ok(())
    }
}

/// `sign·mean(forget) + mean(retain)` recorded on `tape`. Empty roles drop out.
pub fn role_objective(
    tape: &mut Tape<'_>,
    forget: &[Var],
    retain: &[Var],
    forget_sign: f64,
) -> Result<Var> {
    if forget.is_empty() && retain.is_empty() {
        return Err(Error::Invalid("objective over an empty batch".into()));
    }
    let mut terms = Vec::with_capacity(forget.len() + retain.len());
    terms.extend(
        forget
            .iter()
            .map(|&v| (v, forget_sign / forget.len() as f64)),
    );
    terms.extend(retain.iter().map(|&v| (v, 1.0 / retain.len() as f64)));
    tape.combine(&terms)
}

/// `−mean(forget) + mean(retain)`; both roles required.
pub fn graddiff_objective(tape: &mut Tape<'_>, forget: &[Var], retain: &[Var]) -> Result<Var> {
    if forget.is_empty() || retain.is_empty() {
        return Err(Error::Invalid(
            "gradient difference needs forget and retain samples".into(),
        ));
    }
    role_objective(tape, forget, retain, -1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub forget_loss: Option<f64>,
    pub retain_loss: Option<f64>,
}

fn mean_value(tape: &Tape<'_>, vars: &[Var]) -> Option<f64> {
    (!vars.is_empty())
        .then(|| vars.iter().map(|&v| tape.value(v).item()).sum::<f64>() / vars.len() as f64)
}

/// One optimizer step on `forget_sign·L_f + L_r`, each the mean per-example loss.
pub fn objective_step(
    state: &mut ModelState,
    opt: &mut dyn Optimizer,
    forget: &[&Example],
    retain: &[&Example],
    forget_sign: f64,
) -> Result<StepStats> {
    let (grads, stats) = {
        let mut tape = Tape::new();
        let vars = state.bind(&mut tape, true);
        let fl = forget
            .iter()
            .map(|ex| state.example_loss(&mut tape, &vars, ex))
            .collect::<Result<Vec<_>>>()?;
        let rl = retain
            .iter()
            .map(|ex| state.example_loss(&mut tape, &vars, ex))
            .collect::<Result<Vec<_>>>()?;
        let loss = role_objective(&mut tape, &fl, &rl, forget_sign)?;
        let stats = StepStats {
            forget_loss: mean_value(&tape, &fl),
            retain_loss: mean_value(&tape, &rl),
        };
        (tape.backward(loss)?.into_param_grads(), stats)
    };
    opt.step(state.params_mut(), &grads)?;
    Ok(stats)
}

/// Gradient-difference update on a batch holding both roles.
pub fn graddiff_step(
    state: &mut ModelState,
    opt: &mut dyn Optimizer,
    forget: &[&Example],
    retain: &[&Example],
) -> Result<StepStats> {
    if forget.is_empty() || retain.is_empty() {
        return Err(Error::Invalid(
            "gradient difference batch needs forget and retain samples".into(),
        ));
    }
    objective_step(state, opt, forget, retain, -1.0)
}

/// Running per-epoch means of step losses.
#[derive(Debug, Default)]
pub(crate) struct EpochMeans {
    forget: (f64, usize),
    retain: (f64, usize),
}

impl EpochMeans {
    pub(crate) fn add(&mut self, s: StepStats) {
        if let Some(f) = s.forget_loss {
            self.forget.0 += f;
            self.forget.1 += 1;
        }
        if let Some(r) = s.retain_loss {
            self.retain.0 += r;
            self.retain.1 += 1;
        }
    }

    pub(crate) fn event(
        &self,
        phase: Phase,
        chunk: usize,
        epoch: usize,
        timestamp: u64,
    ) -> LogEvent {
        let m = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        LogEvent {
            phase,
            chunk,
            epoch,
            forget_loss: m(self.forget),
            retain_loss: m(self.retain),
            timestamp,
        }
    }
}
