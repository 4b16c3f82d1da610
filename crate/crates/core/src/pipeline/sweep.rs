use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{stage_eval, stage_unlearn, PipelineConfig, KNOWLEDGE_FILE, REPORT_FILE};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::unlearn::Method;

pub const TABLE_FILE: &str = "sweep.csv";
pub const PLOT_FILE: &str = "sweep.dat";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    ChunkSize,
    EpochsPerChunk,
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "chunk_size" | "chunk" => Ok(SweepParam::ChunkSize),
            "epochs_per_chunk" | "epochs" => Ok(SweepParam::EpochsPerChunk),
            _ => Err(Error::Config(format!(
                "cannot sweep `{s}`; use chunk_size or epochs_per_chunk"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepValue {
    Value(usize),
    /// The whole forget set as one chunk (gradient difference without chunking).
    NoChunk,
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Value(v) => write!(f, "{v}"),
            SweepValue::NoChunk => f.write_str("no-chunk"),
        }
    }
}

/// Parses `8,16,32,no-chunk`.
pub fn parse_sweep_values(text: &str) -> Result<Vec<SweepValue>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "no-chunk" | "no_chunk" | "none" => Ok(SweepValue::NoChunk),
            _ => s
                .parse::<usize>()
                .map(SweepValue::Value)
                .map_err(|_| Error::Config(format!("bad sweep value `{s}`"))),
        })
        .collect()
}

/// One point of a sweep. Metric columns are empty when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub status: String,
    pub hmta: Option<f64>,
    pub mia_score: Option<f64>,
    pub auc: Option<f64>,
    pub knowledge: Option<f64>,
    pub final_score: Option<f64>,
    pub gate_passed: Option<bool>,
    pub retain_em: Option<f64>,
    pub forget_em: Option<f64>,
    pub retain_rouge_l: Option<f64>,
}

impl SweepRow {
    fn ok(value: String, r: &EvalReport) -> Self {
        SweepRow {
            value,
            status: "ok".into(),
            hmta: Some(r.hmta),
            mia_score: Some(r.mia_score),
            auc: Some(r.auc),
            knowledge: Some(r.knowledge_score),
            final_score: Some(r.final_score),
            gate_passed: Some(r.gate_passed),
            retain_em: Some(r.scores.mean_retain_em()),
            forget_em: Some(r.scores.mean_forget_em()),
            retain_rouge_l: Some(r.scores.mean_retain_rouge_l()),
        }
    }

    fn failed(value: String, e: &Error) -> Self {
        SweepRow {
            value,
            status: format!("failed: {e}"),
            hmta: None,
            mia_score: None,
            auc: None,
            knowledge: None,
            final_score: None,
            gate_passed: None,
            retain_em: None,
            forget_em: None,
            retain_rouge_l: None,
        }
    }
}

fn point_config(
    cfg: &PipelineConfig,
    param: SweepParam,
    value: SweepValue,
) -> Result<PipelineConfig> {
    let mut c = cfg.clone();
    match (param, value) {
        (SweepParam::ChunkSize, SweepValue::Value(v)) => c.unlearn.chunk_size = v,
        (SweepParam::ChunkSize, SweepValue::NoChunk) => c.unlearn.method = Method::GradDiffNoChunk,
        (SweepParam::EpochsPerChunk, SweepValue::Value(v)) => c.unlearn.epochs_per_chunk = v,
        (SweepParam::EpochsPerChunk, SweepValue::NoChunk) => {
            return Err(Error::Config(
                "no-chunk is only meaningful for chunk_size sweeps".into(),
            ))
        }
    }
    Ok(c)
}

/// Unlearns from the one memorized checkpoint once per value, writing each
/// point under `out/<value>/`. Failed points are recorded and skipped.
pub fn run_sweep(
    cfg: &PipelineConfig,
    param: SweepParam,
    values: &[SweepValue],
    model: &Path,
    data: &Path,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let label = v.to_string();
        let dir = out.join(&label);
        let point = point_config(cfg, param, v).and_then(|c| {
            stage_unlearn(&c, model, data, &dir.join("unlearned"))?;
            stage_eval(
                &c,
                &dir.join("unlearned"),
                data,
                &model.join(KNOWLEDGE_FILE),
                &dir.join(REPORT_FILE),
            )
        });
        rows.push(match point {
            Ok(r) => SweepRow::ok(label, &r.value),
            Err(e) => SweepRow::failed(label, &e),
        });
    }
    write_table(&out.join(TABLE_FILE), &rows)?;
    write_plot(&out.join(PLOT_FILE), param, &rows)?;
    Ok(rows)
}

fn write_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Invalid(format!("{}: {e}", path.display()))
}

pub fn read_table(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Whitespace-separated columns for gnuplot and friends; failed points are `nan`.
fn write_plot(path: &Path, param: SweepParam, rows: &[SweepRow]) -> Result<()> {
    let name = match param {
        SweepParam::ChunkSize => "chunk_size",
        SweepParam::EpochsPerChunk => "epochs_per_chunk",
    };
    let mut text = format!("# {name} hmta mia_score auc knowledge final_score\n");
    let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
    for r in rows {
        text.push_str(&format!(
            "{} {} {} {} {} {}\n",
            r.value,
            f(r.hmta),
            f(r.mia_score),
            f(r.auc),
            f(r.knowledge),
            f(r.final_score)
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
