use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Sample, Subset};
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

/// Writes `{retain,forget,holdout,general}.jsonl` into `dir`.
pub fn write_corpus_dir(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for subset in Subset::ALL {
        let part: Vec<Sample> = samples
            .iter()
            .filter(|s| s.subset == subset)
            .cloned()
            .collect();
        write_jsonl(&dir.join(format!("{}.jsonl", subset.file_stem())), &part)?;
    }
    Ok(())
}

/// Reads all four subset files; a missing file is reported by name.
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<Sample>> {
    let mut all = Vec::new();
    for subset in Subset::ALL {
        let path = dir.join(format!("{}.jsonl", subset.file_stem()));
        if !path.exists() {
            return Err(Error::StageOrder { stage: "gen", path });
        }
        let part = read_jsonl(&path)?;
        if let Some(bad) = part.iter().find(|s| s.subset != subset) {
            return Err(Error::Invalid(format!(
                "sample {} in {} belongs to {:?}",
                bad.id,
                path.display(),
                bad.subset
            )));
        }
        all.extend(part);
    }
    Ok(all)
}
