//! JSONL datasets, one [`Sample`] per line.

use std::path::Path;

use kagrmn_core::Sample;

use crate::error::{read_to_string, write_atomic, Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Parses JSONL text; blank lines are skipped and errors carry 1-based line numbers.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_error = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let sample: Sample = serde_json::from_str(line).map_err(|e| parse_error(e.to_string()))?;
        sample.validate().map_err(|e| parse_error(e.to_string()))?;
        samples.push(sample);
    }
    let mut warnings = Vec::new();
    if samples.is_empty() {
        warnings.push(format!("{}: no samples", path.display()));
    }
    Ok(Dataset { samples, warnings })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_to_string(path)?, path)
}

pub fn to_jsonl(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    write_atomic(path, to_jsonl(samples)?.as_bytes())
}
