//! CSV and JSON result files.
//!
//! Every CSV row carries the run seed and config hash. Wall-clock time only
//! appears in the JSON mirror so the CSV stays byte-identical across reruns.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::OutputFormat;

/// One result table in both encodings.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub csv: Vec<u8>,
    pub json: Value,
}

impl Artifact {
    pub fn new<R: Serialize, M: Serialize>(name: impl Into<String>, rows: &[R], metadata: &M) -> Result<Self, OutputError> {
        let json = serde_json::json!({
            "metadata": serde_json::to_value(metadata)?,
            "rows": serde_json::to_value(rows)?,
        });
        Ok(Artifact {
            name: name.into(),
            csv: csv_bytes(rows)?,
            json,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("csv encoding failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("json encoding failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// RFC 4180 CSV with a header row and LF line endings.
pub fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| OutputError::Csv(e.into_error().into()))
}

/// Writes `<dir>/<stem><name suffix>.{csv,json}` and returns the paths written.
pub fn write_artifacts(
    dir: &Path,
    stem: &str,
    format: OutputFormat,
    artifacts: &[Artifact],
) -> Result<Vec<PathBuf>, OutputError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| OutputError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for a in artifacts {
        let base = if a.name.is_empty() {
            stem.to_string()
        } else {
            format!("{stem}_{}", a.name)
        };
        if format.csv() {
            let path = dir.join(format!("{base}.csv"));
            fs::write(&path, &a.csv).map_err(io_err(&path))?;
            written.push(path);
        }
        if format.json() {
            let path = dir.join(format!("{base}.json"));
            let mut text = serde_json::to_string_pretty(&a.json)?;
            text.push('\n');
            fs::write(&path, text).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}
