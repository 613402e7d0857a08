//! Append-only JSON-lines training log.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One log record. No wall-clock fields: identical runs must produce
/// byte-identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub perplexity: Option<Vec<f64>>,
}

pub struct TrainLog {
    file: std::fs::File,
    path: PathBuf,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Ok(TrainLog { file, path: path.to_path_buf() })
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .map_err(|e| Error::Io { path: self.path.clone(), source: e })
    }
}
