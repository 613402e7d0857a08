//! Labeled clip datasets for the downstream tasks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Downstream classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pitch,
    Instrument,
}

impl Task {
    /// Head width for the full-scale benchmark datasets (112 pitch classes,
    /// 11 instrument families); synthetic runs override the class count.
    pub fn default_classes(self) -> usize {
        match self {
            Task::Pitch => 112,
            Task::Instrument => 11,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pitch" => Ok(Task::Pitch),
            "instrument" => Ok(Task::Instrument),
            other => Err(Error::Config(format!("task: unknown task '{}', expected 'pitch' or 'instrument'", other))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Pitch => write!(f, "pitch"),
            Task::Instrument => write!(f, "instrument"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One labeled audio clip. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledClip {
    pub path: PathBuf,
    pub pitch: usize,
    pub instrument: usize,
    pub split: Split,
}

impl LabeledClip {
    pub fn label(&self, task: Task) -> usize {
        match task {
            Task::Pitch => self.pitch,
            Task::Instrument => self.instrument,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledDataset {
    pub clips: Vec<LabeledClip>,
}

impl LabeledDataset {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }

    pub fn split(&self, split: Split) -> Vec<&LabeledClip> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }

    /// Fail before any training if a label falls outside the head's range.
    pub fn validate_labels(&self, task: Task, num_classes: usize) -> Result<()> {
        for clip in &self.clips {
            let label = clip.label(task);
            if label >= num_classes {
                return Err(Error::Dataset(format!(
                    "clip {} has {} label {}, out of range for {} classes",
                    clip.path.display(),
                    task,
                    label,
                    num_classes
                )));
            }
        }
        Ok(())
    }
}

/// Resolve a clip path relative to the manifest location.
pub fn resolve_clip_path(manifest_path: &Path, clip: &LabeledClip) -> PathBuf {
    if clip.path.is_absolute() {
        clip.path.clone()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&clip.path)
    }
}
