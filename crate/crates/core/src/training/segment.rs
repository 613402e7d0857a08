//! Overlapped-window segmentation of an audio corpus.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::wav_len;
use crate::error::{Error, Result};

/// One training segment: a window into a source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub path: PathBuf,
    pub start_seconds: f64,
    pub duration_seconds: f64,
}

/// Deterministically ordered list of full windows over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentManifest {
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub sample_rate: u32,
    pub entries: Vec<SegmentEntry>,
}

impl SegmentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }
}

/// Window start offsets (in samples) for a file of `total` samples: full
/// windows only, hop-spaced from zero. Integer arithmetic, so the count
/// equals floor((duration - window)/hop) + 1 whenever one window fits.
pub fn window_starts(total: u64, window: u64, hop: u64) -> Vec<u64> {
    let mut starts = Vec::new();
    if window == 0 || hop == 0 {
        return starts;
    }
    let mut s = 0u64;
    while s + window <= total {
        starts.push(s);
        s += hop;
    }
    starts
}

/// Split every decodable mono WAV under `dir` into overlapped windows.
/// Unreadable files are skipped with a warning on stderr; an empty result is
/// an error. Ordering is (path, start), so manifests are reproducible.
pub fn segment_corpus(dir: &Path, window_seconds: f64, hop_seconds: f64) -> Result<SegmentManifest> {
    if window_seconds <= 0.0 || hop_seconds <= 0.0 {
        return Err(Error::invalid("segment_corpus", "window and hop must be positive"));
    }
    let rd = std::fs::read_dir(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x.eq_ignore_ascii_case("wav")).unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!("no .wav files found under {}", dir.display())));
    }

    let mut entries = Vec::new();
    let mut sample_rate = 0u32;
    for path in files {
        let (rate, total) = match wav_len(&path) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("warning: skipping unreadable file {}: {}", path.display(), e);
                continue;
            }
        };
        if sample_rate == 0 {
            sample_rate = rate;
        } else if rate != sample_rate {
            eprintln!(
                "warning: skipping {}: sample rate {} differs from corpus rate {}",
                path.display(),
                rate,
                sample_rate
            );
            continue;
        }
        let window = (window_seconds * rate as f64).round() as u64;
        let hop = (hop_seconds * rate as f64).round() as u64;
        for start in window_starts(total, window, hop) {
            entries.push(SegmentEntry {
                path: path.clone(),
                start_seconds: start as f64 / rate as f64,
                duration_seconds: window_seconds,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!(
            "no segments: no file under {} holds a full {}-second window",
            dir.display(),
            window_seconds
        )));
    }
    Ok(SegmentManifest { window_seconds, hop_seconds, sample_rate, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_count_formula_cases() {
        let rate = 16_000u64;
        // 34 s, 20 s window, 10 s hop -> starts {0, 10} -> 2 segments
        assert_eq!(window_starts(34 * rate, 20 * rate, 10 * rate).len(), 2);
        // 65 s -> 5 segments
        assert_eq!(window_starts(65 * rate, 20 * rate, 10 * rate).len(), 5);
        // 19 s -> none (no padding)
        assert_eq!(window_starts(19 * rate, 20 * rate, 10 * rate).len(), 0);
        // exact fit
        assert_eq!(window_starts(20 * rate, 20 * rate, 10 * rate).len(), 1);
    }

    #[test]
    fn window_count_matches_closed_form_for_random_durations() {
        let mut rng = crate::rng::Rng::new(77);
        let (window, hop) = (20u64, 10u64);
        for _ in 0..2000 {
            let dur = rng.below(200) as u64; // whole seconds
            let starts = window_starts(dur, window, hop);
            let expect = if dur >= window { ((dur - window) / hop + 1) as usize } else { 0 };
            assert_eq!(starts.len(), expect, "duration {dur}");
            for (i, s) in starts.iter().enumerate() {
                assert_eq!(*s, i as u64 * hop);
            }
        }
    }
}
