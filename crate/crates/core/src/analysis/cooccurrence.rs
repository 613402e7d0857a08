//! Co-occurrence counting between discrete codes and clip-level labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of (code, label) observations. One row per code id, one column per
/// label class; a clip's label applies to every frame of the clip.
#[derive(Debug, Clone, PartialEq)]
pub struct CoOccurrence {
    counts: Vec<u64>,
    pub num_codes: usize,
    pub num_labels: usize,
}

impl CoOccurrence {
    pub fn new(num_codes: usize, num_labels: usize) -> Self {
        CoOccurrence { counts: vec![0; num_codes * num_labels], num_codes, num_labels }
    }

    /// Tally one clip: every frame's code co-occurs with the clip label.
    pub fn add_clip(&mut self, codes: &[usize], label: usize) -> Result<()> {
        if label >= self.num_labels {
            return Err(Error::invalid(
                "cooccurrence",
                format!("label {} out of declared range {}", label, self.num_labels),
            ));
        }
        for &code in codes {
            if code >= self.num_codes {
                return Err(Error::invalid(
                    "cooccurrence",
                    format!("code id {} out of declared range {}", code, self.num_codes),
                ));
            }
            self.counts[code * self.num_labels + label] += 1;
        }
        Ok(())
    }

    #[inline]
    pub fn count(&self, code: usize, label: usize) -> u64 {
        self.counts[code * self.num_labels + label]
    }

    pub fn row(&self, code: usize) -> &[u64] {
        &self.counts[code * self.num_labels..(code + 1) * self.num_labels]
    }

    /// Total number of (frame, label) observations.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.num_labels];
        for code in 0..self.num_codes {
            for (s, &c) in sums.iter_mut().zip(self.row(code)) {
                *s += c;
            }
        }
        sums
    }

    /// Row-normalized view; rows with zero count are skipped.
    pub fn row_normalized(&self) -> Vec<(usize, Vec<f64>)> {
        let mut out = Vec::new();
        for code in 0..self.num_codes {
            let row = self.row(code);
            let total: u64 = row.iter().sum();
            if total == 0 {
                continue;
            }
            out.push((code, row.iter().map(|&c| c as f64 / total as f64).collect()));
        }
        out
    }

    /// Mean label entropy over rows, weighted by row mass. Lower values mean
    /// codes specialize on fewer labels.
    pub fn mean_row_label_entropy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for code in 0..self.num_codes {
            let row = self.row(code);
            let row_total: u64 = row.iter().sum();
            if row_total == 0 {
                continue;
            }
            let mut h = 0.0;
            for &c in row {
                if c > 0 {
                    let p = c as f64 / row_total as f64;
                    h -= p * p.ln();
                }
            }
            acc += (row_total as f64 / total as f64) * h;
        }
        acc
    }

    /// CSV with a `code` first column and one column per label. Only rows
    /// with observations are emitted (code space can be large and sparse).
    pub fn write_csv(&self, path: &Path, normalized: bool) -> Result<()> {
        let mut out = String::new();
        out.push_str("code");
        for l in 0..self.num_labels {
            out.push_str(&format!(",label_{}", l));
        }
        out.push('\n');
        for code in 0..self.num_codes {
            let row = self.row(code);
            let total: u64 = row.iter().sum();
            if total == 0 {
                continue;
            }
            out.push_str(&code.to_string());
            for &c in row {
                if normalized {
                    out.push_str(&format!(",{}", c as f64 / total as f64));
                } else {
                    out.push_str(&format!(",{}", c));
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }
}

/// Axis metadata written next to the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrenceMeta {
    pub num_codes: usize,
    pub num_labels: usize,
    pub groups: usize,
    pub entries_per_group: usize,
    pub task: String,
    pub total_frames: u64,
    pub clips: usize,
}

/// Build a co-occurrence matrix from per-clip (codes, label) observations.
pub fn cooccurrence<I>(clips: I, num_codes: usize, num_labels: usize) -> Result<CoOccurrence>
where
    I: IntoIterator<Item = (Vec<usize>, usize)>,
{
    let mut m = CoOccurrence::new(num_codes, num_labels);
    for (codes, label) in clips {
        m.add_clip(&codes, label)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_case() {
        let m = cooccurrence(vec![(vec![5, 5, 5], 2usize)], 8, 4).unwrap();
        assert_eq!(m.count(5, 2), 3);
        assert_eq!(m.total(), 3);
        for code in 0..8 {
            for label in 0..4 {
                if (code, label) != (5, 2) {
                    assert_eq!(m.count(code, label), 0);
                }
            }
        }
    }

    #[test]
    fn block_diagonal_matches_brute_force_tally() {
        let clips = vec![
            (vec![0, 0, 1], 0usize),
            (vec![1, 1], 0),
            (vec![2, 3, 3], 1),
            (vec![3], 1),
        ];
        let m = cooccurrence(clips.clone(), 4, 2).unwrap();
        // brute-force frame-by-frame tally
        let mut expect = vec![0u64; 4 * 2];
        for (codes, label) in &clips {
            for &c in codes {
                expect[c * 2 + label] += 1;
            }
        }
        for code in 0..4 {
            for label in 0..2 {
                assert_eq!(m.count(code, label), expect[code * 2 + label]);
            }
        }
    }

    #[test]
    fn column_sums_equal_per_label_frame_totals() {
        let clips = vec![(vec![0, 1, 2], 0usize), (vec![2, 2], 1), (vec![0], 1)];
        let m = cooccurrence(clips, 3, 2).unwrap();
        assert_eq!(m.column_sums(), vec![3, 3]);
        assert_eq!(m.total(), 6);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut m = CoOccurrence::new(4, 2);
        assert!(m.add_clip(&[0], 2).is_err());
        assert!(m.add_clip(&[4], 1).is_err());
    }

    #[test]
    fn normalized_rows_sum_to_one() {
        let m = cooccurrence(vec![(vec![1, 1, 2], 0usize), (vec![1], 1)], 4, 2).unwrap();
        for (_, row) in m.row_normalized() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_lower_for_specialized_codes() {
        // specialized: each code sees one label
        let specialized = cooccurrence(vec![(vec![0; 10], 0usize), (vec![1; 10], 1)], 2, 2).unwrap();
        // mixed: both codes see both labels equally
        let mixed =
            cooccurrence(vec![(vec![0, 1], 0usize), (vec![0, 1], 1)], 2, 2).unwrap();
        assert!(specialized.mean_row_label_entropy() < mixed.mean_row_label_entropy());
        assert!(specialized.mean_row_label_entropy().abs() < 1e-12);
        assert!((mixed.mean_row_label_entropy() - 2f64.ln()).abs() < 1e-12);
    }
}
