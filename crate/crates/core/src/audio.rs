//! Waveform type and 16-bit PCM mono WAV input/output.

use std::path::Path;

use crate::error::{Error, Result};

/// Default model sample rate in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono PCM audio in [-1, 1] plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sub-window by sample range (clamped to the available samples).
    pub fn slice(&self, start: usize, len: usize) -> Waveform {
        let end = (start + len).min(self.samples.len());
        let start = start.min(end);
        Waveform { samples: self.samples[start..end].to_vec(), sample_rate: self.sample_rate }
    }
}

/// Read a 16-bit PCM mono WAV file. Multichannel or non-16-bit input is
/// rejected; sample-rate checks happen at the model boundary (no silent
/// resampling anywhere).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Wav {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            detail: format!("expected mono audio, file has {} channels", spec.channels),
        });
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            detail: format!(
                "expected 16-bit integer PCM, file is {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let sample_rate = spec.sample_rate;
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
    let samples = samples.map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
    let scaled = samples.iter().map(|&s| s as f32 / 32768.0).collect();
    Ok(Waveform { samples: scaled, sample_rate })
}

/// Number of samples in a WAV file without decoding them.
pub fn wav_len(path: &Path) -> Result<(u32, u64)> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Wav {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            detail: format!("expected mono audio, file has {} channels", spec.channels),
        });
    }
    Ok((spec.sample_rate, reader.duration() as u64))
}

/// Write a waveform as 16-bit PCM mono, clamping to [-1, 1].
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::Wav {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    for &s in &wave.samples {
        let clamped = s.clamp(-1.0, 1.0);
        let v = (clamped * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
    }
    writer.finalize().map_err(|e| Error::Wav { path: path.to_path_buf(), detail: e.to_string() })?;
    Ok(())
}

/// Standardize to zero mean, unit variance (stabilizes contrastive
/// pre-training). Constant inputs come back as all zeros.
pub fn standardize(samples: &[f32]) -> Vec<f32> {
    if samples.is_empty() {
        return Vec::new();
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = samples.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return vec![0.0; samples.len()];
    }
    let rstd = 1.0 / var.sqrt();
    samples.iter().map(|&v| ((v as f64 - mean) * rstd) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let dir = std::env::temp_dir().join("muquant_audio_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tone.wav");
        let samples: Vec<f32> = (0..1600)
            .map(|i| (0.5 * (std::f64::consts::TAU * 440.0 * i as f64 / 16000.0).sin()) as f32)
            .collect();
        let wave = Waveform::new(samples.clone(), 16000);
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.len(), 1600);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
        let (rate, len) = wav_len(&path).unwrap();
        assert_eq!((rate, len), (16000, 1600));
    }

    #[test]
    fn standardize_zero_mean_unit_var() {
        let s = standardize(&[1.0, 2.0, 3.0, 4.0]);
        let mean: f64 = s.iter().map(|&v| v as f64).sum::<f64>() / 4.0;
        let var: f64 = s.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn standardize_constant_is_zero() {
        assert_eq!(standardize(&[0.7, 0.7, 0.7]), vec![0.0, 0.0, 0.0]);
    }
}
