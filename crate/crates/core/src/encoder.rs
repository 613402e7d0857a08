//! Feature encoder: a stack of strided 1-D convolutions mapping a raw
//! waveform to per-frame latent vectors.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BoundParams, Graph, ParamStore, Scalar, TensorRef};

/// One convolutional layer: output channels, kernel width, stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Feature-encoder configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: Vec<ConvSpec>,
    /// Normalize across channels (with affine scale/shift) after each conv.
    pub normalize: bool,
    /// Standardize each input segment to zero mean, unit variance.
    pub standardize_input: bool,
    /// Expected input sample rate; mismatching audio is rejected, never
    /// resampled.
    pub sample_rate: u32,
}

impl EncoderConfig {
    /// Full-size stack: 7 conv layers, 512 filters each, 20 ms frame hop at
    /// 16 kHz (cumulative stride 320).
    pub fn paper() -> Self {
        let kernels = [10, 3, 3, 3, 3, 2, 2];
        let strides = [5, 2, 2, 2, 2, 2, 2];
        EncoderConfig {
            layers: kernels
                .iter()
                .zip(strides)
                .map(|(&kernel, stride)| ConvSpec { filters: 512, kernel, stride })
                .collect(),
            normalize: true,
            standardize_input: true,
            sample_rate: 16_000,
        }
    }

    /// Small stack for CPU experiments: 3 layers, 64 filters, 40 ms hop.
    /// Kernel widths equal strides so receptive windows tile exactly.
    pub fn desk() -> Self {
        EncoderConfig {
            layers: vec![
                ConvSpec { filters: 64, kernel: 10, stride: 10 },
                ConvSpec { filters: 64, kernel: 8, stride: 8 },
                ConvSpec { filters: 64, kernel: 8, stride: 8 },
            ],
            normalize: true,
            standardize_input: true,
            sample_rate: 16_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("encoder.layers: at least one layer required".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.filters == 0 || l.kernel == 0 || l.stride == 0 {
                return Err(Error::Config(format!(
                    "encoder.layers[{}]: filters, kernel and stride must be positive",
                    i
                )));
            }
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("encoder.sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Latent dimension (filters of the last layer).
    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.filters).unwrap_or(0)
    }

    pub fn cumulative_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Seconds between successive output frames.
    pub fn frame_hop_seconds(&self) -> f64 {
        self.cumulative_stride() as f64 / self.sample_rate as f64
    }

    /// Output frame count for an input length, or None if too short.
    pub fn output_frames(&self, mut len: usize) -> Option<usize> {
        for l in &self.layers {
            if len < l.kernel {
                return None;
            }
            len = (len - l.kernel) / l.stride + 1;
        }
        Some(len)
    }

    /// Smallest input length that yields at least one output frame.
    pub fn min_input_len(&self) -> usize {
        let mut need = 1usize;
        for l in self.layers.iter().rev() {
            need = (need - 1) * l.stride + l.kernel;
        }
        need
    }

    /// Check rate and length; errors name the expected values.
    pub fn validate_waveform(&self, wave: &Waveform) -> Result<()> {
        if wave.sample_rate != self.sample_rate {
            return Err(Error::Audio(format!(
                "sample rate {} Hz does not match the configured {} Hz (input is never resampled)",
                wave.sample_rate, self.sample_rate
            )));
        }
        let min = self.min_input_len();
        if wave.len() < min {
            return Err(Error::Audio(format!(
                "input of {} samples is shorter than the encoder minimum of {} samples",
                wave.len(),
                min
            )));
        }
        Ok(())
    }

    /// Register encoder parameters (call once at model init).
    pub fn init_params<S: Scalar>(&self, params: &mut ParamStore<S>, rng: &mut Rng) {
        let mut prev = 1usize;
        for (i, l) in self.layers.iter().enumerate() {
            let std = 1.0 / ((prev * l.kernel) as f64).sqrt();
            params.insert_gaussian(format!("encoder.conv{}.weight", i), vec![l.filters, prev, l.kernel], std, rng);
            params.insert_zeros(format!("encoder.conv{}.bias", i), vec![l.filters]);
            if self.normalize {
                params.insert_ones(format!("encoder.norm{}.gamma", i), vec![l.filters]);
                params.insert_zeros(format!("encoder.norm{}.beta", i), vec![l.filters]);
            }
            prev = l.filters;
        }
    }
}

/// Per-frame latent vectors produced by [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrames<S: Scalar> {
    /// Row-major [frames, dim].
    pub data: Vec<S>,
    pub frames: usize,
    pub dim: usize,
    pub frame_hop_seconds: f64,
}

/// Graph-level forward: samples (already standardized if configured) to
/// latent frames [T, dim]. `samples` binds as a constant leaf.
pub fn encode_graph<S: Scalar>(
    graph: &mut Graph<S>,
    params: &BoundParams,
    cfg: &EncoderConfig,
    samples: &[S],
) -> Result<TensorRef> {
    if cfg.output_frames(samples.len()).is_none() {
        return Err(Error::Audio(format!(
            "input of {} samples is shorter than the encoder minimum of {} samples",
            samples.len(),
            cfg.min_input_len()
        )));
    }
    let mut x = graph.constant(samples.to_vec(), vec![1, samples.len()])?;
    let last = cfg.layers.len() - 1;
    for (i, l) in cfg.layers.iter().enumerate() {
        let w = params.get(&format!("encoder.conv{}.weight", i))?;
        let b = params.get(&format!("encoder.conv{}.bias", i))?;
        let y = graph.conv1d(x, w, b, l.stride)?;
        // time-major orientation for per-frame normalization
        let t = graph.transpose(y)?;
        let normed = if cfg.normalize {
            let gamma = params.get(&format!("encoder.norm{}.gamma", i))?;
            let beta = params.get(&format!("encoder.norm{}.beta", i))?;
            graph.layer_norm(t, gamma, beta, 1e-5)?
        } else {
            t
        };
        let act = graph.gelu(normed)?;
        x = if i == last { act } else { graph.transpose(act)? };
    }
    Ok(x)
}

/// Run the encoder on a waveform and collect latent frames.
pub fn encode<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &EncoderConfig,
    wave: &Waveform,
) -> Result<LatentFrames<S>> {
    cfg.validate_waveform(wave)?;
    let prepared: Vec<S> = if cfg.standardize_input {
        crate::audio::standardize(&wave.samples).iter().map(|&v| S::from_f64(v as f64)).collect()
    } else {
        wave.samples.iter().map(|&v| S::from_f64(v as f64)).collect()
    };
    let mut graph = Graph::new();
    let bound = BoundParams::bind(params, &mut graph, |_| false)?;
    let out = encode_graph(&mut graph, &bound, cfg, &prepared)?;
    let shape = graph.shape(out).to_vec();
    Ok(LatentFrames {
        data: graph.data(out).to_vec(),
        frames: shape[0],
        dim: shape[1],
        frame_hop_seconds: cfg.frame_hop_seconds(),
    })
}
