//! Product quantization of latent frames into discrete targets.
//!
//! Each frame's latent vector is projected to per-group logits; a codebook
//! entry is selected per group (Gumbel-Softmax with a straight-through hard
//! forward at train time, argmax at eval time), the chosen entries are
//! concatenated and linearly mapped to the quantized representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BoundParams, Graph, ParamStore, Scalar, TensorRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    /// Codebook groups G.
    pub groups: usize,
    /// Entries per group V.
    pub entries_per_group: usize,
    /// Dimension of one codebook entry.
    pub entry_dim: usize,
    /// Latent (input) dimension d_z.
    pub input_dim: usize,
    /// Output dimension after the final linear map; must match the context
    /// dimension so quantized targets and context frames are comparable.
    pub output_dim: usize,
}

impl QuantizerConfig {
    pub fn paper() -> Self {
        QuantizerConfig { groups: 2, entries_per_group: 320, entry_dim: 128, input_dim: 512, output_dim: 768 }
    }

    pub fn desk() -> Self {
        QuantizerConfig { groups: 2, entries_per_group: 16, entry_dim: 16, input_dim: 64, output_dim: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quantizer.groups", self.groups),
            ("quantizer.entries_per_group", self.entries_per_group),
            ("quantizer.entry_dim", self.entry_dim),
            ("quantizer.input_dim", self.input_dim),
            ("quantizer.output_dim", self.output_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Number of joint codes (V^G).
    pub fn num_joint_codes(&self) -> usize {
        self.entries_per_group.pow(self.groups as u32)
    }

    pub fn init_params<S: Scalar>(&self, params: &mut ParamStore<S>, rng: &mut Rng) {
        let gv = self.groups * self.entries_per_group;
        let std_logit = 1.0 / (self.input_dim as f64).sqrt();
        params.insert_gaussian("quantizer.logit_proj.weight", vec![self.input_dim, gv], std_logit, rng);
        params.insert_zeros("quantizer.logit_proj.bias", vec![gv]);
        for g in 0..self.groups {
            params.insert_gaussian(
                format!("quantizer.codebook{}", g),
                vec![self.entries_per_group, self.entry_dim],
                1.0,
                rng,
            );
        }
        let concat = self.groups * self.entry_dim;
        let std_out = 1.0 / (concat as f64).sqrt();
        params.insert_gaussian("quantizer.out_proj.weight", vec![concat, self.output_dim], std_out, rng);
        params.insert_zeros("quantizer.out_proj.bias", vec![self.output_dim]);
    }
}

/// Temperature schedule for the Gumbel-Softmax: multiplicative decay per
/// step with a floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSchedule {
    pub start: f64,
    pub floor: f64,
    pub decay: f64,
}

impl Default for TauSchedule {
    fn default() -> Self {
        TauSchedule { start: 2.0, floor: 0.5, decay: 0.9995 }
    }
}

impl TauSchedule {
    pub fn at_step(&self, step: u64) -> f64 {
        (self.start * self.decay.powi(step.min(i32::MAX as u64) as i32)).max(self.floor)
    }
}

/// How codebook entries are selected in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizeMode {
    /// Gumbel noise + straight-through hard selection (training).
    Train,
    /// Deterministic argmax per group, no noise.
    Eval,
    /// Soft relaxation (no hard selection); the fully differentiable path
    /// used by gradient verification.
    Soft,
}

/// Gumbel-Softmax over one logit vector: softmax((logits + g)/tau) with
/// g_i = -log(-log(u_i)). Pass `None` for a noise-free (deterministic)
/// evaluation, which reduces to softmax(logits/tau).
pub fn gumbel_softmax<S: Scalar>(logits: &[S], tau: f64, rng: Option<&mut Rng>) -> Result<Vec<S>> {
    if tau <= 0.0 {
        return Err(Error::invalid("gumbel_softmax", format!("temperature must be positive, got {}", tau)));
    }
    let noisy: Vec<f64> = match rng {
        Some(r) => logits.iter().map(|&l| (l.to_f64() + r.gumbel()) / tau).collect(),
        None => logits.iter().map(|&l| l.to_f64() / tau).collect(),
    };
    let m = noisy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = noisy.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.iter().map(|&e| S::from_f64(e / z)).collect())
}

/// Graph outputs of [`quantize_graph`].
pub struct QuantizeGraphOut {
    /// Quantized representations [T, output_dim].
    pub values: TensorRef,
    /// Selected entry index per (frame, group), row-major [T * G].
    pub indices: Vec<usize>,
    /// Noise-free average selection probabilities per group, each [V];
    /// differentiable (feeds the diversity penalty).
    pub avg_probs: Vec<TensorRef>,
}

/// Build the quantization forward pass inside a graph.
pub fn quantize_graph<S: Scalar>(
    graph: &mut Graph<S>,
    params: &BoundParams,
    cfg: &QuantizerConfig,
    z: TensorRef,
    mode: QuantizeMode,
    tau: f64,
    rng: Option<&mut Rng>,
) -> Result<QuantizeGraphOut> {
    if tau <= 0.0 {
        return Err(Error::invalid("quantize", format!("temperature must be positive, got {}", tau)));
    }
    let shape = graph.shape(z).to_vec();
    if shape.len() != 2 || shape[1] != cfg.input_dim {
        return Err(Error::shape(
            "quantize",
            format!("latent frames have shape {:?}, want [T, {}]", shape, cfg.input_dim),
        ));
    }
    let frames = shape[0];
    let v = cfg.entries_per_group;

    let w = params.get("quantizer.logit_proj.weight")?;
    let b = params.get("quantizer.logit_proj.bias")?;
    let logits_all = graph.matmul(z, w)?;
    let logits_all = graph.add_row(logits_all, b)?;

    let mut rng = rng;
    let mut selected = Vec::with_capacity(cfg.groups);
    let mut avg_probs = Vec::with_capacity(cfg.groups);
    let mut indices = vec![0usize; frames * cfg.groups];
    for g in 0..cfg.groups {
        let logits = graph.slice_cols(logits_all, g * v, v)?;

        // usage statistics from the noise-free distribution
        let probs_clean = graph.softmax(logits)?;
        avg_probs.push(graph.mean_axis(probs_clean, 0)?);

        let noised = match (mode, rng.as_deref_mut()) {
            (QuantizeMode::Train, Some(r)) => {
                let noise: Vec<S> = (0..frames * v).map(|_| S::from_f64(r.gumbel())).collect();
                let noise = graph.constant(noise, vec![frames, v])?;
                graph.add(logits, noise)?
            }
            (QuantizeMode::Train, None) => {
                return Err(Error::invalid("quantize", "train mode requires a noise stream"));
            }
            _ => logits,
        };
        let scaled = graph.scale(noised, S::from_f64(1.0 / tau))?;
        let soft = graph.softmax(scaled)?;
        let weights = match mode {
            QuantizeMode::Soft => soft,
            _ => graph.straight_through_onehot(soft)?,
        };
        // record selections (argmax of the soft distribution, first max wins)
        let sd = graph.data(soft);
        for t in 0..frames {
            let row = &sd[t * v..(t + 1) * v];
            let mut best = 0usize;
            for j in 1..v {
                if row[j] > row[best] {
                    best = j;
                }
            }
            indices[t * cfg.groups + g] = best;
        }
        let codebook = params.get(&format!("quantizer.codebook{}", g))?;
        selected.push(graph.matmul(weights, codebook)?);
    }
    let concat = graph.concat_cols(&selected)?;
    let wo = params.get("quantizer.out_proj.weight")?;
    let bo = params.get("quantizer.out_proj.bias")?;
    let values = graph.matmul(concat, wo)?;
    let values = graph.add_row(values, bo)?;
    Ok(QuantizeGraphOut { values, indices, avg_probs })
}

/// Differentiable diversity penalty from noise-free average usage: mean over
/// groups of (V - perplexity)/V, in [0, 1). Encourages uniform codebook use.
pub fn diversity_graph<S: Scalar>(
    graph: &mut Graph<S>,
    avg_probs: &[TensorRef],
    entries_per_group: usize,
) -> Result<TensorRef> {
    let v = entries_per_group as f64;
    let mut total: Option<TensorRef> = None;
    for &p in avg_probs {
        let safe = graph.add_scalar(p, S::from_f64(1e-10))?;
        let logp = graph.ln(safe)?;
        let plogp = graph.mul(p, logp)?;
        let neg_h = graph.sum_all(plogp)?;
        let h = graph.scale(neg_h, S::from_f64(-1.0))?;
        let perp = graph.exp(h)?;
        // (V - perp) / V
        let neg = graph.scale(perp, S::from_f64(-1.0))?;
        let shifted = graph.add_scalar(neg, S::from_f64(v))?;
        let term = graph.scale(shifted, S::from_f64(1.0 / v))?;
        total = Some(match total {
            Some(t) => graph.add(t, term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| Error::invalid("diversity", "no groups"))?;
    graph.scale(total, S::from_f64(1.0 / avg_probs.len() as f64))
}

/// Quantized frames with their selected code indices.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedFrames<S: Scalar> {
    /// Row-major [frames, output_dim].
    pub data: Vec<S>,
    pub frames: usize,
    pub dim: usize,
    /// Entry index per (frame, group), row-major [frames * groups].
    pub indices: Vec<usize>,
    pub groups: usize,
    pub entries_per_group: usize,
}

impl<S: Scalar> QuantizedFrames<S> {
    /// Joint code id per frame: base-V positional combination of the group
    /// indices (for G = 2 this is index_0 * V + index_1, in [0, V^2)).
    pub fn joint_codes(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|t| joint_code(&self.indices[t * self.groups..(t + 1) * self.groups], self.entries_per_group))
            .collect()
    }
}

/// Combine per-group entry indices into a single joint code id.
pub fn joint_code(group_indices: &[usize], entries_per_group: usize) -> usize {
    group_indices.iter().fold(0usize, |acc, &i| acc * entries_per_group + i)
}

/// Standalone quantization of latent frames (runs its own small graph).
pub fn quantize<S: Scalar>(
    params: &ParamStore<S>,
    cfg: &QuantizerConfig,
    latents: &crate::encoder::LatentFrames<S>,
    mode: QuantizeMode,
    tau: f64,
    seed: u64,
) -> Result<QuantizedFrames<S>> {
    let mut graph = Graph::new();
    let bound = BoundParams::bind(params, &mut graph, |_| false)?;
    let z = graph.constant(latents.data.clone(), vec![latents.frames, latents.dim])?;
    let mut rng = Rng::derive(seed, &[0x71]);
    let rng_opt = match mode {
        QuantizeMode::Train => Some(&mut rng),
        _ => None,
    };
    let out = quantize_graph(&mut graph, &bound, cfg, z, mode, tau, rng_opt)?;
    Ok(QuantizedFrames {
        data: graph.data(out.values).to_vec(),
        frames: latents.frames,
        dim: cfg.output_dim,
        indices: out.indices,
        groups: cfg.groups,
        entries_per_group: cfg.entries_per_group,
    })
}

/// Perplexity of average selection probabilities for one group:
/// exp(entropy(mean over frames)). In [1, V] for proper distributions.
pub fn codebook_perplexity<S: Scalar>(prob_frames: &[Vec<S>]) -> Result<f64> {
    if prob_frames.is_empty() {
        return Err(Error::invalid("codebook_perplexity", "need at least one frame of probabilities"));
    }
    let v = prob_frames[0].len();
    let mut mean = vec![0.0f64; v];
    for row in prob_frames {
        if row.len() != v {
            return Err(Error::shape("codebook_perplexity", "probability rows differ in length"));
        }
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p.to_f64();
        }
    }
    let n = prob_frames.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    let mut h = 0.0f64;
    for &p in &mean {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h.exp())
}

/// Perplexity computed directly from an averaged distribution.
pub fn perplexity_of_mean(mean: &[f64]) -> f64 {
    let mut h = 0.0f64;
    for &p in mean {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h.exp()
}
