//! Assembled pipeline: encoder + quantizer + context network + objective,
//! with one parameter store and the full pre-training forward pass.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::context::{contextualize_graph, ContextConfig};
use crate::encoder::{encode_graph, EncoderConfig};
use crate::error::{Error, Result};
use crate::objective::{
    contrastive_loss_graph, sample_mask, sample_negatives, MaskSpec, ObjectiveConfig,
};
use crate::quantizer::{diversity_graph, quantize_graph, QuantizeMode, QuantizerConfig};
use crate::rng::Rng;
use crate::tensor::{BoundParams, Graph, ParamStore, Scalar, TensorRef};

/// Complete architecture description. Serialized into checkpoints so a saved
/// model is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub quantizer: QuantizerConfig,
    pub context: ContextConfig,
    pub objective: ObjectiveConfig,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            encoder: EncoderConfig::paper(),
            quantizer: QuantizerConfig::paper(),
            context: ContextConfig::paper(),
            objective: ObjectiveConfig::paper(),
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig::desk(),
            quantizer: QuantizerConfig::desk(),
            context: ContextConfig::desk(),
            objective: ObjectiveConfig::desk(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("preset: unknown preset '{}', expected 'paper' or 'desk'", other))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.quantizer.validate()?;
        self.context.validate()?;
        self.objective.validate()?;
        let d_z = self.encoder.output_dim();
        if self.quantizer.input_dim != d_z {
            return Err(Error::Config(format!(
                "quantizer.input_dim {} must equal the encoder output dim {}",
                self.quantizer.input_dim, d_z
            )));
        }
        if self.context.input_dim != d_z {
            return Err(Error::Config(format!(
                "context.input_dim {} must equal the encoder output dim {}",
                self.context.input_dim, d_z
            )));
        }
        if self.quantizer.output_dim != self.context.model_dim {
            return Err(Error::Config(format!(
                "quantizer.output_dim {} must equal context.model_dim {} (the contrastive loss compares them)",
                self.quantizer.output_dim, self.context.model_dim
            )));
        }
        Ok(())
    }
}

/// Model = config + named weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    /// Fresh random init (deterministic per seed).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        config.encoder.init_params(&mut params, &mut Rng::derive(seed, &[1]));
        config.quantizer.init_params(&mut params, &mut Rng::derive(seed, &[2]));
        config.context.init_params(&mut params, &mut Rng::derive(seed, &[3]));
        Ok(Model { config, params })
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model { config: self.config.clone(), params: self.params.cast() }
    }

    /// Standardize (if configured) and convert a waveform for graph input.
    pub fn prepare(&self, wave: &Waveform) -> Result<Vec<S>> {
        self.config.encoder.validate_waveform(wave)?;
        Ok(prepare_samples::<S>(&self.config.encoder, &wave.samples))
    }

    /// Mean-pooled final-block context vector (analysis mode, no masking).
    pub fn extract_features(&self, wave: &Waveform) -> Result<Vec<S>> {
        let samples = self.prepare(wave)?;
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&self.params, &mut graph, |_| false)?;
        let pooled = features_graph(&mut graph, &bound, &self.config, &samples)?;
        Ok(graph.data(pooled).to_vec())
    }

    /// Activations at a depth: layer 0 is the feature-encoder output, layer
    /// b in 1..=num_blocks is the output of Transformer block b. Analysis
    /// mode: deterministic, no masking.
    pub fn layer_activations(&self, wave: &Waveform, layer: usize) -> Result<LayerActivations<S>> {
        if layer > self.config.context.num_blocks {
            return Err(Error::invalid(
                "layer_activations",
                format!("layer {} out of range 0..={}", layer, self.config.context.num_blocks),
            ));
        }
        let samples = self.prepare(wave)?;
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&self.params, &mut graph, |_| false)?;
        let z = encode_graph(&mut graph, &bound, &self.config.encoder, &samples)?;
        let target = if layer == 0 {
            z
        } else {
            let out = contextualize_graph(&mut graph, &bound, &self.config.context, z, None, true)?;
            out.per_layer[layer - 1]
        };
        let shape = graph.shape(target).to_vec();
        Ok(LayerActivations { data: graph.data(target).to_vec(), frames: shape[0], dim: shape[1], layer })
    }

    /// Encoder output plus every block's activations from a single forward
    /// pass (analysis mode).
    pub fn all_layer_activations(
        &self,
        wave: &Waveform,
    ) -> Result<(LayerActivations<S>, Vec<LayerActivations<S>>)> {
        let samples = self.prepare(wave)?;
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&self.params, &mut graph, |_| false)?;
        let z = encode_graph(&mut graph, &bound, &self.config.encoder, &samples)?;
        let out = contextualize_graph(&mut graph, &bound, &self.config.context, z, None, true)?;
        let zshape = graph.shape(z).to_vec();
        let encoder_out =
            LayerActivations { data: graph.data(z).to_vec(), frames: zshape[0], dim: zshape[1], layer: 0 };
        let blocks = out
            .per_layer
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let s = graph.shape(r).to_vec();
                LayerActivations { data: graph.data(r).to_vec(), frames: s[0], dim: s[1], layer: i + 1 }
            })
            .collect();
        Ok((encoder_out, blocks))
    }
}

/// Per-frame activations at one depth of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations<S: Scalar> {
    /// Row-major [frames, dim].
    pub data: Vec<S>,
    pub frames: usize,
    pub dim: usize,
    pub layer: usize,
}

pub fn prepare_samples<S: Scalar>(cfg: &EncoderConfig, samples: &[f32]) -> Vec<S> {
    if cfg.standardize_input {
        crate::audio::standardize(samples).iter().map(|&v| S::from_f64(v as f64)).collect()
    } else {
        samples.iter().map(|&v| S::from_f64(v as f64)).collect()
    }
}

/// Everything the training loop needs from one segment's forward pass.
pub struct PretrainGraphOut {
    pub total: TensorRef,
    pub contrastive: TensorRef,
    pub diversity: Option<TensorRef>,
    pub mask: MaskSpec,
    /// Noise-free per-group average usage distributions (data snapshot).
    pub avg_usage: Vec<Vec<f64>>,
}

impl PretrainGraphOut {
    /// Loss terms as plain numbers; total = contrastive + weight * diversity.
    pub fn breakdown<S: Scalar>(&self, graph: &Graph<S>) -> crate::objective::LossBreakdown {
        crate::objective::LossBreakdown {
            contrastive: graph.scalar_value(self.contrastive).to_f64(),
            diversity: self.diversity.map(|d| graph.scalar_value(d).to_f64()).unwrap_or(0.0),
            total: graph.scalar_value(self.total).to_f64(),
        }
    }
}

/// Build the complete pre-training loss for one segment:
/// encode -> mask -> quantize -> contextualize -> contrastive (+ diversity).
pub fn pretrain_graph<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    samples: &[S],
    tau: f64,
    quant_mode: QuantizeMode,
    rng: &mut Rng,
) -> Result<PretrainGraphOut> {
    let z = encode_graph(graph, bound, &cfg.encoder, samples)?;
    let frames = graph.shape(z)[0];
    let mask = sample_mask(frames, cfg.objective.mask_prob, cfg.objective.mask_span, rng)?;
    let negatives = sample_negatives(&mask, cfg.objective.num_negatives, rng)?;

    let quant_rng_needed = matches!(quant_mode, QuantizeMode::Train);
    let q_out = quantize_graph(
        graph,
        bound,
        &cfg.quantizer,
        z,
        quant_mode,
        tau,
        if quant_rng_needed { Some(rng) } else { None },
    )?;

    let c_out = contextualize_graph(graph, bound, &cfg.context, z, Some(&mask.indices), false)?;

    let contrastive =
        contrastive_loss_graph(graph, c_out.values, q_out.values, &negatives, cfg.objective.temperature)?;

    let avg_usage: Vec<Vec<f64>> = q_out
        .avg_probs
        .iter()
        .map(|&p| graph.data(p).iter().map(|&v| v.to_f64()).collect())
        .collect();

    let (total, diversity) = if cfg.objective.diversity_weight > 0.0 {
        let div = diversity_graph(graph, &q_out.avg_probs, cfg.quantizer.entries_per_group)?;
        let weighted = graph.scale(div, S::from_f64(cfg.objective.diversity_weight))?;
        (graph.add(contrastive, weighted)?, Some(div))
    } else {
        (contrastive, None)
    };

    Ok(PretrainGraphOut { total, contrastive, diversity, mask, avg_usage })
}

/// Mean-pooled final-block context frames for a prepared sample buffer.
pub fn features_graph<S: Scalar>(
    graph: &mut Graph<S>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    samples: &[S],
) -> Result<TensorRef> {
    let z = encode_graph(graph, bound, &cfg.encoder, samples)?;
    let c = contextualize_graph(graph, bound, &cfg.context, z, None, false)?;
    graph.mean_axis(c.values, 0)
}
