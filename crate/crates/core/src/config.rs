//! Run configuration files.
//!
//! A JSON file selects a preset and overrides individual keys; flags given
//! on the command line win over the file. Unknown keys are rejected. Every
//! run writes its fully-resolved configuration next to its outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::ContextConfig;
use crate::encoder::{ConvSpec, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::ObjectiveConfig;
use crate::quantizer::{QuantizerConfig, TauSchedule};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base preset: "desk" (default) or "paper".
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub encoder: EncoderPatch,
    pub quantizer: QuantizerPatch,
    pub context: ContextPatch,
    pub objective: ObjectivePatch,
    pub train: TrainPatch,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderPatch {
    pub layers: Option<Vec<ConvSpec>>,
    pub normalize: Option<bool>,
    pub standardize_input: Option<bool>,
    pub sample_rate: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerPatch {
    pub groups: Option<usize>,
    pub entries_per_group: Option<usize>,
    pub entry_dim: Option<usize>,
    pub input_dim: Option<usize>,
    pub output_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextPatch {
    pub num_blocks: Option<usize>,
    pub model_dim: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub input_dim: Option<usize>,
    pub positional: Option<bool>,
    pub pos_kernel: Option<usize>,
    pub pos_groups: Option<usize>,
    pub pre_norm: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectivePatch {
    pub mask_prob: Option<f64>,
    pub mask_span: Option<usize>,
    pub num_negatives: Option<usize>,
    pub temperature: Option<f64>,
    pub diversity_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPatch {
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub lr_pretrain: Option<f64>,
    pub lr_backbone: Option<f64>,
    pub lr_head: Option<f64>,
    pub lr_head_only: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub tau: Option<TauSchedule>,
    /// Seconds; 0 or negative disables cropping (full training windows).
    pub pretrain_crop_seconds: Option<f64>,
    pub clip_seconds: Option<f64>,
    pub checkpoint_every: Option<usize>,
}

/// A run's complete, concrete settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub preset: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
    }

    /// Merge preset defaults, file overrides, then flag overrides.
    pub fn resolve(&self, preset_flag: Option<&str>, seed_flag: Option<u64>) -> Result<Resolved> {
        let preset =
            preset_flag.map(str::to_string).or_else(|| self.preset.clone()).unwrap_or_else(|| "desk".into());
        let mut model = ModelConfig::preset(&preset)?;
        let mut train = TrainConfig::preset(&preset)?;

        apply_encoder(&self.encoder, &mut model.encoder);
        apply_context(&self.context, &mut model.context);
        apply_quantizer(&self.quantizer, &mut model.quantizer);
        apply_objective(&self.objective, &mut model.objective);
        apply_train(&self.train, &mut train);

        // keep coupled dimensions in sync unless explicitly pinned
        if self.quantizer.input_dim.is_none() {
            model.quantizer.input_dim = model.encoder.output_dim();
        }
        if self.context.input_dim.is_none() {
            model.context.input_dim = model.encoder.output_dim();
        }
        if self.quantizer.output_dim.is_none() {
            model.quantizer.output_dim = model.context.model_dim;
        }

        let seed = seed_flag.or(self.seed).unwrap_or(train.seed);
        train.seed = seed;

        model.validate()?;
        train.validate()?;
        Ok(Resolved { preset, seed, model, train })
    }
}

impl Resolved {
    /// Write the fully-resolved config (deterministic bytes).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }
}

fn apply_encoder(p: &EncoderPatch, c: &mut EncoderConfig) {
    if let Some(v) = &p.layers {
        c.layers = v.clone();
    }
    if let Some(v) = p.normalize {
        c.normalize = v;
    }
    if let Some(v) = p.standardize_input {
        c.standardize_input = v;
    }
    if let Some(v) = p.sample_rate {
        c.sample_rate = v;
    }
}

fn apply_quantizer(p: &QuantizerPatch, c: &mut QuantizerConfig) {
    if let Some(v) = p.groups {
        c.groups = v;
    }
    if let Some(v) = p.entries_per_group {
        c.entries_per_group = v;
    }
    if let Some(v) = p.entry_dim {
        c.entry_dim = v;
    }
    if let Some(v) = p.input_dim {
        c.input_dim = v;
    }
    if let Some(v) = p.output_dim {
        c.output_dim = v;
    }
}

fn apply_context(p: &ContextPatch, c: &mut ContextConfig) {
    if let Some(v) = p.num_blocks {
        c.num_blocks = v;
    }
    if let Some(v) = p.model_dim {
        c.model_dim = v;
    }
    if let Some(v) = p.heads {
        c.heads = v;
    }
    if let Some(v) = p.ffn_dim {
        c.ffn_dim = v;
    }
    if let Some(v) = p.input_dim {
        c.input_dim = v;
    }
    if let Some(v) = p.positional {
        c.positional = v;
    }
    if let Some(v) = p.pos_kernel {
        c.pos_kernel = v;
    }
    if let Some(v) = p.pos_groups {
        c.pos_groups = v;
    }
    if let Some(v) = p.pre_norm {
        c.pre_norm = v;
    }
}

fn apply_objective(p: &ObjectivePatch, c: &mut ObjectiveConfig) {
    if let Some(v) = p.mask_prob {
        c.mask_prob = v;
    }
    if let Some(v) = p.mask_span {
        c.mask_span = v;
    }
    if let Some(v) = p.num_negatives {
        c.num_negatives = v;
    }
    if let Some(v) = p.temperature {
        c.temperature = v;
    }
    if let Some(v) = p.diversity_weight {
        c.diversity_weight = v;
    }
}

fn apply_train(p: &TrainPatch, c: &mut TrainConfig) {
    if let Some(v) = p.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = p.max_epochs {
        c.max_epochs = v;
    }
    if let Some(v) = p.patience {
        c.patience = v;
    }
    if let Some(v) = p.lr_pretrain {
        c.lr_pretrain = v;
    }
    if let Some(v) = p.lr_backbone {
        c.lr_backbone = v;
    }
    if let Some(v) = p.lr_head {
        c.lr_head = v;
    }
    if let Some(v) = p.lr_head_only {
        c.lr_head_only = v;
    }
    if let Some(v) = p.adam_beta1 {
        c.adam_beta1 = v;
    }
    if let Some(v) = p.adam_beta2 {
        c.adam_beta2 = v;
    }
    if let Some(v) = p.adam_eps {
        c.adam_eps = v;
    }
    if let Some(v) = &p.tau {
        c.tau = v.clone();
    }
    if let Some(v) = p.pretrain_crop_seconds {
        c.pretrain_crop_seconds = if v > 0.0 { Some(v) } else { None };
    }
    if let Some(v) = p.clip_seconds {
        c.clip_seconds = v;
    }
    if let Some(v) = p.checkpoint_every {
        c.checkpoint_every = v;
    }
}
