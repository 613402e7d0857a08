//! Downstream finetuning regimes, feature extraction, and classification.
//!
//! Three regimes share one loop: head-only training on frozen features
//! ("FE"), full-network finetuning ("FT1"), and context-plus-head finetuning
//! with the feature encoder frozen ("FT2"). Freezing is structural: frozen
//! tensors bind into graphs without gradients and the optimizer never sees
//! them, so they stay bit-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Waveform};
use crate::error::{Error, Result};
use crate::model::{features_graph, Model};
use crate::rng::Rng;
use crate::tensor::{BoundParams, Graph};
use crate::training::checkpoint::{Checkpoint, CheckpointMeta};
use crate::training::dataset::{resolve_clip_path, LabeledDataset, Split, Task};
use crate::training::log::{LogRecord, TrainLog};
use crate::training::optim::Adam;
use crate::training::{parallel_map, TrainConfig};

const STREAM_FT_SHUFFLE: u64 = 0x20;
const STREAM_FT_MASTER: u64 = 0x2f;

/// Downstream training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// "FE": freeze encoder and context, train only the output layer.
    FeatureExtraction,
    /// "FT1": finetune the entire network.
    FullFinetune,
    /// "FT2": finetune the context network, feature encoder frozen.
    ContextFinetune,
}

impl FinetuneMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fe" => Ok(FinetuneMode::FeatureExtraction),
            "ft1" => Ok(FinetuneMode::FullFinetune),
            "ft2" => Ok(FinetuneMode::ContextFinetune),
            other => Err(Error::Config(format!("mode: unknown finetune mode '{}', expected fe, ft1 or ft2", other))),
        }
    }

    fn trainable(&self, name: &str) -> bool {
        match self {
            FinetuneMode::FeatureExtraction => name.starts_with("head."),
            FinetuneMode::FullFinetune => true,
            FinetuneMode::ContextFinetune => name.starts_with("head.") || name.starts_with("context."),
        }
    }
}

impl std::fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FinetuneMode::FeatureExtraction => write!(f, "fe"),
            FinetuneMode::FullFinetune => write!(f, "ft1"),
            FinetuneMode::ContextFinetune => write!(f, "ft2"),
        }
    }
}

/// Linear classification head over mean-pooled context frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub task: Task,
    pub num_classes: usize,
    /// Clips are center-cropped/zero-padded to this duration for both
    /// training and classification.
    pub clip_seconds: f64,
}

impl HeadConfig {
    /// 112 output neurons.
    pub fn pitch() -> Self {
        HeadConfig { task: Task::Pitch, num_classes: Task::Pitch.default_classes(), clip_seconds: 4.0 }
    }

    /// 11 output neurons.
    pub fn instrument() -> Self {
        HeadConfig { task: Task::Instrument, num_classes: Task::Instrument.default_classes(), clip_seconds: 4.0 }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Pitch => Self::pitch(),
            Task::Instrument => Self::instrument(),
        }
    }

    pub fn with_classes(mut self, n: usize) -> Self {
        self.num_classes = n;
        self
    }

    pub fn with_clip_seconds(mut self, s: f64) -> Self {
        self.clip_seconds = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("head.num_classes must be positive".into()));
        }
        if self.clip_seconds <= 0.0 {
            return Err(Error::Config("head.clip_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Center-crop or zero-pad to an exact sample count.
pub fn fit_to_length(samples: &[f32], len: usize) -> Vec<f32> {
    use std::cmp::Ordering;
    match samples.len().cmp(&len) {
        Ordering::Equal => samples.to_vec(),
        Ordering::Greater => {
            let start = (samples.len() - len) / 2;
            samples[start..start + len].to_vec()
        }
        Ordering::Less => {
            let mut out = vec![0.0; len];
            let left = (len - samples.len()) / 2;
            out[left..left + samples.len()].copy_from_slice(samples);
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneEpoch {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug)]
pub struct FinetuneOutput {
    /// Best-validation weights (head included).
    pub checkpoint: Checkpoint,
    pub history: Vec<FinetuneEpoch>,
    pub best_epoch: u64,
}

struct PreparedClip {
    wave: Waveform,
    label: usize,
}

fn prepare_clips(
    dataset: &LabeledDataset,
    manifest_path: &Path,
    split: Split,
    task: Task,
    clip_samples: usize,
) -> Result<Vec<PreparedClip>> {
    let mut out = Vec::new();
    for clip in dataset.split(split) {
        let path = resolve_clip_path(manifest_path, clip);
        let wave = read_wav(&path)?;
        let fitted = fit_to_length(&wave.samples, clip_samples);
        out.push(PreparedClip {
            wave: Waveform::new(fitted, wave.sample_rate),
            label: clip.label(task),
        });
    }
    Ok(out)
}

/// Finetune a pre-trained checkpoint on a labeled dataset. Trains on the
/// Train split, early-stops on Valid (falling back to Train when the
/// dataset has no validation clips), and returns the best-validation
/// checkpoint.
pub fn finetune(
    ckpt: &Checkpoint,
    dataset: &LabeledDataset,
    manifest_path: &Path,
    mode: FinetuneMode,
    head: HeadConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FinetuneOutput> {
    cfg.validate()?;
    head.validate()?;
    dataset.validate_labels(head.task, head.num_classes)?;

    let mut model = ckpt.to_model()?;
    let dim = model.config.context.model_dim;
    // fresh head per run
    model.params.remove("head.weight");
    model.params.remove("head.bias");
    model.params.insert_zeros("head.weight", vec![dim, head.num_classes]);
    model.params.insert_zeros("head.bias", vec![head.num_classes]);

    let rate = model.config.encoder.sample_rate as f64;
    let clip_samples = (head.clip_seconds * rate).round() as usize;
    if clip_samples < model.config.encoder.min_input_len() {
        return Err(Error::Config(format!(
            "head.clip_seconds: {} samples is below the encoder minimum {}",
            clip_samples,
            model.config.encoder.min_input_len()
        )));
    }

    let train_clips = prepare_clips(dataset, manifest_path, Split::Train, head.task, clip_samples)?;
    if train_clips.is_empty() {
        return Err(Error::Dataset("dataset has no train-split clips".into()));
    }
    let mut valid_clips = prepare_clips(dataset, manifest_path, Split::Valid, head.task, clip_samples)?;
    if valid_clips.is_empty() {
        valid_clips = train_clips.iter().map(|c| PreparedClip { wave: c.wave.clone(), label: c.label }).collect();
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    let mut log = match out_dir {
        Some(dir) => Some(TrainLog::create(&dir.join("log.jsonl"))?),
        None => None,
    };

    // FE never updates the backbone, so pooled features are constants;
    // compute them once instead of re-running the frozen forward every epoch.
    let cached_features: Option<Vec<Vec<f32>>> = match mode {
        FinetuneMode::FeatureExtraction => {
            let feats = parallel_map(&train_clips, |_, c| model.extract_features(&c.wave));
            let mut out = Vec::with_capacity(feats.len());
            for f in feats {
                out.push(f?);
            }
            Some(out)
        }
        _ => None,
    };
    let cached_valid: Option<Vec<Vec<f32>>> = match mode {
        FinetuneMode::FeatureExtraction => {
            let feats = parallel_map(&valid_clips, |_, c| model.extract_features(&c.wave));
            let mut out = Vec::with_capacity(feats.len());
            for f in feats {
                out.push(f?);
            }
            Some(out)
        }
        _ => None,
    };

    let mut adam = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let lr_head = if mode == FinetuneMode::FeatureExtraction { cfg.lr_head_only } else { cfg.lr_head } as f32;
    let lr_backbone = cfg.lr_backbone as f32;

    let mut history = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0u64;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs as u64 {
        let mut order: Vec<usize> = (0..train_clips.len()).collect();
        Rng::derive(cfg.seed, &[STREAM_FT_SHUFFLE, epoch]).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (merged, batch_loss, batch_correct) = match &cached_features {
                Some(features) => head_only_batch(&model, &head, features, &train_clips, batch)?,
                None => backbone_batch(&model, &head, &train_clips, batch, mode)?,
            };
            loss_sum += batch_loss;
            correct += batch_correct;
            adam.step(&mut model.params, &merged, |name| {
                if name.starts_with("head.") {
                    lr_head
                } else {
                    lr_backbone
                }
            });
        }
        let train_loss = loss_sum / train_clips.len() as f64;
        let train_accuracy = correct as f64 / train_clips.len() as f64;

        let (valid_loss, valid_accuracy) = match &cached_valid {
            Some(features) => eval_cached(&model, &head, features, &valid_clips)?,
            None => eval_clips(&model, &head, &valid_clips)?,
        };

        if let Some(log) = log.as_mut() {
            log.append(&LogRecord {
                epoch,
                split: "train".into(),
                loss: train_loss,
                accuracy: Some(train_accuracy),
                perplexity: None,
            })?;
            log.append(&LogRecord {
                epoch,
                split: "valid".into(),
                loss: valid_loss,
                accuracy: Some(valid_accuracy),
                perplexity: None,
            })?;
        }
        history.push(FinetuneEpoch { epoch, train_loss, train_accuracy, valid_loss, valid_accuracy });

        if valid_loss < best_loss {
            best_loss = valid_loss;
            best_params = model.params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let best_model = Model { config: model.config.clone(), params: best_params };
    let meta = CheckpointMeta {
        model: best_model.config.clone(),
        head: Some(head),
        step: adam.steps,
        epoch: best_epoch + 1,
        seed: cfg.seed,
        rng_state: Rng::derive(cfg.seed, &[STREAM_FT_MASTER, adam.steps]).state(),
    };
    let checkpoint = Checkpoint::from_model(&best_model, meta);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("finetuned.mqw"))?;
    }
    Ok(FinetuneOutput { checkpoint, history, best_epoch })
}

/// One minibatch through the full backbone (FT1/FT2).
fn backbone_batch(
    model: &Model<f32>,
    head: &HeadConfig,
    clips: &[PreparedClip],
    batch: &[usize],
    mode: FinetuneMode,
) -> Result<(BTreeMap<String, Vec<f32>>, f64, usize)> {
    let items: Vec<usize> = batch.to_vec();
    let results: Vec<Result<(BTreeMap<String, Vec<f32>>, f64, bool)>> = parallel_map(&items, |_, &ci| {
        let clip = &clips[ci];
        let samples = model.prepare(&clip.wave)?;
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&model.params, &mut graph, |n| mode.trainable(n))?;
        let pooled = features_graph(&mut graph, &bound, &model.config, &samples)?;
        let feat = graph.reshape(pooled, vec![1, model.config.context.model_dim])?;
        let w = bound.get("head.weight")?;
        let b = bound.get("head.bias")?;
        let logits = graph.matmul(feat, w)?;
        let logits = graph.add_row(logits, b)?;
        let predicted = argmax_first(graph.data(logits));
        let loss = graph.cross_entropy(logits, &[clip.label])?;
        let loss_v = graph.scalar_value(loss) as f64;
        graph.backward(loss)?;
        Ok((bound.gradients(&graph), loss_v, predicted == clip.label))
    });
    merge_batch(results, batch.len(), head)
}

/// One minibatch over cached pooled features (FE fast path).
fn head_only_batch(
    model: &Model<f32>,
    head: &HeadConfig,
    features: &[Vec<f32>],
    clips: &[PreparedClip],
    batch: &[usize],
) -> Result<(BTreeMap<String, Vec<f32>>, f64, usize)> {
    let dim = model.config.context.model_dim;
    let mut fdata = Vec::with_capacity(batch.len() * dim);
    let mut targets = Vec::with_capacity(batch.len());
    for &ci in batch {
        fdata.extend_from_slice(&features[ci]);
        targets.push(clips[ci].label);
    }
    let mut graph = Graph::new();
    let f = graph.constant(fdata, vec![batch.len(), dim])?;
    let w_p = model.params.get("head.weight")?;
    let b_p = model.params.get("head.bias")?;
    let w = graph.leaf(w_p.data.clone(), w_p.shape.clone(), true)?;
    let b = graph.leaf(b_p.data.clone(), b_p.shape.clone(), true)?;
    let logits = graph.matmul(f, w)?;
    let logits = graph.add_row(logits, b)?;
    let mut correct = 0usize;
    {
        let ld = graph.data(logits);
        for (row, &t) in targets.iter().enumerate() {
            if argmax_first(&ld[row * head.num_classes..(row + 1) * head.num_classes]) == t {
                correct += 1;
            }
        }
    }
    let loss = graph.cross_entropy(logits, &targets)?;
    let loss_v = graph.scalar_value(loss) as f64 * batch.len() as f64;
    graph.backward(loss)?;
    let mut grads = BTreeMap::new();
    if let Some(g) = graph.grad(w) {
        grads.insert("head.weight".to_string(), g.to_vec());
    }
    if let Some(g) = graph.grad(b) {
        grads.insert("head.bias".to_string(), g.to_vec());
    }
    Ok((grads, loss_v, correct))
}

fn merge_batch(
    results: Vec<Result<(BTreeMap<String, Vec<f32>>, f64, bool)>>,
    batch_len: usize,
    _head: &HeadConfig,
) -> Result<(BTreeMap<String, Vec<f32>>, f64, usize)> {
    let mut merged: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for r in results {
        let (grads, loss, ok) = r?;
        loss_sum += loss;
        if ok {
            correct += 1;
        }
        for (name, grad) in grads {
            let acc = merged.entry(name).or_insert_with(|| vec![0.0; grad.len()]);
            for (dst, &g) in acc.iter_mut().zip(&grad) {
                *dst += g;
            }
        }
    }
    let scale = 1.0 / batch_len as f32;
    for grad in merged.values_mut() {
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    Ok((merged, loss_sum, correct))
}

fn eval_clips(model: &Model<f32>, head: &HeadConfig, clips: &[PreparedClip]) -> Result<(f64, f64)> {
    let results: Vec<Result<(f64, bool)>> = parallel_map(clips, |_, clip| {
        let (predicted, _probs, loss) = classify_with_loss(model, head, &clip.wave, Some(clip.label))?;
        Ok((loss.unwrap(), predicted == clip.label))
    });
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let n = clips.len();
    for r in results {
        let (l, ok) = r?;
        loss_sum += l;
        if ok {
            correct += 1;
        }
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

fn eval_cached(
    model: &Model<f32>,
    head: &HeadConfig,
    features: &[Vec<f32>],
    clips: &[PreparedClip],
) -> Result<(f64, f64)> {
    let w = model.params.get("head.weight")?;
    let b = model.params.get("head.bias")?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (f, clip) in features.iter().zip(clips) {
        let (predicted, _probs, loss) = head_forward(f, &w.data, &b.data, head.num_classes, Some(clip.label));
        loss_sum += loss.unwrap();
        if predicted == clip.label {
            correct += 1;
        }
    }
    Ok((loss_sum / clips.len() as f64, correct as f64 / clips.len() as f64))
}

fn argmax_first(values: &[f32]) -> usize {
    let mut best = 0usize;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

fn head_forward(
    features: &[f32],
    w: &[f32],
    b: &[f32],
    classes: usize,
    label: Option<usize>,
) -> (usize, Vec<f32>, Option<f64>) {
    let dim = features.len();
    let mut logits = vec![0.0f64; classes];
    for (j, l) in logits.iter_mut().enumerate() {
        let mut acc = b[j] as f64;
        for i in 0..dim {
            acc += features[i] as f64 * w[i * classes + j] as f64;
        }
        *l = acc;
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f32> = exps.iter().map(|&e| (e / z) as f32).collect();
    let mut predicted = 0usize;
    for i in 1..classes {
        if probs[i] > probs[predicted] {
            predicted = i;
        }
    }
    let loss = label.map(|t| z.ln() + m - logits[t]);
    (predicted, probs, loss)
}

/// Mean-pooled context features from a checkpoint.
pub fn extract_features(ckpt: &Checkpoint, wave: &Waveform) -> Result<Vec<f32>> {
    let model = ckpt.to_model()?;
    model.extract_features(wave)
}

/// Classification result: argmax class (lowest index wins ties) plus the
/// softmax probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: usize,
    pub probabilities: Vec<f32>,
}

/// Classify a waveform with a finetuned checkpoint (head required).
pub fn classify(ckpt: &Checkpoint, wave: &Waveform) -> Result<Classification> {
    let head = ckpt
        .meta
        .head
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no classification head; finetune first".into()))?;
    let model = ckpt.to_model()?;
    let (class, probabilities, _) = classify_with_loss(&model, &head, wave, None)?;
    Ok(Classification { class, probabilities })
}

fn classify_with_loss(
    model: &Model<f32>,
    head: &HeadConfig,
    wave: &Waveform,
    label: Option<usize>,
) -> Result<(usize, Vec<f32>, Option<f64>)> {
    let w = model.params.get("head.weight")?;
    let b = model.params.get("head.bias")?;
    let dim = model.config.context.model_dim;
    if w.shape != [dim, head.num_classes] || b.shape != [head.num_classes] {
        return Err(Error::shape(
            "classify",
            format!(
                "head tensors {:?}/{:?} do not match model dim {} x {} classes",
                w.shape, b.shape, dim, head.num_classes
            ),
        ));
    }
    let rate = model.config.encoder.sample_rate as f64;
    let clip_samples = (head.clip_seconds * rate).round() as usize;
    let fitted = Waveform::new(fit_to_length(&wave.samples, clip_samples), wave.sample_rate);
    let features = model.extract_features(&fitted)?;
    Ok(head_forward(&features, &w.data, &b.data, head.num_classes, label))
}
