//! Self-supervised pre-training loop.

use std::collections::BTreeMap;
use std::path::Path;

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::model::{pretrain_graph, Model, ModelConfig};
use crate::quantizer::{perplexity_of_mean, QuantizeMode};
use crate::rng::Rng;
use crate::tensor::{BoundParams, Graph};
use crate::training::checkpoint::{Checkpoint, CheckpointMeta};
use crate::training::log::{LogRecord, TrainLog};
use crate::training::optim::Adam;
use crate::training::segment::SegmentManifest;
use crate::training::{parallel_map, TrainConfig};

// label tags for derived random streams
const STREAM_SHUFFLE: u64 = 0x10;
const STREAM_CROP: u64 = 0x11;
const STREAM_STEP: u64 = 0x12;
const STREAM_MASTER: u64 = 0xff;

/// Start state: fresh weights or a checkpoint to continue from.
pub enum PretrainInit {
    Fresh(ModelConfig),
    Resume(Checkpoint),
}

/// Per-epoch training statistics (deterministic; used for bit-exact resume
/// checks as well as logging).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    pub loss: f64,
    pub contrastive: f64,
    pub diversity: f64,
    /// Codebook perplexity per group, from usage averaged over the epoch.
    pub perplexity: Vec<f64>,
}

pub struct PretrainOutput {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

struct SegmentResult {
    grads: BTreeMap<String, Vec<f32>>,
    total: f64,
    contrastive: f64,
    diversity: f64,
    usage: Vec<Vec<f64>>,
}

/// Run contrastive pre-training over the manifest's segments. Writes
/// `log.jsonl`, periodic `epoch_*.mqw` checkpoints and a `final.mqw` into
/// `out_dir` when given. Aborts with a diagnostic naming the batch and seed
/// if the loss goes non-finite.
pub fn pretrain(
    manifest: &SegmentManifest,
    init: PretrainInit,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    if manifest.entries.is_empty() {
        return Err(Error::Dataset("manifest holds no segments".into()));
    }

    let (mut model, mut adam, start_epoch, mut step) = match init {
        PretrainInit::Fresh(model_cfg) => {
            let model = Model::<f32>::init(model_cfg, cfg.seed)?;
            (model, Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps), 0u64, 0u64)
        }
        PretrainInit::Resume(ckpt) => {
            let model = ckpt.to_model()?;
            let mut adam = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            adam.restore(ckpt.meta.step, &ckpt.optimizer_tensors());
            (model, adam, ckpt.meta.epoch, ckpt.meta.step)
        }
    };

    // crop settings checked up front so a bad config fails before epoch 1
    let rate = model.config.encoder.sample_rate as f64;
    let crop_samples = cfg.pretrain_crop_seconds.map(|s| (s * rate).round() as usize);
    if let Some(c) = crop_samples {
        if c < model.config.encoder.min_input_len() {
            return Err(Error::Config(format!(
                "train.pretrain_crop_seconds: {} samples is below the encoder minimum {}",
                c,
                model.config.encoder.min_input_len()
            )));
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    let mut log = match out_dir {
        Some(dir) => Some(TrainLog::create(&dir.join("log.jsonl"))?),
        None => None,
    };

    let groups = model.config.quantizer.groups;
    let entries_v = model.config.quantizer.entries_per_group;
    let mut history = Vec::new();

    for epoch in start_epoch..cfg.max_epochs as u64 {
        let mut order: Vec<usize> = (0..manifest.entries.len()).collect();
        Rng::derive(cfg.seed, &[STREAM_SHUFFLE, epoch]).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut contrastive_sum = 0.0f64;
        let mut diversity_sum = 0.0f64;
        let mut seg_count = 0usize;
        let mut usage_sum = vec![vec![0.0f64; entries_v]; groups];

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let tau = cfg.tau.at_step(step);
            let results: Vec<Result<SegmentResult>> = parallel_map(batch, |_, &seg_idx| {
                run_segment(&model, manifest, seg_idx, cfg, crop_samples, epoch, tau)
            });

            let mut merged: BTreeMap<String, Vec<f32>> = BTreeMap::new();
            for (slot, result) in results.into_iter().enumerate() {
                let seg_idx = batch[slot];
                let r = result.map_err(|e| {
                    Error::Training(format!(
                        "epoch {} batch {} segment {} ({}): {}",
                        epoch,
                        batch_idx,
                        seg_idx,
                        manifest.entries[seg_idx].path.display(),
                        e
                    ))
                })?;
                if !r.total.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {} in epoch {} batch {} segment {} ({}), seed {}",
                        r.total,
                        epoch,
                        batch_idx,
                        seg_idx,
                        manifest.entries[seg_idx].path.display(),
                        cfg.seed
                    )));
                }
                loss_sum += r.total;
                contrastive_sum += r.contrastive;
                diversity_sum += r.diversity;
                for g in 0..groups {
                    for (dst, &p) in usage_sum[g].iter_mut().zip(&r.usage[g]) {
                        *dst += p;
                    }
                }
                seg_count += 1;
                for (name, grad) in r.grads {
                    let acc = merged.entry(name).or_insert_with(|| vec![0.0; grad.len()]);
                    for (dst, &g) in acc.iter_mut().zip(&grad) {
                        *dst += g;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            for grad in merged.values_mut() {
                for g in grad.iter_mut() {
                    *g *= scale;
                }
            }
            adam.step(&mut model.params, &merged, |_| cfg.lr_pretrain as f32);
            step += 1;
        }

        let inv = 1.0 / seg_count as f64;
        let perplexity: Vec<f64> = usage_sum
            .iter()
            .map(|u| {
                let mean: Vec<f64> = u.iter().map(|&s| s * inv).collect();
                perplexity_of_mean(&mean)
            })
            .collect();
        let stats = EpochStats {
            epoch,
            loss: loss_sum * inv,
            contrastive: contrastive_sum * inv,
            diversity: diversity_sum * inv,
            perplexity: perplexity.clone(),
        };
        if let Some(log) = log.as_mut() {
            log.append(&LogRecord {
                epoch,
                split: "pretrain".into(),
                loss: stats.loss,
                accuracy: None,
                perplexity: Some(perplexity),
            })?;
        }
        history.push(stats);

        if let (Some(dir), true) = (out_dir, cfg.checkpoint_every > 0) {
            let done = epoch + 1;
            if done % cfg.checkpoint_every as u64 == 0 && done < cfg.max_epochs as u64 {
                let ckpt = snapshot(&model, &adam, cfg.seed, step, done);
                ckpt.save(&dir.join(format!("epoch_{:04}.mqw", done)))?;
            }
        }
    }

    let checkpoint = snapshot(&model, &adam, cfg.seed, step, cfg.max_epochs as u64);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("final.mqw"))?;
    }
    Ok(PretrainOutput { checkpoint, history })
}

fn snapshot(model: &Model<f32>, adam: &Adam, seed: u64, step: u64, epoch: u64) -> Checkpoint {
    let meta = CheckpointMeta {
        model: model.config.clone(),
        head: None,
        step,
        epoch,
        seed,
        rng_state: Rng::derive(seed, &[STREAM_MASTER, step]).state(),
    };
    let mut ckpt = Checkpoint::from_model(model, meta);
    ckpt.insert_tensors(adam.export());
    ckpt
}

fn run_segment(
    model: &Model<f32>,
    manifest: &SegmentManifest,
    seg_idx: usize,
    cfg: &TrainConfig,
    crop_samples: Option<usize>,
    epoch: u64,
    tau: f64,
) -> Result<SegmentResult> {
    let entry = &manifest.entries[seg_idx];
    let wave = read_wav(&entry.path)?;
    let rate = wave.sample_rate as f64;
    let start = (entry.start_seconds * rate).round() as usize;
    let len = (entry.duration_seconds * rate).round() as usize;
    let mut segment = wave.slice(start, len);
    if let Some(crop) = crop_samples {
        if segment.len() > crop {
            let mut crop_rng = Rng::derive(cfg.seed, &[STREAM_CROP, epoch, seg_idx as u64]);
            let offset = crop_rng.below(segment.len() - crop + 1);
            segment = segment.slice(offset, crop);
        }
    }
    let samples = model.prepare(&segment)?;

    let mut graph = Graph::new();
    let bound = BoundParams::bind(&model.params, &mut graph, |_| true)?;
    let mut rng = Rng::derive(cfg.seed, &[STREAM_STEP, epoch, seg_idx as u64]);
    let out = pretrain_graph(&mut graph, &bound, &model.config, &samples, tau, QuantizeMode::Train, &mut rng)?;
    let breakdown = out.breakdown(&graph);
    let (total, contrastive, diversity) = (breakdown.total, breakdown.contrastive, breakdown.diversity);
    if !total.is_finite() {
        // caller formats the abort diagnostic
        return Ok(SegmentResult { grads: BTreeMap::new(), total, contrastive, diversity, usage: out.avg_usage });
    }
    graph.backward(out.total)?;
    let grads = bound.gradients(&graph);
    Ok(SegmentResult { grads, total, contrastive, diversity, usage: out.avg_usage })
}
