//! End-to-end behavioral tests of the model pipeline and training loops at
//! small scale.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use common::tiny_model_config;
use muquant::audio::{write_wav, Waveform};
use muquant::encoder::EncoderConfig;
use muquant::analysis::layer_similarity_profile;
use muquant::model::{pretrain_graph, Model, ModelConfig};
use muquant::quantizer::{quantize, QuantizeMode};
use muquant::rng::Rng;
use muquant::synth::{pitch_hz, render_tone, Timbre};
use muquant::tensor::{BoundParams, Graph};
use muquant::training::dataset::{LabeledClip, LabeledDataset, Split};
use muquant::training::optim::Adam;
use muquant::training::segment::{SegmentEntry, SegmentManifest};
use muquant::training::{
    finetune, pretrain, FinetuneMode, HeadConfig, PretrainInit, Task, TrainConfig,
};

fn test_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("muquant_pipeline").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Write `n` tone files of `seconds` each and return a manifest over them.
fn tone_manifest(dir: &PathBuf, n: usize, seconds: f64, window: f64, hop: f64) -> SegmentManifest {
    let mut entries = Vec::new();
    for i in 0..n {
        let timbre = Timbre::ALL[i % 4];
        let mut rng = Rng::derive(1000, &[i as u64]);
        let wave = render_tone(timbre, pitch_hz(i % 16), seconds, 16_000, &mut rng);
        let path = dir.join(format!("tone_{i:02}.wav"));
        write_wav(&path, &wave).unwrap();
        let mut start = 0.0;
        while start + window <= seconds + 1e-9 {
            entries.push(SegmentEntry {
                path: path.clone(),
                start_seconds: start,
                duration_seconds: window,
            });
            start += hop;
        }
    }
    SegmentManifest { window_seconds: window, hop_seconds: hop, sample_rate: 16_000, entries }
}

fn labeled_tone_set(dir: &PathBuf, per_split: &[(Split, usize)], seconds: f64) -> (LabeledDataset, PathBuf) {
    let mut clips = Vec::new();
    let mut idx = 0usize;
    for &(split, count) in per_split {
        for i in 0..count {
            let pitch = i % 4;
            let timbre = Timbre::ALL[(i / 4) % 4];
            let mut rng = Rng::derive(2000 + idx as u64, &[split as u64]);
            let wave = render_tone(timbre, pitch_hz(pitch * 3), seconds, 16_000, &mut rng);
            let name = format!("clip_{idx:03}.wav");
            write_wav(&dir.join(&name), &wave).unwrap();
            clips.push(LabeledClip {
                path: PathBuf::from(&name),
                pitch,
                instrument: timbre.index(),
                split,
            });
            idx += 1;
        }
    }
    let ds = LabeledDataset { clips };
    let manifest_path = dir.join("labels.json");
    ds.save(&manifest_path).unwrap();
    (ds, manifest_path)
}

/// Small training config for the tiny architecture.
fn tiny_train(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed,
        batch_size: 4,
        max_epochs: epochs,
        pretrain_crop_seconds: Some(0.2),
        clip_seconds: 0.2,
        ..TrainConfig::desk()
    }
}

// ── Encoder and feature shapes at the full-size preset ────────────────

#[test]
fn paper_encoder_real_frame_counts() {
    let cfg = EncoderConfig::paper();
    let mut params = muquant::tensor::ParamStore::<f32>::new();
    cfg.init_params(&mut params, &mut Rng::new(1));
    let mut rng = Rng::new(2);
    let one_s = Waveform::new((0..16_000).map(|_| rng.gaussian() as f32 * 0.1).collect(), 16_000);
    let frames = muquant::encoder::encode(&params, &cfg, &one_s).unwrap();
    assert_eq!(frames.frames, 49);
    assert_eq!(frames.dim, 512);

    let four_s = Waveform::new((0..64_000).map(|_| rng.gaussian() as f32 * 0.1).collect(), 16_000);
    let frames4 = muquant::encoder::encode(&params, &cfg, &four_s).unwrap();
    assert_eq!(frames4.frames, 199);
}

#[test]
fn paper_extract_features_is_768_dimensional() {
    let model = Model::<f32>::init(ModelConfig::paper(), 3).unwrap();
    let mut rng = Rng::new(4);
    let wave = Waveform::new((0..16_000).map(|_| rng.gaussian() as f32 * 0.1).collect(), 16_000);
    let features = model.extract_features(&wave).unwrap();
    assert_eq!(features.len(), 768);
}

// ── extract_features properties ────────────────────────────────────────

#[test]
fn extract_equals_mean_of_final_layer() {
    let model = Model::<f32>::init(tiny_model_config(), 5).unwrap();
    let mut rng = Rng::new(6);
    let wave = Waveform::new((0..400).map(|_| rng.gaussian() as f32 * 0.2).collect(), 16_000);
    let features = model.extract_features(&wave).unwrap();
    let last = model.layer_activations(&wave, model.config.context.num_blocks).unwrap();
    for (j, &f) in features.iter().enumerate() {
        let mut mean = 0.0f32;
        for t in 0..last.frames {
            mean += last.data[t * last.dim + j];
        }
        mean /= last.frames as f32;
        assert!((f - mean).abs() < 1e-5);
    }
}

/// With receptive windows tiling exactly (desk encoder: kernel == stride)
/// and a stride-aligned clip, concatenating a clip with itself duplicates
/// every frame, so the feature mean is unchanged up to 32-bit roundoff.
/// The positional conv is disabled here: its zero padding makes boundary
/// and seam frames genuinely differ, and attention spreads that difference
/// to every frame (measured ~3e-2 on an untrained desk model), so the
/// floor-arithmetic-only claim holds in the position-free configuration.
#[test]
fn self_concatenation_moves_feature_mean_only_by_edge_frames() {
    let mut cfg = ModelConfig::desk();
    cfg.context.positional = false;
    let model = Model::<f32>::init(cfg, 3).unwrap();
    let mut rng = Rng::new(9);
    // 2 s = 32000 samples = 50 x 640 (cumulative stride): stride-aligned
    let tone = render_tone(Timbre::Saw, 261.0, 2.0, 16_000, &mut rng);
    let single = model.extract_features(&tone).unwrap();
    let mut doubled = tone.samples.clone();
    doubled.extend_from_slice(&tone.samples);
    let doubled = model.extract_features(&Waveform::new(doubled, 16_000)).unwrap();
    for (a, b) in single.iter().zip(&doubled) {
        assert!((a - b).abs() < 1e-5, "feature moved by {}", (a - b).abs());
    }
}

// ── Pre-training behavior ──────────────────────────────────────────────

#[test]
fn pretrain_loss_decreases_over_epochs() {
    let dir = test_dir("pretrain_decrease");
    let manifest = tone_manifest(&dir, 6, 1.0, 1.0, 1.0);
    let cfg = tiny_model_config();
    let out = pretrain(&manifest, PretrainInit::Fresh(cfg), &tiny_train(11, 12), None).unwrap();
    let first = out.history.first().unwrap().loss;
    let last = out.history.last().unwrap().loss;
    assert!(
        last < first,
        "training loss did not decrease: first {first}, last {last}"
    );
}

#[test]
fn one_batch_overfit_loss_decreases_monotonically() {
    // fixed-batch overfit: the same segments with the same mask, negative
    // and Gumbel draws every step (a fixed objective), full-batch Adam
    let cfg = tiny_model_config();
    let mut wave_rng = Rng::new(21);
    let segments: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..400).map(|_| wave_rng.gaussian() as f32 * 0.3).collect())
        .collect();

    let mut monotone = 0usize;
    let seeds = 10u64;
    for seed in 0..seeds {
        let mut model = Model::<f32>::init(cfg.clone(), seed).unwrap();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut losses = Vec::new();
        for _step in 0..10 {
            let mut merged: BTreeMap<String, Vec<f32>> = BTreeMap::new();
            let mut loss_sum = 0.0f64;
            for (si, samples) in segments.iter().enumerate() {
                let prepared = muquant::model::prepare_samples::<f32>(&model.config.encoder, samples);
                let mut graph = Graph::new();
                let bound = BoundParams::bind(&model.params, &mut graph, |_| true).unwrap();
                // same stream every step: the draw is part of the batch
                let mut rng = Rng::derive(seed, &[0xB0, si as u64]);
                let out = pretrain_graph(
                    &mut graph,
                    &bound,
                    &model.config,
                    &prepared,
                    2.0,
                    QuantizeMode::Train,
                    &mut rng,
                )
                .unwrap();
                loss_sum += graph.scalar_value(out.total) as f64;
                graph.backward(out.total).unwrap();
                for (name, grad) in bound.gradients(&graph) {
                    let acc = merged.entry(name).or_insert_with(|| vec![0.0; grad.len()]);
                    for (dst, &g) in acc.iter_mut().zip(&grad) {
                        *dst += g;
                    }
                }
            }
            for grad in merged.values_mut() {
                for g in grad.iter_mut() {
                    *g /= segments.len() as f32;
                }
            }
            adam.step(&mut model.params, &merged, |_| 5e-4);
            losses.push(loss_sum / segments.len() as f64);
        }
        if losses.windows(2).all(|w| w[1] < w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 8, "monotone decrease in only {monotone}/{seeds} seeds");
}

#[test]
fn resumed_pretraining_reproduces_history_bit_exactly() {
    let dir = test_dir("pretrain_resume");
    let manifest = tone_manifest(&dir, 4, 1.0, 1.0, 1.0);
    let cfg = tiny_model_config();

    let full = pretrain(&manifest, PretrainInit::Fresh(cfg.clone()), &tiny_train(31, 3), None).unwrap();
    let part = pretrain(&manifest, PretrainInit::Fresh(cfg), &tiny_train(31, 2), None).unwrap();
    let resumed =
        pretrain(&manifest, PretrainInit::Resume(part.checkpoint), &tiny_train(31, 3), None).unwrap();

    assert_eq!(resumed.history.len(), 1);
    let direct = &full.history[2];
    let cont = &resumed.history[0];
    assert_eq!(direct.epoch, cont.epoch);
    assert_eq!(direct.loss.to_bits(), cont.loss.to_bits(), "next-epoch loss differs after resume");
    // final checkpoints agree byte-for-byte
    let a = full.checkpoint.to_bytes().unwrap();
    let b = resumed.checkpoint.to_bytes().unwrap();
    assert_eq!(a, b);
}

#[test]
fn pretrain_rejects_empty_manifest_and_bad_crop() {
    let manifest = SegmentManifest {
        window_seconds: 1.0,
        hop_seconds: 1.0,
        sample_rate: 16_000,
        entries: vec![],
    };
    assert!(pretrain(&manifest, PretrainInit::Fresh(tiny_model_config()), &tiny_train(1, 1), None).is_err());

    let dir = test_dir("pretrain_badcrop");
    let manifest = tone_manifest(&dir, 1, 1.0, 1.0, 1.0);
    let mut cfg = tiny_train(1, 1);
    cfg.pretrain_crop_seconds = Some(0.0001); // below the receptive field
    assert!(pretrain(&manifest, PretrainInit::Fresh(tiny_model_config()), &cfg, None).is_err());
}

// ── Finetuning behavior ────────────────────────────────────────────────

#[test]
fn early_stopping_never_overruns_patience() {
    let dir = test_dir("ft_earlystop");
    // train and valid share waveforms but valid labels are scrambled, so
    // validation loss worsens as the head fits the train labels
    let (mut ds, manifest_path) = labeled_tone_set(&dir, &[(Split::Train, 8)], 0.3);
    let mut valid: Vec<LabeledClip> = ds.clips.clone();
    for c in &mut valid {
        c.split = Split::Valid;
        c.pitch = (c.pitch + 1) % 4;
    }
    ds.clips.extend(valid);
    ds.save(&manifest_path).unwrap();

    let model = Model::<f32>::init(tiny_model_config(), 9).unwrap();
    let ckpt = muquant::training::Checkpoint::from_model(
        &model,
        muquant::training::CheckpointMeta {
            model: model.config.clone(),
            head: None,
            step: 0,
            epoch: 0,
            seed: 9,
            rng_state: Rng::new(9).state(),
        },
    );
    let mut cfg = tiny_train(9, 60);
    cfg.patience = 3;
    let head = HeadConfig::for_task(Task::Pitch).with_classes(4).with_clip_seconds(0.3);
    let out = finetune(&ckpt, &ds, &manifest_path, FinetuneMode::FeatureExtraction, head, &cfg, None).unwrap();
    let past_best = out.history.len() as i64 - (out.best_epoch as i64 + 1);
    assert!(
        past_best <= cfg.patience as i64,
        "ran {past_best} epochs past the best validation epoch (patience {})",
        cfg.patience
    );
    assert!(out.history.len() < 60, "early stopping never triggered");
}

#[test]
fn finetune_rejects_out_of_range_labels_before_training() {
    let dir = test_dir("ft_labels");
    let (ds, manifest_path) = labeled_tone_set(&dir, &[(Split::Train, 4)], 0.3);
    let model = Model::<f32>::init(tiny_model_config(), 2).unwrap();
    let ckpt = muquant::training::Checkpoint::from_model(
        &model,
        muquant::training::CheckpointMeta {
            model: model.config.clone(),
            head: None,
            step: 0,
            epoch: 0,
            seed: 2,
            rng_state: Rng::new(2).state(),
        },
    );
    // labels go up to 3; a 2-class head must be rejected
    let head = HeadConfig::for_task(Task::Pitch).with_classes(2).with_clip_seconds(0.3);
    let err = finetune(
        &ckpt,
        &ds,
        &manifest_path,
        FinetuneMode::FeatureExtraction,
        head,
        &tiny_train(2, 3),
        None,
    )
    .unwrap_err();
    assert!(err.to_string().contains("out of range"), "got: {err}");
}

// ── Quantized codes and analysis plumbing ──────────────────────────────

#[test]
fn joint_codes_stay_in_range_and_feed_cooccurrence() {
    let cfg = tiny_model_config();
    let model = Model::<f32>::init(cfg.clone(), 7).unwrap();
    let mut rng = Rng::new(8);
    let v = cfg.quantizer.entries_per_group;
    let num_joint = cfg.quantizer.num_joint_codes();
    let mut matrix = muquant::analysis::CoOccurrence::new(num_joint, 3);
    let mut total_frames = 0u64;
    for clip in 0..6 {
        let wave = Waveform::new((0..300).map(|_| rng.gaussian() as f32 * 0.2).collect(), 16_000);
        let latents = muquant::encoder::encode(&model.params, &model.config.encoder, &wave).unwrap();
        let q = quantize(&model.params, &cfg.quantizer, &latents, QuantizeMode::Eval, 1.0, 0).unwrap();
        let codes = q.joint_codes();
        assert!(codes.iter().all(|&c| c < num_joint));
        assert!(q.indices.iter().all(|&i| i < v));
        matrix.add_clip(&codes, clip % 3).unwrap();
        total_frames += q.frames as u64;
    }
    assert_eq!(matrix.total(), total_frames);
}

#[test]
fn untrained_model_profile_is_bounded() {
    let dir = test_dir("profile_untrained");
    let manifest = tone_manifest(&dir, 4, 2.0, 2.0, 2.0);
    let model = Model::<f32>::init(ModelConfig::desk(), 13).unwrap();
    let rows = layer_similarity_profile(&model, &manifest, 1.0).unwrap();
    assert_eq!(rows.len(), model.config.context.num_blocks);
    for r in &rows {
        assert!((0.0..=1.0 + 1e-9).contains(&r.pwcca), "pwcca {}", r.pwcca);
        assert!((0.0..=1.0 + 1e-9).contains(&r.mean_cca), "mean {}", r.mean_cca);
    }
    // too-short request errors once every clip is skipped
    assert!(layer_similarity_profile(&model, &manifest, 3.0).is_err());
}
