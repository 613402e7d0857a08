//! Command implementations behind the `muquant` binary.

use std::path::{Path, PathBuf};

use crate::analysis::cooccurrence::CoOccurrenceMeta;
use crate::analysis::{layer_similarity_profile, write_profile_csv, CoOccurrence};
use crate::audio::read_wav;
use crate::config::RunConfig;
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::quantizer::{quantize, QuantizeMode};
use crate::synth::{generate_corpus, SynthConfig};
use crate::training::dataset::resolve_clip_path;
use crate::training::{
    classify, extract_features, finetune, pretrain, segment_corpus, Checkpoint, FinetuneMode,
    HeadConfig, LabeledDataset, PretrainInit, SegmentManifest, Split, Task,
};

pub struct CommonOpts {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
}

impl CommonOpts {
    fn resolve(&self) -> Result<crate::config::Resolved> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        file.resolve(self.preset.as_deref(), self.seed)
    }
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    match path {
        Some(p) => {
            std::fs::write(p, bytes).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })
        }
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| Error::Io { path: PathBuf::from("<stdout>"), source: e })
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_gen_synthetic(
    out: &Path,
    seed: u64,
    pretrain_clips: usize,
    pretrain_seconds: f64,
    train_clips: usize,
    valid_clips: usize,
    test_clips: usize,
    clip_seconds: f64,
    pitches: usize,
    timbres: usize,
) -> Result<()> {
    let cfg = SynthConfig {
        seed,
        sample_rate: 16_000,
        pretrain_files: pretrain_clips,
        pretrain_seconds,
        train_clips,
        valid_clips,
        test_clips,
        clip_seconds,
        num_pitches: pitches,
        num_timbres: timbres,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    let corpus = generate_corpus(out, &cfg)?;
    write_json(Some(&out.join("synth_config.json")), &cfg)?;
    println!(
        "generated {} pretrain files and {} labeled clips under {}",
        corpus.pretrain_files,
        corpus.labeled_clips,
        out.display()
    );
    Ok(())
}

pub fn cmd_segment(dir: &Path, out: &Path, window: f64, hop: f64) -> Result<()> {
    let manifest = segment_corpus(dir, window, hop)?;
    manifest.save(out)?;
    println!("{} segments -> {}", manifest.entries.len(), out.display());
    Ok(())
}

pub fn cmd_pretrain(
    manifest_path: &Path,
    out: &Path,
    common: &CommonOpts,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut resolved = common.resolve()?;
    if let Some(e) = epochs {
        resolved.train.max_epochs = e;
    }
    if let Some(b) = batch_size {
        resolved.train.batch_size = b;
    }
    let manifest = SegmentManifest::load(manifest_path)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    resolved.write(&out.join("resolved_config.json"))?;

    let init = match resume {
        Some(p) => PretrainInit::Resume(Checkpoint::load(p)?),
        None => PretrainInit::Fresh(resolved.model.clone()),
    };
    let result = pretrain(&manifest, init, &resolved.train, Some(out))?;
    let last = result.history.last();
    match last {
        Some(s) => println!(
            "pretrained {} epochs, final loss {:.6}, perplexity {:?} -> {}",
            result.history.len(),
            s.loss,
            s.perplexity.iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>(),
            out.join("final.mqw").display()
        ),
        None => println!("no epochs run (resume already at max_epochs?) -> {}", out.display()),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_finetune(
    ckpt_path: &Path,
    data: &Path,
    mode: &str,
    task: &str,
    out: &Path,
    common: &CommonOpts,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    classes: Option<usize>,
    clip_seconds: Option<f64>,
) -> Result<()> {
    let mut resolved = common.resolve()?;
    if let Some(e) = epochs {
        resolved.train.max_epochs = e;
    }
    if let Some(b) = batch_size {
        resolved.train.batch_size = b;
    }
    let mode = FinetuneMode::parse(mode)?;
    let task = Task::parse(task)?;
    let mut head = HeadConfig::for_task(task).with_clip_seconds(resolved.train.clip_seconds);
    if let Some(c) = classes {
        head = head.with_classes(c);
    }
    if let Some(s) = clip_seconds {
        head = head.with_clip_seconds(s);
    }

    let ckpt = Checkpoint::load(ckpt_path)?;
    let dataset = LabeledDataset::load(data)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    resolved.write(&out.join("resolved_config.json"))?;
    write_json(Some(&out.join("head_config.json")), &head)?;

    let result = finetune(&ckpt, &dataset, data, mode, head, &resolved.train, Some(out))?;
    let best = &result.history[result.best_epoch as usize];
    println!(
        "finetuned ({} mode): best epoch {} valid loss {:.6} valid acc {:.4} -> {}",
        mode,
        result.best_epoch,
        best.valid_loss,
        best.valid_accuracy,
        out.join("finetuned.mqw").display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct FeatureDump {
    dim: usize,
    features: Vec<f32>,
}

pub fn cmd_extract(ckpt_path: &Path, wav: &Path, out: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let wave = read_wav(wav)?;
    let features = extract_features(&ckpt, &wave)?;
    write_json(out, &FeatureDump { dim: features.len(), features })
}

pub fn cmd_classify(ckpt_path: &Path, wav: &Path, out: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let wave = read_wav(wav)?;
    let result = classify(&ckpt, &wave)?;
    write_json(out, &result)
}

pub fn cmd_analyze_codes(
    ckpt_path: &Path,
    data: &Path,
    task: &str,
    split: &str,
    out: &Path,
    normalized: bool,
) -> Result<()> {
    let task = Task::parse(task)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = ckpt.to_model()?;
    let dataset = LabeledDataset::load(data)?;
    let clips: Vec<_> = match split {
        "all" => dataset.clips.iter().collect(),
        "train" => dataset.split(Split::Train),
        "valid" => dataset.split(Split::Valid),
        "test" => dataset.split(Split::Test),
        other => {
            return Err(Error::Config(format!(
                "split: unknown split '{}', expected train, valid, test or all",
                other
            )))
        }
    };
    if clips.is_empty() {
        return Err(Error::Dataset(format!("no clips in split '{}'", split)));
    }
    let qcfg = &model.config.quantizer;
    // label axis spans the whole dataset so columns agree across splits
    let num_labels = 1 + dataset.clips.iter().map(|c| c.label(task)).max().unwrap_or(0);

    let mut joint = CoOccurrence::new(qcfg.num_joint_codes(), num_labels);
    let mut per_group: Vec<CoOccurrence> =
        (0..qcfg.groups).map(|_| CoOccurrence::new(qcfg.entries_per_group, num_labels)).collect();
    let mut total_frames = 0u64;
    for clip in &clips {
        let path = resolve_clip_path(data, clip);
        let wave = read_wav(&path)?;
        let latents = encode(&model.params, &model.config.encoder, &wave)?;
        let q = quantize(&model.params, qcfg, &latents, QuantizeMode::Eval, 1.0, 0)?;
        let label = clip.label(task);
        joint.add_clip(&q.joint_codes(), label)?;
        for g in 0..qcfg.groups {
            let codes: Vec<usize> = (0..q.frames).map(|t| q.indices[t * qcfg.groups + g]).collect();
            per_group[g].add_clip(&codes, label)?;
        }
        total_frames += q.frames as u64;
    }

    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    joint.write_csv(&out.join("cooccurrence.csv"), false)?;
    if normalized {
        joint.write_csv(&out.join("cooccurrence_normalized.csv"), true)?;
    }
    for (g, m) in per_group.iter().enumerate() {
        m.write_csv(&out.join(format!("cooccurrence_group{}.csv", g)), false)?;
    }
    let meta = CoOccurrenceMeta {
        num_codes: qcfg.num_joint_codes(),
        num_labels,
        groups: qcfg.groups,
        entries_per_group: qcfg.entries_per_group,
        task: task.to_string(),
        total_frames,
        clips: clips.len(),
    };
    write_json(Some(&out.join("cooccurrence_meta.json")), &meta)?;
    println!(
        "co-occurrence over {} clips / {} frames, mean row label entropy {:.4} -> {}",
        clips.len(),
        total_frames,
        joint.mean_row_label_entropy(),
        out.display()
    );
    Ok(())
}

pub fn cmd_analyze_layers(
    ckpt_path: &Path,
    manifest_path: &Path,
    out: &Path,
    segment_seconds: f64,
) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = ckpt.to_model()?;
    let manifest = SegmentManifest::load(manifest_path)?;
    let rows = layer_similarity_profile(&model, &manifest, segment_seconds)?;
    write_profile_csv(out, &rows)?;
    println!("{} layers -> {}", rows.len(), out.display());
    Ok(())
}
