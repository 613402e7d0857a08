//! Black-box tests of the `muquant` binary: exit codes, error surfaces and
//! the documented flag behavior.

use std::path::PathBuf;
use std::process::Command;

use muquant::audio::{write_wav, Waveform};
use muquant::rng::Rng;
use muquant::synth::{render_tone, Timbre};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_muquant"))
}

fn test_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("muquant_cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn unknown_subcommand_and_flag_exit_2_with_usage() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "no usage text: {stderr}");

    let out = bin().args(["segment", "--definitely-not-a-flag", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_validation_failure_exits_1_naming_the_key() {
    let dir = test_dir("badconfig");
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, br#"{ "train": { "not_a_real_knob": 5 } }"#).unwrap();
    let out = bin()
        .args(["pretrain", "--manifest", "m.json", "--out"])
        .arg(dir.join("out"))
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.lines().count() == 1, "multi-line error: {stderr}");
    assert!(stderr.contains("not_a_real_knob"), "error does not name the key: {stderr}");
}

#[test]
fn segment_command_window_arithmetic_on_real_files() {
    let dir = test_dir("segment");
    let corpus = dir.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    let mut rng = Rng::new(1);
    for (name, seconds) in [("a_34s.wav", 34.0), ("b_65s.wav", 65.0), ("c_19s.wav", 19.0)] {
        let wave = render_tone(Timbre::Sine, 220.0, seconds, 16_000, &mut rng);
        write_wav(&corpus.join(name), &wave).unwrap();
    }
    let manifest_path = dir.join("manifest.json");
    let out = bin()
        .args(["segment", "--window", "20", "--hop", "10", "--in"])
        .arg(&corpus)
        .arg("--out")
        .arg(&manifest_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = muquant::training::SegmentManifest::load(&manifest_path).unwrap();
    let count_for = |needle: &str| {
        manifest.entries.iter().filter(|e| e.path.to_string_lossy().contains(needle)).count()
    };
    assert_eq!(count_for("a_34s"), 2);
    assert_eq!(count_for("b_65s"), 5);
    assert_eq!(count_for("c_19s"), 0);
    assert_eq!(manifest.entries.len(), 7);
}

#[test]
fn segment_errors_on_empty_corpus() {
    let dir = test_dir("segment_empty");
    let corpus = dir.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    // one file, too short for any window
    write_wav(&corpus.join("tiny.wav"), &Waveform::new(vec![0.1; 16_000], 16_000)).unwrap();
    let out = bin()
        .args(["segment", "--window", "20", "--hop", "10", "--in"])
        .arg(&corpus)
        .arg("--out")
        .arg(dir.join("m.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "unprefixed error: {stderr}");
}

#[test]
fn classify_without_head_fails_cleanly() {
    let dir = test_dir("classify_nohead");
    // a pretrain checkpoint with no head
    let model =
        muquant::model::Model::<f32>::init(muquant::model::ModelConfig::desk(), 1).unwrap();
    let ckpt = muquant::training::Checkpoint::from_model(
        &model,
        muquant::training::CheckpointMeta {
            model: model.config.clone(),
            head: None,
            step: 0,
            epoch: 0,
            seed: 1,
            rng_state: Rng::new(1).state(),
        },
    );
    let ckpt_path = dir.join("m.mqw");
    ckpt.save(&ckpt_path).unwrap();
    let wav_path = dir.join("x.wav");
    let mut rng = Rng::new(2);
    write_wav(&wav_path, &render_tone(Timbre::Sine, 440.0, 1.0, 16_000, &mut rng)).unwrap();
    let out = bin().args(["classify", "--ckpt"]).arg(&ckpt_path).arg("--wav").arg(&wav_path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("head"));
}

#[test]
fn extract_writes_feature_json() {
    let dir = test_dir("extract");
    let model =
        muquant::model::Model::<f32>::init(muquant::model::ModelConfig::desk(), 4).unwrap();
    let ckpt = muquant::training::Checkpoint::from_model(
        &model,
        muquant::training::CheckpointMeta {
            model: model.config.clone(),
            head: None,
            step: 0,
            epoch: 0,
            seed: 4,
            rng_state: Rng::new(4).state(),
        },
    );
    let ckpt_path = dir.join("m.mqw");
    ckpt.save(&ckpt_path).unwrap();
    let wav_path = dir.join("x.wav");
    let mut rng = Rng::new(5);
    write_wav(&wav_path, &render_tone(Timbre::Square, 330.0, 1.0, 16_000, &mut rng)).unwrap();
    let out_path = dir.join("features.json");
    let out = bin()
        .args(["extract", "--ckpt"])
        .arg(&ckpt_path)
        .arg("--wav")
        .arg(&wav_path)
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(parsed["dim"], 64);
    assert_eq!(parsed["features"].as_array().unwrap().len(), 64);
}
