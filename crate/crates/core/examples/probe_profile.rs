// scratch probe: desk-width (64-dim) model at full 12-block depth
use muquant::analysis::layer_similarity_profile;
use muquant::model::ModelConfig;
use muquant::synth::{generate_corpus, SynthConfig};
use muquant::training::{pretrain, segment_corpus, PretrainInit, TrainConfig};

fn main() {
    let dir = std::env::temp_dir().join("muquant_probe_profile7");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let synth = SynthConfig {
        seed: 7,
        pretrain_files: 32,
        pretrain_seconds: 30.0,
        train_clips: 0, valid_clips: 0, test_clips: 0,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&dir, &synth).unwrap();
    let manifest = segment_corpus(&corpus.pretrain_dir, 20.0, 10.0).unwrap();

    for pre in [true, false] {
        let mut cfg = ModelConfig::desk();
        cfg.context.num_blocks = 12;
        cfg.context.pre_norm = pre;
        let mut ckpt = None;
        let mut epoch = 0usize;
        while epoch < 120 {
            epoch += 60;
            let tc = TrainConfig { seed: 42, max_epochs: epoch, ..TrainConfig::desk() };
            let init = match ckpt.take() {
                Some(c) => PretrainInit::Resume(c),
                None => PretrainInit::Fresh(cfg.clone()),
            };
            let out = pretrain(&manifest, init, &tc, None).unwrap();
            let model = out.checkpoint.to_model().unwrap();
            let rows = layer_similarity_profile(&model, &manifest, 4.0).unwrap();
            let pw: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.pwcca)).collect();
            let loss = out.history.last().map(|h| h.loss).unwrap_or(f64::NAN);
            eprintln!("pre={} epochs={:3} loss={:.3} pwcca=[{}]", pre, epoch, loss, pw.join(","));
            ckpt = Some(out.checkpoint);
        }
    }
}
