//! Corpus segmentation, the pre-training loop, finetuning regimes, feature
//! extraction, and checkpointing.

pub mod checkpoint;
pub mod dataset;
pub mod finetune;
pub mod log;
pub mod optim;
pub mod pretrain;
pub mod segment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::TauSchedule;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use dataset::{LabeledClip, LabeledDataset, Split, Task};
pub use finetune::{classify, extract_features, finetune, FinetuneMode, FinetuneOutput, HeadConfig};
pub use pretrain::{pretrain, PretrainInit, PretrainOutput};
pub use segment::{segment_corpus, SegmentEntry, SegmentManifest};

/// Optimization settings shared by pre-training and finetuning. Learning
/// rates follow the downstream regimes: finetuned backbones train at
/// `lr_backbone` with the head at `lr_head`, while head-only feature
/// extraction uses `lr_head_only`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience in epochs (validation loss).
    pub patience: usize,
    pub lr_pretrain: f64,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub lr_head_only: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub tau: TauSchedule,
    /// Crop pre-training segments to at most this many seconds per step
    /// (seeded random offset); None trains on the full window.
    pub pretrain_crop_seconds: Option<f64>,
    /// Fixed duration labeled clips are cropped/padded to.
    pub clip_seconds: f64,
    /// Emit a checkpoint every N epochs during pre-training (0 = final only).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            seed: 42,
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            lr_pretrain: 5e-4,
            lr_backbone: 1e-5,
            lr_head: 1e-4,
            lr_head_only: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            // desk runs take hundreds of steps, not hundreds of thousands;
            // decay fast enough to actually reach the temperature floor
            tau: TauSchedule { decay: 0.995, ..TauSchedule::default() },
            pretrain_crop_seconds: Some(1.0),
            clip_seconds: 4.0,
            checkpoint_every: 0,
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            max_epochs: 1790,
            tau: TauSchedule::default(),
            pretrain_crop_seconds: None,
            checkpoint_every: 50,
            ..Self::desk()
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
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be >= 1".into()));
        }
        for (name, v) in [
            ("train.lr_pretrain", self.lr_pretrain),
            ("train.lr_backbone", self.lr_backbone),
            ("train.lr_head", self.lr_head),
            ("train.lr_head_only", self.lr_head_only),
        ] {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.clip_seconds <= 0.0 {
            return Err(Error::Config("train.clip_seconds must be positive".into()));
        }
        if let Some(c) = self.pretrain_crop_seconds {
            if c <= 0.0 {
                return Err(Error::Config("train.pretrain_crop_seconds must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Worker cap: MUQUANT_THREADS when set, else the available parallelism.
pub fn max_workers() -> usize {
    if let Ok(v) = std::env::var("MUQUANT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Map `f` over items on up to `max_workers()` threads. Results keep item
/// order, and each item's computation is independent and seeded by index, so
/// output is identical for any thread count.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = max_workers().min(items.len()).max(1);
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_ref = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                let mut guard = slots_ref.lock().unwrap();
                guard[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}
