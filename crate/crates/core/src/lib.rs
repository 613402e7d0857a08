//! # muquant
//!
//! Self-supervised music representation learning at desk scale: contrastive
//! pre-training over quantized targets, downstream finetuning regimes, and
//! representation-analysis instruments (code/label co-occurrence, layer-wise
//! CCA/PWCCA similarity profiles).
//!
//! The pipeline is a raw-waveform model in four blocks:
//!
//! 1. a convolutional feature encoder mapping audio to latent frames,
//! 2. a Transformer context network over (masked) latent frames,
//! 3. a product quantizer with Gumbel-Softmax selection producing discrete
//!    targets, and
//! 4. a contrastive objective scoring each context frame against its
//!    quantized target and negative distractors.
//!
//! Everything runs on a small self-contained tensor library with
//! reverse-mode differentiation — no GPU, no external ML runtime — so the
//! whole system stays inspectable and bit-reproducible given a seed.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod audio;
pub mod context;
pub mod encoder;
pub mod error;
pub mod model;
pub mod objective;
pub mod quantizer;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
