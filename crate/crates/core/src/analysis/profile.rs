//! Layer-wise similarity profiles: PWCCA of every Transformer block's
//! activations against the feature-encoder output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::parallel_map;
use crate::training::segment::SegmentManifest;

use super::cca::{cca, Mat};

/// One profile row: block index (1-based) and its similarity scores against
/// the encoder output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub layer: usize,
    pub mean_cca: f64,
    pub pwcca: f64,
}

/// Compute the similarity profile over evaluation clips. Takes the middle
/// `segment_seconds` of every manifest entry; shorter clips are skipped with
/// a warning, and it is an error if nothing survives. Frames pool across
/// clips before one CCA per block.
pub fn layer_similarity_profile(
    model: &Model<f32>,
    manifest: &SegmentManifest,
    segment_seconds: f64,
) -> Result<Vec<ProfileRow>> {
    let rate = model.config.encoder.sample_rate as f64;
    let segment_samples = (segment_seconds * rate).round() as usize;
    if segment_samples < model.config.encoder.min_input_len() {
        return Err(Error::Analysis(format!(
            "segment_seconds {} gives {} samples, below the encoder minimum {}",
            segment_seconds,
            segment_samples,
            model.config.encoder.min_input_len()
        )));
    }

    // middle window of each usable entry
    let mut windows = Vec::new();
    for entry in &manifest.entries {
        let len = (entry.duration_seconds * rate).round() as usize;
        if len < segment_samples {
            eprintln!(
                "warning: skipping {} ({}s window shorter than {}s)",
                entry.path.display(),
                entry.duration_seconds,
                segment_seconds
            );
            continue;
        }
        let start = (entry.start_seconds * rate).round() as usize + (len - segment_samples) / 2;
        windows.push((entry.path.clone(), start));
    }
    if windows.is_empty() {
        return Err(Error::Analysis("no clip is long enough for the requested segment length".into()));
    }

    let num_blocks = model.config.context.num_blocks;
    let acts: Vec<Result<(Vec<f64>, Vec<Vec<f64>>, usize)>> = parallel_map(&windows, |_, (path, start)| {
        let wave = read_wav(path)?.slice(*start, segment_samples);
        let (encoder_out, blocks) = model.all_layer_activations(&wave)?;
        let enc: Vec<f64> = encoder_out.data.iter().map(|&v| v as f64).collect();
        let per_block: Vec<Vec<f64>> =
            blocks.iter().map(|b| b.data.iter().map(|&v| v as f64).collect()).collect();
        Ok((enc, per_block, encoder_out.frames))
    });

    let d_z = model.config.encoder.output_dim();
    let d_c = model.config.context.model_dim;
    let mut enc_pool: Vec<f64> = Vec::new();
    let mut block_pool: Vec<Vec<f64>> = vec![Vec::new(); num_blocks];
    let mut total_frames = 0usize;
    for r in acts {
        let (enc, blocks, frames) = r?;
        enc_pool.extend_from_slice(&enc);
        for (pool, b) in block_pool.iter_mut().zip(&blocks) {
            pool.extend_from_slice(b);
        }
        total_frames += frames;
    }

    let enc_mat = Mat::from_rows(total_frames, d_z, enc_pool)?;
    let mut rows = Vec::with_capacity(num_blocks);
    for (b, pool) in block_pool.into_iter().enumerate() {
        let block_mat = Mat::from_rows(total_frames, d_c, pool)?;
        let result = cca(&block_mat, &enc_mat)?;
        rows.push(ProfileRow { layer: b + 1, mean_cca: result.mean_cca, pwcca: result.pwcca });
    }
    Ok(rows)
}

/// CSV: `layer,mean_cca,pwcca` with one row per Transformer block.
pub fn write_profile_csv(path: &Path, rows: &[ProfileRow]) -> Result<()> {
    let mut out = String::from("layer,mean_cca,pwcca\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.layer, r.mean_cca, r.pwcca));
    }
    std::fs::write(path, out).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}
