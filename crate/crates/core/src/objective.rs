//! Span masking, negative sampling, and the contrastive objective tying
//! context frames to their quantized targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, Scalar, TensorRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Probability that a frame starts a masked span.
    pub mask_prob: f64,
    /// Masked span length M in frames.
    pub mask_span: usize,
    /// Negative distractors K per masked frame.
    pub num_negatives: usize,
    /// Contrastive temperature kappa.
    pub temperature: f64,
    /// Weight of the codebook diversity penalty; 0 disables it, matching a
    /// purely contrastive loss.
    pub diversity_weight: f64,
}

impl ObjectiveConfig {
    pub fn paper() -> Self {
        ObjectiveConfig {
            mask_prob: 0.065,
            mask_span: 10,
            num_negatives: 100,
            temperature: 0.1,
            diversity_weight: 0.1,
        }
    }

    /// Desk frames are 40 ms (twice the full-size 20 ms hop), so the span
    /// halves to keep the masked time extent at 200 ms; p rises to keep the
    /// masked fraction near 49%.
    pub fn desk() -> Self {
        ObjectiveConfig { num_negatives: 10, mask_prob: 0.13, mask_span: 5, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config("objective.mask_prob must lie in [0, 1]".into()));
        }
        if self.mask_span == 0 {
            return Err(Error::Config("objective.mask_span must be positive".into()));
        }
        if self.num_negatives == 0 {
            return Err(Error::Config("objective.num_negatives must be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("objective.temperature must be positive".into()));
        }
        if self.diversity_weight < 0.0 {
            return Err(Error::Config("objective.diversity_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Frames selected for masking in one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    /// Sorted, deduplicated masked frame indices; never empty.
    pub indices: Vec<usize>,
    pub mask_prob: f64,
    pub span: usize,
}

/// Sample masked spans: every start offset (including the partial offsets
/// overlapping the segment start) is drawn independently with probability
/// `p` and masks the next `span` frames, so each frame's marginal masking
/// probability is 1 - (1-p)^span regardless of position. Degenerate draws
/// force uniformly placed spans until at least one frame (two when the
/// segment allows it, which negative sampling requires) is masked.
pub fn sample_mask(frames: usize, p: f64, span: usize, rng: &mut Rng) -> Result<MaskSpec> {
    if frames < span {
        return Err(Error::invalid(
            "sample_mask",
            format!("segment has {} frames, shorter than the mask span {}", frames, span),
        ));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("sample_mask", format!("mask probability {} outside [0, 1]", p)));
    }
    let mut masked = vec![false; frames];
    for offset in 0..(frames + span - 1) {
        // offset counts from -(span-1): candidate start = offset - (span-1)
        if rng.uniform() < p {
            let start = offset as i64 - (span as i64 - 1);
            let lo = start.max(0) as usize;
            let hi = ((start + span as i64) as usize).min(frames);
            for m in masked.iter_mut().take(hi).skip(lo) {
                *m = true;
            }
        }
    }
    let minimum = 2.min(frames);
    while masked.iter().filter(|&&m| m).count() < minimum {
        let start = rng.below(frames - span + 1);
        for m in masked.iter_mut().skip(start).take(span) {
            *m = true;
        }
    }
    let indices: Vec<usize> = masked.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    Ok(MaskSpec { indices, mask_prob: p, span })
}

/// Negative sample indices per masked frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    /// The anchors (same order as the mask's indices).
    pub anchors: Vec<usize>,
    /// Negatives per anchor, anchor-major [anchors.len() * k]. All entries
    /// are masked frames of the same segment, never the anchor itself.
    pub negatives: Vec<usize>,
    pub k: usize,
}

/// Draw K negatives per anchor, uniform over the other masked frames of the
/// same segment. Distinct when the pool allows it; with replacement when the
/// pool is smaller than K (keeps K fixed for a stable loss scale).
pub fn sample_negatives(mask: &MaskSpec, k: usize, rng: &mut Rng) -> Result<NegativeSet> {
    let pool_len = mask.indices.len();
    if pool_len < 2 {
        return Err(Error::invalid(
            "sample_negatives",
            format!("need at least 2 masked frames to draw negatives, got {}", pool_len),
        ));
    }
    if k == 0 {
        return Err(Error::invalid("sample_negatives", "k must be positive"));
    }
    let mut negatives = Vec::with_capacity(pool_len * k);
    for (a_pos, _) in mask.indices.iter().enumerate() {
        let others = pool_len - 1;
        let map = |j: usize| mask.indices[if j < a_pos { j } else { j + 1 }];
        if others >= k {
            for j in rng.sample_distinct(others, k) {
                negatives.push(map(j));
            }
        } else {
            for _ in 0..k {
                negatives.push(map(rng.below(others)));
            }
        }
    }
    Ok(NegativeSet { anchors: mask.indices.clone(), negatives, k })
}

/// Loss terms of one pre-training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub diversity: f64,
    pub total: f64,
}

/// Contrastive loss inside a graph: mean over masked frames t of
/// -log( exp(cos(c_t, q_t)/kappa) / sum over {q_t} + negatives of
/// exp(cos(c_t, q~)/kappa) ).
pub fn contrastive_loss_graph<S: Scalar>(
    graph: &mut Graph<S>,
    context: TensorRef,
    quantized: TensorRef,
    negatives: &NegativeSet,
    kappa: f64,
) -> Result<TensorRef> {
    if kappa <= 0.0 {
        return Err(Error::invalid("contrastive_loss", format!("temperature must be positive, got {}", kappa)));
    }
    let sc = graph.shape(context).to_vec();
    let sq = graph.shape(quantized).to_vec();
    if sc != sq {
        return Err(Error::shape(
            "contrastive_loss",
            format!("context shape {:?} and quantized shape {:?} disagree", sc, sq),
        ));
    }
    let frames = sc[0];
    let k = negatives.k;
    let mut c_idx = Vec::with_capacity(negatives.anchors.len() * (k + 1));
    let mut q_idx = Vec::with_capacity(negatives.anchors.len() * (k + 1));
    for (i, &t) in negatives.anchors.iter().enumerate() {
        if t >= frames {
            return Err(Error::invalid("contrastive_loss", format!("anchor {} out of range for {} frames", t, frames)));
        }
        // candidate 0 is the true target, then the K distractors
        for _ in 0..=k {
            c_idx.push(t);
        }
        q_idx.push(t);
        q_idx.extend_from_slice(&negatives.negatives[i * k..(i + 1) * k]);
    }
    let ca = graph.gather_rows(context, &c_idx)?;
    let qa = graph.gather_rows(quantized, &q_idx)?;
    let sims = graph.cosine_rows(ca, qa)?;
    let logits = graph.reshape(sims, vec![negatives.anchors.len(), k + 1])?;
    let logits = graph.scale(logits, S::from_f64(1.0 / kappa))?;
    let targets = vec![0usize; negatives.anchors.len()];
    graph.cross_entropy(logits, &targets)
}

/// Evaluate the contrastive loss on plain row-major buffers (f64); the
/// closed-form test path.
pub fn contrastive_loss_value(
    context: &[f64],
    quantized: &[f64],
    dim: usize,
    negatives: &NegativeSet,
    kappa: f64,
) -> Result<f64> {
    let frames = context.len() / dim;
    let mut graph = Graph::<f64>::new();
    let c = graph.constant(context.to_vec(), vec![frames, dim])?;
    let q = graph.constant(quantized.to_vec(), vec![frames, dim])?;
    let loss = contrastive_loss_graph(&mut graph, c, q, negatives, kappa)?;
    Ok(graph.scalar_value(loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_errors_when_segment_shorter_than_span() {
        let mut rng = Rng::new(1);
        assert!(sample_mask(5, 0.5, 10, &mut rng).is_err());
    }

    #[test]
    fn mask_saturates_at_p_one() {
        let mut rng = Rng::new(2);
        let spec = sample_mask(30, 1.0, 30, &mut rng).unwrap();
        assert_eq!(spec.indices, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn mask_forces_one_span_at_p_zero() {
        for seed in 0..50 {
            let mut rng = Rng::new(seed);
            let spec = sample_mask(40, 0.0, 7, &mut rng).unwrap();
            assert_eq!(spec.indices.len(), 7);
            // consecutive run
            for w in spec.indices.windows(2) {
                assert_eq!(w[1], w[0] + 1);
            }
            assert!(*spec.indices.last().unwrap() < 40);
        }
    }

    #[test]
    fn masked_fraction_matches_expectation() {
        // T=100, p=0.065, M=10: P(masked) = 1 - (1-p)^10 ~ 0.489 per frame
        let trials = 10_000u64;
        let mut total = 0usize;
        for seed in 0..trials {
            let mut rng = Rng::derive(99, &[seed]);
            let spec = sample_mask(100, 0.065, 10, &mut rng).unwrap();
            total += spec.indices.len();
        }
        let fraction = total as f64 / (trials as f64 * 100.0);
        assert!((fraction - 0.49).abs() <= 0.02, "measured fraction {fraction}");
    }

    #[test]
    fn negatives_pool_of_one_repeats_other_frame() {
        let mask = MaskSpec { indices: vec![4, 9], mask_prob: 0.1, span: 2 };
        let mut rng = Rng::new(3);
        let negs = sample_negatives(&mask, 3, &mut rng).unwrap();
        assert_eq!(negs.anchors, vec![4, 9]);
        assert_eq!(&negs.negatives[0..3], &[9, 9, 9]);
        assert_eq!(&negs.negatives[3..6], &[4, 4, 4]);
    }

    #[test]
    fn negatives_never_contain_anchor() {
        for seed in 0..200 {
            let mut rng = Rng::new(seed);
            let mask = sample_mask(60, 0.2, 5, &mut rng).unwrap();
            if mask.indices.len() < 2 {
                continue;
            }
            let negs = sample_negatives(&mask, 8, &mut rng).unwrap();
            for (i, &anchor) in negs.anchors.iter().enumerate() {
                for &n in &negs.negatives[i * 8..(i + 1) * 8] {
                    assert_ne!(n, anchor);
                    assert!(mask.indices.contains(&n));
                }
            }
        }
    }

    #[test]
    fn negative_draws_are_uniform() {
        // fixed pool of 12 masked frames, K=5 distinct draws per anchor:
        // marginal inclusion probability is K/11 per other frame
        let mask = MaskSpec { indices: (0..12).map(|i| i * 3).collect(), mask_prob: 0.1, span: 1 };
        let trials = 10_000u64;
        let k = 5usize;
        let mut counts = std::collections::BTreeMap::new();
        for seed in 0..trials {
            let mut rng = Rng::derive(7, &[seed]);
            let negs = sample_negatives(&mask, k, &mut rng).unwrap();
            // look at anchor 0 only
            for &n in &negs.negatives[0..k] {
                *counts.entry(n).or_insert(0u64) += 1;
            }
        }
        let p = k as f64 / 11.0;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        for (&frame, &c) in &counts {
            let freq = c as f64 / trials as f64;
            assert!(
                (freq - p).abs() <= 3.0 * se + 1e-9,
                "frame {frame}: freq {freq} vs {p} (se {se})"
            );
        }
        assert_eq!(counts.len(), 11);
    }

    #[test]
    fn symmetric_similarities_give_log_k_plus_one() {
        // all candidates identical -> every cosine equal -> loss = ln(K+1)
        let dim = 4;
        let frames = 6;
        let v = vec![0.3f64, -1.0, 0.5, 2.0];
        let mut q = Vec::new();
        for _ in 0..frames {
            q.extend_from_slice(&v);
        }
        let c: Vec<f64> = (0..frames * dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let mask = MaskSpec { indices: vec![0, 2, 3, 5], mask_prob: 0.1, span: 1 };
        let mut rng = Rng::new(5);
        let negs = sample_negatives(&mask, 3, &mut rng).unwrap();
        let loss = contrastive_loss_value(&c, &q, dim, &negs, 0.1).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn single_negative_closed_form() {
        // one anchor, K=1, cos(c, q+) = 1, cos(c, q-) = 0, kappa = 0.1
        // loss = ln(1 + e^{-10})
        let c = vec![1.0, 0.0, 1.0, 0.0]; // frames 0 and 1 identical direction
        let q = vec![2.0, 0.0, 0.0, 3.0]; // q0 parallel to c0, q1 orthogonal
        let negs = NegativeSet { anchors: vec![0], negatives: vec![1], k: 1 };
        let loss = contrastive_loss_value(&c, &q, 2, &negs, 0.1).unwrap();
        let want = (1.0 + (-10.0f64).exp()).ln();
        assert!((loss - want).abs() < 1e-12, "loss {loss} want {want}");
    }

    #[test]
    fn loss_non_increasing_in_positive_similarity() {
        // c = [1, 0]; q+ = [cos t, sin t] sweeps the positive similarity
        let negs = NegativeSet { anchors: vec![0], negatives: vec![1], k: 1 };
        let mut last = f64::NEG_INFINITY;
        for deg in (0..=90).step_by(5) {
            let t = (deg as f64).to_radians();
            let c = vec![1.0, 0.0, 0.0, 0.0];
            let q = vec![t.cos(), t.sin(), 0.0, 1.0]; // negative fixed orthogonal
            let loss = contrastive_loss_value(&c, &q, 2, &negs, 0.2).unwrap();
            // positive similarity decreases as deg grows, so loss must rise
            assert!(loss >= last - 1e-12, "deg {deg}: {loss} < {last}");
            last = loss;
        }
    }

    #[test]
    fn loss_invariant_to_positive_rescaling() {
        let dim = 3;
        let c = vec![0.2, -1.0, 0.4, 1.0, 0.3, -0.2, 0.7, 0.7, 0.1];
        let q = vec![1.0, 0.0, 0.5, -0.3, 0.8, 0.8, 0.0, -1.0, 0.25];
        let negs = NegativeSet { anchors: vec![0, 2], negatives: vec![2, 0], k: 1 };
        let base = contrastive_loss_value(&c, &q, dim, &negs, 0.1).unwrap();
        let scales = [3.0, 0.01, 170.0];
        let mut c2 = c.clone();
        for (row, &s) in scales.iter().enumerate() {
            for j in 0..dim {
                c2[row * dim + j] *= s;
            }
        }
        let scaled = contrastive_loss_value(&c2, &q, dim, &negs, 0.1).unwrap();
        assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn loss_rejects_nonpositive_temperature() {
        let negs = NegativeSet { anchors: vec![0], negatives: vec![1], k: 1 };
        let c = vec![1.0, 0.0, 0.0, 1.0];
        assert!(contrastive_loss_value(&c, &c, 2, &negs, 0.0).is_err());
        assert!(contrastive_loss_value(&c, &c, 2, &negs, -0.5).is_err());
    }

    #[test]
    fn objective_evaluation_is_bit_reproducible() {
        let run = || {
            let mut rng = Rng::derive(1234, &[1]);
            let mask = sample_mask(40, 0.2, 4, &mut rng).unwrap();
            let negs = sample_negatives(&mask, 5, &mut rng).unwrap();
            let dim = 6;
            let mut vrng = Rng::derive(1234, &[2]);
            let c: Vec<f64> = (0..40 * dim).map(|_| vrng.gaussian()).collect();
            let q: Vec<f64> = (0..40 * dim).map(|_| vrng.gaussian()).collect();
            contrastive_loss_value(&c, &q, dim, &negs, 0.1).unwrap()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
