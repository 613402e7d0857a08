//! Context network: a bidirectional Transformer over (masked) latent frames.
//!
//! Pre-norm residual blocks, multi-head attention without any causal mask,
//! and a single convolutional positional-embedding layer. The input
//! projection from the encoder's latent dimension lives here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{BoundParams, Graph, ParamStore, Scalar, TensorRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub num_blocks: usize,
    /// Model dimension l of the context representations.
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Latent input dimension d_z (the encoder output width).
    pub input_dim: usize,
    /// Enable the convolutional positional embedding.
    pub positional: bool,
    pub pos_kernel: usize,
    pub pos_groups: usize,
    /// Pre-norm blocks (x + f(norm(x))) when true; post-norm
    /// (norm(x + f(x))) when false.
    #[serde(default = "default_pre_norm")]
    pub pre_norm: bool,
}

fn default_pre_norm() -> bool {
    true
}

impl ContextConfig {
    /// 12 blocks, 768-dim vectors, 12 heads, 3072 FFN.
    pub fn paper() -> Self {
        ContextConfig {
            num_blocks: 12,
            model_dim: 768,
            heads: 12,
            ffn_dim: 3072,
            input_dim: 512,
            positional: true,
            pos_kernel: 128,
            pos_groups: 16,
            pre_norm: true,
        }
    }

    pub fn desk() -> Self {
        ContextConfig {
            num_blocks: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 128,
            input_dim: 64,
            positional: true,
            pos_kernel: 8,
            pos_groups: 4,
            pre_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.model_dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("context: blocks, model_dim, heads and ffn_dim must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "context.model_dim {} must be divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.positional {
            if self.pos_kernel == 0 || self.pos_groups == 0 {
                return Err(Error::Config("context.pos_kernel and pos_groups must be positive".into()));
            }
            if self.model_dim % self.pos_groups != 0 {
                return Err(Error::Config(format!(
                    "context.model_dim {} must be divisible by pos_groups {}",
                    self.model_dim, self.pos_groups
                )));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn init_params<S: Scalar>(&self, params: &mut ParamStore<S>, rng: &mut Rng) {
        let d = self.model_dim;
        let std_in = 1.0 / (self.input_dim as f64).sqrt();
        params.insert_gaussian("context.in_proj.weight", vec![self.input_dim, d], std_in, rng);
        params.insert_zeros("context.in_proj.bias", vec![d]);
        params.insert_gaussian("context.mask_embed", vec![d], 0.1, rng);
        if self.positional {
            let fan_in = (d / self.pos_groups) * self.pos_kernel;
            params.insert_gaussian(
                "context.pos_conv.weight",
                vec![d, d / self.pos_groups, self.pos_kernel],
                1.0 / (fan_in as f64).sqrt(),
                rng,
            );
            params.insert_zeros("context.pos_conv.bias", vec![d]);
        }
        let std_proj = 1.0 / (d as f64).sqrt();
        for b in 0..self.num_blocks {
            let p = |suffix: &str| format!("context.block{}.{}", b, suffix);
            params.insert_ones(p("ln1.gamma"), vec![d]);
            params.insert_zeros(p("ln1.beta"), vec![d]);
            for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
                params.insert_gaussian(p(w), vec![d, d], std_proj, rng);
            }
            for b2 in ["attn.bq", "attn.bk", "attn.bv", "attn.bo"] {
                params.insert_zeros(p(b2), vec![d]);
            }
            params.insert_ones(p("ln2.gamma"), vec![d]);
            params.insert_zeros(p("ln2.beta"), vec![d]);
            params.insert_gaussian(p("ffn.w1"), vec![d, self.ffn_dim], std_proj, rng);
            params.insert_zeros(p("ffn.b1"), vec![self.ffn_dim]);
            params.insert_gaussian(p("ffn.w2"), vec![self.ffn_dim, d], 1.0 / (self.ffn_dim as f64).sqrt(), rng);
            params.insert_zeros(p("ffn.b2"), vec![d]);
        }
    }
}

/// Context frames plus optional per-block retention.
pub struct ContextGraphOut {
    /// Final block output [T, model_dim].
    pub values: TensorRef,
    /// Output of every block (only populated when requested); exactly
    /// `num_blocks` entries, the last one equal to `values`.
    pub per_layer: Vec<TensorRef>,
}

/// One Transformer block; norm placement per config.
fn block_forward<S: Scalar>(
    graph: &mut Graph<S>,
    params: &BoundParams,
    cfg: &ContextConfig,
    idx: usize,
    x: TensorRef,
) -> Result<TensorRef> {
    let p = |suffix: &str| format!("context.block{}.{}", idx, suffix);
    let dh = cfg.head_dim();
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());

    let ln1_g = params.get(&p("ln1.gamma"))?;
    let ln1_b = params.get(&p("ln1.beta"))?;
    let a = if cfg.pre_norm { graph.layer_norm(x, ln1_g, ln1_b, 1e-5)? } else { x };

    let q = graph.matmul(a, params.get(&p("attn.wq"))?)?;
    let q = graph.add_row(q, params.get(&p("attn.bq"))?)?;
    let k = graph.matmul(a, params.get(&p("attn.wk"))?)?;
    let k = graph.add_row(k, params.get(&p("attn.bk"))?)?;
    let v = graph.matmul(a, params.get(&p("attn.wv"))?)?;
    let v = graph.add_row(v, params.get(&p("attn.bv"))?)?;

    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = graph.slice_cols(q, h * dh, dh)?;
        let kh = graph.slice_cols(k, h * dh, dh)?;
        let vh = graph.slice_cols(v, h * dh, dh)?;
        let kt = graph.transpose(kh)?;
        let scores = graph.matmul(qh, kt)?;
        let scores = graph.scale(scores, scale)?;
        let attn = graph.softmax(scores)?;
        heads.push(graph.matmul(attn, vh)?);
    }
    let concat = graph.concat_cols(&heads)?;
    let o = graph.matmul(concat, params.get(&p("attn.wo"))?)?;
    let o = graph.add_row(o, params.get(&p("attn.bo"))?)?;
    let mut x = graph.add(x, o)?;
    if !cfg.pre_norm {
        x = graph.layer_norm(x, ln1_g, ln1_b, 1e-5)?;
    }

    let ln2_g = params.get(&p("ln2.gamma"))?;
    let ln2_b = params.get(&p("ln2.beta"))?;
    let b = if cfg.pre_norm { graph.layer_norm(x, ln2_g, ln2_b, 1e-5)? } else { x };
    let f = graph.matmul(b, params.get(&p("ffn.w1"))?)?;
    let f = graph.add_row(f, params.get(&p("ffn.b1"))?)?;
    let f = graph.gelu(f)?;
    let f = graph.matmul(f, params.get(&p("ffn.w2"))?)?;
    let f = graph.add_row(f, params.get(&p("ffn.b2"))?)?;
    let mut out = graph.add(x, f)?;
    if !cfg.pre_norm {
        out = graph.layer_norm(out, ln2_g, ln2_b, 1e-5)?;
    }
    Ok(out)
}

/// Convolutional positional embedding added to the input.
fn positional_embedding<S: Scalar>(
    graph: &mut Graph<S>,
    params: &BoundParams,
    cfg: &ContextConfig,
    x: TensorRef,
) -> Result<TensorRef> {
    let frames = graph.shape(x)[0];
    let xt = graph.transpose(x)?; // [D, T]
    let half = cfg.pos_kernel / 2;
    let padded = graph.pad_cols(xt, half, half)?;
    let w = params.get("context.pos_conv.weight")?;
    let b = params.get("context.pos_conv.bias")?;
    let conv = graph.conv1d_grouped(padded, w, b, 1, cfg.pos_groups)?;
    // even kernels yield one extra frame; trim to T
    let trimmed = if graph.shape(conv)[1] != frames {
        graph.slice_cols(conv, 0, frames)?
    } else {
        conv
    };
    let act = graph.gelu(trimmed)?;
    graph.transpose(act)
}

/// Full context forward. `mask_rows` replaces the listed frames with the
/// learned mask embedding (training mode); analysis passes `None`.
pub fn contextualize_graph<S: Scalar>(
    graph: &mut Graph<S>,
    params: &BoundParams,
    cfg: &ContextConfig,
    z: TensorRef,
    mask_rows: Option<&[usize]>,
    retain_layers: bool,
) -> Result<ContextGraphOut> {
    let shape = graph.shape(z).to_vec();
    if shape.len() != 2 || shape[1] != cfg.input_dim {
        return Err(Error::shape(
            "contextualize",
            format!("latent frames have shape {:?}, want [T, {}]", shape, cfg.input_dim),
        ));
    }
    if shape[0] == 0 {
        return Err(Error::invalid("contextualize", "no frames to contextualize"));
    }
    let w_in = params.get("context.in_proj.weight")?;
    let b_in = params.get("context.in_proj.bias")?;
    let mut x = graph.matmul(z, w_in)?;
    x = graph.add_row(x, b_in)?;

    if let Some(rows) = mask_rows {
        let embed = params.get("context.mask_embed")?;
        x = graph.replace_rows(x, embed, rows)?;
    }

    if cfg.positional {
        let pos = positional_embedding(graph, params, cfg, x)?;
        x = graph.add(x, pos)?;
    }

    let mut per_layer = Vec::new();
    for bidx in 0..cfg.num_blocks {
        x = block_forward(graph, params, cfg, bidx, x)?;
        if retain_layers {
            per_layer.push(x);
        }
    }
    Ok(ContextGraphOut { values: x, per_layer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_like(input_dim: usize) -> ContextConfig {
        ContextConfig { input_dim, ..ContextConfig::desk() }
    }

    fn run_context(
        cfg: &ContextConfig,
        z: &[f32],
        frames: usize,
        mask: Option<&[usize]>,
        seed: u64,
    ) -> (Vec<f32>, Vec<Vec<f32>>) {
        let mut params = ParamStore::<f32>::new();
        let mut rng = Rng::new(seed);
        cfg.init_params(&mut params, &mut rng);
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&params, &mut graph, |_| false).unwrap();
        let zref = graph.constant(z.to_vec(), vec![frames, cfg.input_dim]).unwrap();
        let out = contextualize_graph(&mut graph, &bound, cfg, zref, mask, true).unwrap();
        let values = graph.data(out.values).to_vec();
        let layers = out.per_layer.iter().map(|&r| graph.data(r).to_vec()).collect();
        (values, layers)
    }

    #[test]
    fn desk_shape_contract() {
        let cfg = ContextConfig::desk();
        let mut rng = Rng::new(2);
        let z: Vec<f32> = (0..5 * cfg.input_dim).map(|_| rng.gaussian() as f32).collect();
        let (values, layers) = run_context(&cfg, &z, 5, None, 1);
        assert_eq!(values.len(), 5 * 64);
        assert_eq!(layers.len(), cfg.num_blocks);
        assert_eq!(layers.last().unwrap(), &values);
    }

    #[test]
    fn attention_is_permutation_equivariant_without_positions() {
        let mut cfg = desk_like(16);
        cfg.positional = false;
        cfg.model_dim = 16;
        cfg.heads = 2;
        cfg.ffn_dim = 24;
        cfg.num_blocks = 2;
        let frames = 6;
        let mut rng = Rng::new(8);
        let z: Vec<f32> = (0..frames * cfg.input_dim).map(|_| rng.gaussian() as f32).collect();
        let (base, _) = run_context(&cfg, &z, frames, None, 3);

        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut zp = vec![0.0f32; z.len()];
        for (dst, &src) in perm.iter().enumerate() {
            zp[dst * cfg.input_dim..(dst + 1) * cfg.input_dim]
                .copy_from_slice(&z[src * cfg.input_dim..(src + 1) * cfg.input_dim]);
        }
        let (permuted, _) = run_context(&cfg, &zp, frames, None, 3);
        for (dst, &src) in perm.iter().enumerate() {
            let a = &permuted[dst * cfg.model_dim..(dst + 1) * cfg.model_dim];
            let b = &base[src * cfg.model_dim..(src + 1) * cfg.model_dim];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-5, "row {dst} differs");
            }
        }
    }

    #[test]
    fn paper_preset_retains_twelve_layers() {
        let cfg = ContextConfig::paper();
        let mut rng = Rng::new(4);
        let z: Vec<f32> = (0..5 * cfg.input_dim).map(|_| rng.gaussian() as f32).collect();
        let (values, layers) = run_context(&cfg, &z, 5, None, 9);
        assert_eq!(layers.len(), 12);
        for layer in &layers {
            assert_eq!(layer.len(), 5 * 768);
        }
        assert_eq!(values.len(), 5 * 768);
    }

    #[test]
    fn deterministic_given_weights_and_input() {
        let cfg = ContextConfig::desk();
        let mut rng = Rng::new(6);
        let z: Vec<f32> = (0..7 * cfg.input_dim).map(|_| rng.gaussian() as f32).collect();
        let a = run_context(&cfg, &z, 7, None, 12);
        let b = run_context(&cfg, &z, 7, None, 12);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn masking_changes_only_training_forward() {
        let cfg = ContextConfig::desk();
        let mut rng = Rng::new(10);
        let z: Vec<f32> = (0..8 * cfg.input_dim).map(|_| rng.gaussian() as f32).collect();
        let (unmasked, _) = run_context(&cfg, &z, 8, None, 30);
        let (masked, _) = run_context(&cfg, &z, 8, Some(&[2, 3]), 30);
        assert_ne!(unmasked, masked);
        let (unmasked2, _) = run_context(&cfg, &z, 8, None, 30);
        assert_eq!(unmasked, unmasked2);
    }

    #[test]
    fn layer_dump_resumes_to_same_final_output() {
        let cfg = ContextConfig::desk();
        let mut rng = Rng::new(21);
        let frames = 6;
        let z: Vec<f32> = (0..frames * cfg.input_dim).map(|_| rng.gaussian() as f32).collect();

        let mut params = ParamStore::<f32>::new();
        let mut prng = Rng::new(33);
        cfg.init_params(&mut params, &mut prng);

        let mut graph = Graph::new();
        let bound = BoundParams::bind(&params, &mut graph, |_| false).unwrap();
        let zref = graph.constant(z.clone(), vec![frames, cfg.input_dim]).unwrap();
        let out = contextualize_graph(&mut graph, &bound, &cfg, zref, None, true).unwrap();
        let final_values = graph.data(out.values).to_vec();
        let dump0 = graph.data(out.per_layer[0]).to_vec();

        // feed block 0's dump through block 1 in a fresh graph
        let mut graph2 = Graph::new();
        let bound2 = BoundParams::bind(&params, &mut graph2, |_| false).unwrap();
        let mut x = graph2.constant(dump0, vec![frames, cfg.model_dim]).unwrap();
        for b in 1..cfg.num_blocks {
            x = block_forward(&mut graph2, &bound2, &cfg, b, x).unwrap();
        }
        let resumed = graph2.data(x);
        for (a, b) in final_values.iter().zip(resumed) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
