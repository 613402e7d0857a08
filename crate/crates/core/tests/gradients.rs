//! Finite-difference verification of every differentiable operation and of
//! the complete pre-training loss graph, in 64-bit mode.

mod common;

use common::{finite_diff_check, random_data, tiny_model_config};
use muquant::model::{pretrain_graph, Model};
use muquant::quantizer::QuantizeMode;
use muquant::rng::Rng;
use muquant::tensor::{BoundParams, Graph, TensorRef};

const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

/// Reduce any tensor to a scalar through a fixed random weighting so every
/// output element influences the loss.
fn weighted_sum(g: &mut Graph<f64>, t: TensorRef, seed: u64) -> TensorRef {
    let n = g.data(t).len();
    let mut rng = Rng::derive(seed, &[0xAB]);
    let w: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
    let shape = g.shape(t).to_vec();
    let wt = g.constant(w, shape).unwrap();
    let prod = g.mul(t, wt).unwrap();
    g.sum_all(prod).unwrap()
}

fn check_over_seeds(name: &str, mut f: impl FnMut(u64) -> f64) {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let err = f(seed);
        if err > worst {
            worst = err;
        }
    }
    assert!(worst < TOL, "{name}: max relative gradient error {worst:e} >= {TOL:e}");
}

#[test]
fn grad_matmul() {
    check_over_seeds("matmul", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[3, 4], &mut rng), random_data(&[4, 2], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.matmul(l[0], l[1]).unwrap();
            weighted_sum(g, y, seed)
        })
    });
}

#[test]
fn grad_elementwise_add_sub_mul() {
    for op in ["add", "sub", "mul"] {
        check_over_seeds(op, |seed| {
            let mut rng = Rng::new(seed);
            let inputs = vec![random_data(&[3, 3], &mut rng), random_data(&[3, 3], &mut rng)];
            finite_diff_check(&inputs, |g, l| {
                let y = match op {
                    "add" => g.add(l[0], l[1]).unwrap(),
                    "sub" => g.sub(l[0], l[1]).unwrap(),
                    _ => g.mul(l[0], l[1]).unwrap(),
                };
                weighted_sum(g, y, seed)
            })
        });
    }
}

#[test]
fn grad_add_row_scale_add_scalar() {
    check_over_seeds("add_row", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[4, 3], &mut rng), random_data(&[3], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.add_row(l[0], l[1]).unwrap();
            weighted_sum(g, y, seed)
        })
    });
    check_over_seeds("scale+add_scalar", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[5], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.scale(l[0], 1.7).unwrap();
            let y = g.add_scalar(y, -0.3).unwrap();
            weighted_sum(g, y, seed)
        })
    });
}

#[test]
fn grad_transpose_reshape() {
    check_over_seeds("transpose+reshape", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[3, 4], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let t = g.transpose(l[0]).unwrap();
            let r = g.reshape(t, vec![2, 6]).unwrap();
            weighted_sum(g, r, seed)
        })
    });
}

#[test]
fn grad_conv1d_strided_and_grouped() {
    check_over_seeds("conv1d stride 2", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![
            random_data(&[2, 11], &mut rng),     // input
            random_data(&[3, 2, 3], &mut rng),   // kernel
            random_data(&[3], &mut rng),         // bias
        ];
        finite_diff_check(&inputs, |g, l| {
            let y = g.conv1d(l[0], l[1], l[2], 2).unwrap();
            weighted_sum(g, y, seed)
        })
    });
    check_over_seeds("conv1d grouped", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![
            random_data(&[4, 9], &mut rng),
            random_data(&[4, 2, 3], &mut rng), // groups = 2
            random_data(&[4], &mut rng),
        ];
        finite_diff_check(&inputs, |g, l| {
            let y = g.conv1d_grouped(l[0], l[1], l[2], 1, 2).unwrap();
            weighted_sum(g, y, seed)
        })
    });
}

#[test]
fn grad_pad_slice_concat() {
    check_over_seeds("pad_cols", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[2, 5], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.pad_cols(l[0], 2, 3).unwrap();
            weighted_sum(g, y, seed)
        })
    });
    check_over_seeds("slice+concat", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[3, 6], &mut rng), random_data(&[3, 2], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let a = g.slice_cols(l[0], 1, 3).unwrap();
            let b = g.slice_cols(l[0], 0, 2).unwrap();
            let y = g.concat_cols(&[a, l[1], b]).unwrap();
            weighted_sum(g, y, seed)
        })
    });
}

#[test]
fn grad_gelu_ln_exp() {
    check_over_seeds("gelu", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[7], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.gelu(l[0]).unwrap();
            weighted_sum(g, y, seed)
        })
    });
    check_over_seeds("ln+exp", |seed| {
        let mut rng = Rng::new(seed);
        // strictly positive inputs for ln
        let (shape, data) = random_data(&[6], &mut rng);
        let data: Vec<f64> = data.iter().map(|v| v.abs() + 0.5).collect();
        finite_diff_check(&[(shape, data)], |g, l| {
            let y = g.ln(l[0]).unwrap();
            let z = g.exp(y).unwrap();
            let w = g.ln(z).unwrap();
            weighted_sum(g, w, seed)
        })
    });
}

#[test]
fn grad_layer_norm() {
    check_over_seeds("layer_norm", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![
            random_data(&[4, 5], &mut rng),
            random_data(&[5], &mut rng),
            random_data(&[5], &mut rng),
        ];
        finite_diff_check(&inputs, |g, l| {
            let y = g.layer_norm(l[0], l[1], l[2], 1e-5).unwrap();
            weighted_sum(g, y, seed)
        })
    });
}

#[test]
fn grad_softmax() {
    check_over_seeds("softmax", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[3, 5], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.softmax(l[0]).unwrap();
            weighted_sum(g, y, seed)
        })
    });
}

#[test]
fn grad_reductions() {
    check_over_seeds("mean_axis+sum_all+mean_all", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[4, 3], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let m0 = g.mean_axis(l[0], 0).unwrap();
            let m1 = g.mean_axis(l[0], 1).unwrap();
            let s0 = weighted_sum(g, m0, seed);
            let s1 = weighted_sum(g, m1, seed.wrapping_add(1));
            let s2 = g.sum_all(l[0]).unwrap();
            let s3 = g.mean_all(l[0]).unwrap();
            let a = g.add(s0, s1).unwrap();
            let b = g.add(s2, s3).unwrap();
            g.add(a, b).unwrap()
        })
    });
}

#[test]
fn grad_gather_replace_rows() {
    check_over_seeds("gather_rows", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[4, 3], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.gather_rows(l[0], &[0, 2, 2, 3, 0]).unwrap();
            weighted_sum(g, y, seed)
        })
    });
    check_over_seeds("replace_rows", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[5, 3], &mut rng), random_data(&[3], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.replace_rows(l[0], l[1], &[1, 3]).unwrap();
            weighted_sum(g, y, seed)
        })
    });
}

#[test]
fn grad_cosine_rows() {
    check_over_seeds("cosine_rows", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[4, 5], &mut rng), random_data(&[4, 5], &mut rng)];
        finite_diff_check(&inputs, |g, l| {
            let y = g.cosine_rows(l[0], l[1]).unwrap();
            weighted_sum(g, y, seed)
        })
    });
}

#[test]
fn grad_cross_entropy() {
    check_over_seeds("cross_entropy", |seed| {
        let mut rng = Rng::new(seed);
        let inputs = vec![random_data(&[4, 6], &mut rng)];
        let targets: Vec<usize> = (0..4).map(|_| rng.below(6)).collect();
        finite_diff_check(&inputs, move |g, l| g.cross_entropy(l[0], &targets).unwrap())
    });
}

/// The full pipeline: encoder -> mask -> quantizer -> context ->
/// contrastive loss (+ diversity), differentiated with respect to every
/// parameter tensor. Runs the quantizer in its soft (fully differentiable)
/// mode: the straight-through estimator's surrogate gradient is by
/// construction not the derivative of its hard forward, so the hard path is
/// excluded from finite differencing and verified separately by its
/// defining identities.
#[test]
fn grad_full_pretrain_graph() {
    let cfg = tiny_model_config();
    check_over_seeds("full pretrain graph", |seed| {
        let model = Model::<f64>::init(cfg.clone(), seed).unwrap();
        let mut wave_rng = Rng::derive(seed, &[0x77]);
        let samples: Vec<f64> = (0..200).map(|_| wave_rng.gaussian() * 0.3).collect();

        // parameters become the finite-difference inputs, in name order
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        let inputs: Vec<(Vec<usize>, Vec<f64>)> =
            names.iter().map(|n| {
                let p = model.params.get(n).unwrap();
                (p.shape.clone(), p.data.clone())
            }).collect();

        let cfg = cfg.clone();
        let names2 = names.clone();
        let samples2 = samples.clone();
        finite_diff_check(&inputs, move |g, leaves| {
            // view the harness's leaves as named parameters
            let bp = BoundParams::from_refs(
                names2.iter().cloned().zip(leaves.iter().copied()).collect(),
            );
            let mut rng = Rng::derive(seed, &[0x78]);
            let out =
                pretrain_graph(g, &bp, &cfg, &samples2, 1.0, QuantizeMode::Soft, &mut rng).unwrap();
            out.total
        })
    });
}
