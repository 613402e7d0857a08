//! Shared test oracles: central finite differences for gradient checking and
//! an independent generalized-eigenproblem CCA solver. Everything here is
//! deliberately written from scratch against the math, not the library
//! internals, so it can falsify them.
#![allow(dead_code)] // each test binary uses a different subset

use muquant::context::ContextConfig;
use muquant::encoder::{ConvSpec, EncoderConfig};
use muquant::model::ModelConfig;
use muquant::objective::ObjectiveConfig;
use muquant::quantizer::QuantizerConfig;
use muquant::rng::Rng;
use muquant::tensor::{Graph, TensorRef};

/// Relative error with a floor, as used by every gradient check.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Maximum relative error between analytic gradients and 64-bit central
/// finite differences (step 1e-5) over every element of every input.
///
/// `build` must construct the scalar loss deterministically from the given
/// leaves; it runs 1 + 2*numel times.
pub fn finite_diff_check<F>(inputs: &[(Vec<usize>, Vec<f64>)], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[TensorRef]) -> TensorRef,
{
    const STEP: f64 = 1e-5;

    // analytic gradients
    let mut graph = Graph::new();
    let leaves: Vec<TensorRef> = inputs
        .iter()
        .map(|(shape, data)| graph.leaf(data.clone(), shape.clone(), true).unwrap())
        .collect();
    let loss = build(&mut graph, &leaves);
    graph.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&l| graph.grad(l).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; graph.data(l).len()]))
        .collect();

    let eval = |perturbed: &[(Vec<usize>, Vec<f64>)]| -> f64 {
        let mut g = Graph::new();
        let ls: Vec<TensorRef> = perturbed
            .iter()
            .map(|(shape, data)| g.leaf(data.clone(), shape.clone(), false).unwrap())
            .collect();
        let loss = build(&mut g, &ls);
        g.scalar_value(loss)
    };

    let mut worst = 0.0f64;
    for (i, (_, data)) in inputs.iter().enumerate() {
        for e in 0..data.len() {
            let mut plus = inputs.to_vec();
            plus[i].1[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].1[e] -= STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let err = rel_err(analytic[i][e], fd);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

pub fn random_data(shape: &[usize], rng: &mut Rng) -> (Vec<usize>, Vec<f64>) {
    let n: usize = shape.iter().product();
    (shape.to_vec(), (0..n).map(|_| rng.gaussian()).collect())
}

/// Tiny but complete architecture for full-graph gradient checks.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layers: vec![
                ConvSpec { filters: 4, kernel: 6, stride: 5 },
                ConvSpec { filters: 4, kernel: 4, stride: 3 },
            ],
            normalize: true,
            standardize_input: false,
            sample_rate: 16_000,
        },
        quantizer: QuantizerConfig { groups: 2, entries_per_group: 3, entry_dim: 3, input_dim: 4, output_dim: 8 },
        context: ContextConfig {
            num_blocks: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 12,
            input_dim: 4,
            positional: true,
            pos_kernel: 4,
            pos_groups: 2,
            pre_norm: true,
        },
        objective: ObjectiveConfig {
            mask_prob: 0.4,
            mask_span: 2,
            num_negatives: 2,
            temperature: 0.1,
            diversity_weight: 0.1,
        },
    }
}

// ── Independent CCA oracle ──────────────────────────────────────────────
//
// Solves the generalized eigenproblem
//     Swy Syy^{-1} Syw u = rho^2 Sww u
// directly via Cholesky of Sww, an explicit Gauss-Jordan inverse of Syy and
// a from-scratch Jacobi eigenvalue iteration. No whitening, no SVD: a
// different algebraic route than the library implementation.

fn center_columns(data: &mut [f64], n: usize, cols: usize) {
    for c in 0..cols {
        let mut mean = 0.0;
        for r in 0..n {
            mean += data[r * cols + c];
        }
        mean /= n as f64;
        for r in 0..n {
            data[r * cols + c] -= mean;
        }
    }
}

fn gram(a: &[f64], b: &[f64], n: usize, ca: usize, cb: usize) -> Vec<f64> {
    // a^T b / (n-1), a is [n x ca], b is [n x cb]
    let mut out = vec![0.0; ca * cb];
    for r in 0..n {
        for i in 0..ca {
            let av = a[r * ca + i];
            for j in 0..cb {
                out[i * cb + j] += av * b[r * cb + j];
            }
        }
    }
    let denom = 1.0 / (n as f64 - 1.0);
    for v in &mut out {
        *v *= denom;
    }
    out
}

fn gauss_jordan_inverse(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        // partial pivot
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
                inv.swap(col * n + j, pivot * n + j);
            }
        }
        let d = a[col * n + col];
        assert!(d.abs() > 1e-300, "oracle: singular matrix");
        for j in 0..n {
            a[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[r * n + j] -= f * a[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    inv
}

fn cholesky_lower(m: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(sum > 0.0, "oracle: matrix not positive definite");
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    l
}

/// Solve L X = B for X with L lower triangular; B is [n x cols].
fn forward_substitute(l: &[f64], b: &[f64], n: usize, cols: usize) -> Vec<f64> {
    let mut x = vec![0.0; n * cols];
    for c in 0..cols {
        for i in 0..n {
            let mut v = b[i * cols + c];
            for k in 0..i {
                v -= l[i * n + k] * x[k * cols + c];
            }
            x[i * cols + c] = v / l[i * n + i];
        }
    }
    x
}

fn matmul_plain(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

fn transpose_plain(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Eigenvalues (descending) of a symmetric matrix; fresh Jacobi iteration.
fn jacobi_eigenvalues(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _ in 0..200 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q].abs();
            }
        }
        if off < 1e-15 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[p * n + i];
                    let aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
    vals
}

/// Canonical correlations of W [n x k] vs Y [n x j], descending.
pub fn cca_oracle(w: &[f64], n: usize, k: usize, y: &[f64], j: usize) -> Vec<f64> {
    let mut wc = w.to_vec();
    center_columns(&mut wc, n, k);
    let mut yc = y.to_vec();
    center_columns(&mut yc, n, j);

    let sww = gram(&wc, &wc, n, k, k);
    let syy = gram(&yc, &yc, n, j, j);
    let swy = gram(&wc, &yc, n, k, j);
    let syw = transpose_plain(&swy, k, j);

    let syy_inv = gauss_jordan_inverse(&syy, j);
    // M1 = Swy Syy^{-1} Syw  (k x k, symmetric)
    let m1 = matmul_plain(&matmul_plain(&swy, &syy_inv, k, j, j), &syw, k, j, k);

    let l = cholesky_lower(&sww, k);
    // B = L^{-1} M1 L^{-T}: first solve L X = M1, then L Z = X^T, B = Z^T
    let x = forward_substitute(&l, &m1, k, k);
    let xt = transpose_plain(&x, k, k);
    let z = forward_substitute(&l, &xt, k, k);
    let b = transpose_plain(&z, k, k);

    jacobi_eigenvalues(&b, k)
        .into_iter()
        .map(|lam| lam.clamp(0.0, 1.0).sqrt())
        .collect()
}
