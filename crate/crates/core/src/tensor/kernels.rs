//! Raw numeric kernels on flat row-major slices, shared by forward and
//! backward passes. No allocation beyond the caller-provided output.

use super::scalar::Scalar;

/// c[m,n] += a[m,k] @ b[k,n] (set `accumulate=false` to overwrite).
pub fn matmul<S: Scalar>(
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [S],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !accumulate {
        out.fill(S::ZERO);
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += a_ip * b_row[j];
            }
        }
    }
}

/// out[k,n] += a^T[k,m] @ b[m,n] where a is stored [m,k].
pub fn matmul_at_b<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += a_ip * b_row[j];
            }
        }
    }
}

/// out[m,k] += a[m,n] @ b^T[n,k] where b is stored [k,n].
pub fn matmul_a_bt<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize, out: &mut [S]) {
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = S::ZERO;
            for j in 0..n {
                acc += a_row[j] * b_row[j];
            }
            out_row[p] += acc;
        }
    }
}

/// Output length of a valid (no padding) 1-D convolution.
pub fn conv1d_out_len(len: usize, width: usize, stride: usize) -> usize {
    debug_assert!(len >= width && stride >= 1);
    (len - width) / stride + 1
}

/// y[cout, lout] = conv1d(x[cin, l], w[cout, cin/groups, width], bias[cout]).
pub fn conv1d_forward<S: Scalar>(
    x: &[S],
    w: &[S],
    bias: &[S],
    cin: usize,
    len: usize,
    cout: usize,
    width: usize,
    stride: usize,
    groups: usize,
    out: &mut [S],
) {
    let lout = conv1d_out_len(len, width, stride);
    let gin = cin / groups;
    let gout = cout / groups;
    debug_assert_eq!(out.len(), cout * lout);
    for o in 0..cout {
        let group = o / gout;
        let y_row = &mut out[o * lout..(o + 1) * lout];
        y_row.fill(bias[o]);
        for ig in 0..gin {
            let i = group * gin + ig;
            let x_row = &x[i * len..(i + 1) * len];
            let w_row = &w[(o * gin + ig) * width..(o * gin + ig + 1) * width];
            for t in 0..lout {
                let base = t * stride;
                let mut acc = S::ZERO;
                for (dw, &wv) in w_row.iter().enumerate() {
                    acc += x_row[base + dw] * wv;
                }
                y_row[t] += acc;
            }
        }
    }
}

/// Accumulates input/weight/bias gradients for conv1d given dL/dy.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    dy: &[S],
    cin: usize,
    len: usize,
    cout: usize,
    width: usize,
    stride: usize,
    groups: usize,
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    dbias: Option<&mut [S]>,
) {
    let lout = conv1d_out_len(len, width, stride);
    let gin = cin / groups;
    let gout = cout / groups;
    if let Some(dbias) = dbias {
        for o in 0..cout {
            let dy_row = &dy[o * lout..(o + 1) * lout];
            let mut acc = S::ZERO;
            for &g in dy_row {
                acc += g;
            }
            dbias[o] += acc;
        }
    }
    if let Some(dw) = dw {
        for o in 0..cout {
            let group = o / gout;
            let dy_row = &dy[o * lout..(o + 1) * lout];
            for ig in 0..gin {
                let i = group * gin + ig;
                let x_row = &x[i * len..(i + 1) * len];
                let dw_row = &mut dw[(o * gin + ig) * width..(o * gin + ig + 1) * width];
                for t in 0..lout {
                    let g = dy_row[t];
                    let base = t * stride;
                    for (dwi, dst) in dw_row.iter_mut().enumerate() {
                        *dst += g * x_row[base + dwi];
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for o in 0..cout {
            let group = o / gout;
            let dy_row = &dy[o * lout..(o + 1) * lout];
            for ig in 0..gin {
                let i = group * gin + ig;
                let dx_row = &mut dx[i * len..(i + 1) * len];
                let w_row = &w[(o * gin + ig) * width..(o * gin + ig + 1) * width];
                for t in 0..lout {
                    let g = dy_row[t];
                    let base = t * stride;
                    for (dwi, &wv) in w_row.iter().enumerate() {
                        dx_row[base + dwi] += g * wv;
                    }
                }
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximation GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (S::ONE + inner.tanh())
}

pub fn gelu_derivative<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (S::ONE + three * a * x * x);
    half * (S::ONE + t) + half * x * (S::ONE - t * t) * dinner
}
