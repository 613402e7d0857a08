//! Canonical correlation analysis and its projection-weighted variant.
//!
//! Given W (n x k) and Y (n x j), the canonical correlations rho_i are the
//! maximal correlations over projection pairs corr(W u_w, Y u_y). Computed
//! by column centering, covariance whitening (inverse symmetric square
//! roots with a small ridge on the diagonals) and an SVD of the whitened
//! cross-covariance. All analysis math runs in f64.

use crate::error::{Error, Result};

/// Dense row-major f64 matrix, just big enough for the analysis paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Analysis(format!(
                "matrix data length {} does not match {} x {}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self.at(i, p);
                if a == 0.0 {
                    continue;
                }
                for jj in 0..other.cols {
                    out.data[i * other.cols + jj] += a * other.at(p, jj);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    /// Subtract each column's mean in place.
    pub fn center_columns(&mut self) {
        for c in 0..self.cols {
            let mut mean = 0.0;
            for r in 0..self.rows {
                mean += self.at(r, c);
            }
            mean /= self.rows as f64;
            for r in 0..self.rows {
                let v = self.at(r, c) - mean;
                self.set(r, c, v);
            }
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues desc, eigenvectors as columns in the same order).
pub fn sym_eig(a: &Mat) -> (Vec<f64>, Mat) {
    debug_assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = m.data.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.at(p, q) * m.at(p, q);
            }
        }
        if off.sqrt() < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m.at(i, p);
                    let miq = m.at(i, q);
                    m.set(i, p, c * mip - s * miq);
                    m.set(i, q, s * mip + c * miq);
                }
                for i in 0..n {
                    let mpi = m.at(p, i);
                    let mqi = m.at(q, i);
                    m.set(p, i, c * mpi - s * mqi);
                    m.set(q, i, s * mpi + c * mqi);
                }
                for i in 0..n {
                    let vip = v.at(i, p);
                    let viq = v.at(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a_, &b_| m.at(b_, b_).partial_cmp(&m.at(a_, a_)).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| m.at(i, i)).collect();
    let mut vecs = Mat::zeros(n, n);
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            vecs.set(r, new_c, v.at(r, old_c));
        }
    }
    (vals, vecs)
}

/// Inverse symmetric square root of a PSD matrix via eigendecomposition.
fn inv_sqrt_psd(a: &Mat) -> Mat {
    let (vals, vecs) = sym_eig(a);
    let n = a.rows;
    let floor = vals[0].abs().max(1e-300) * 1e-14;
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for e in 0..n {
                let lam = vals[e].max(floor);
                acc += vecs.at(i, e) * vecs.at(j, e) / lam.sqrt();
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Full CCA output.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaResult {
    /// Canonical correlation coefficients, descending, clamped to [0, 1].
    pub coefficients: Vec<f64>,
    /// Directions for W, one per coefficient (columns of length k).
    pub w_directions: Mat,
    /// Directions for Y (columns of length j).
    pub y_directions: Mat,
    /// Mean of the coefficients.
    pub mean_cca: f64,
    /// Projection-weighted mean.
    pub pwcca: f64,
    /// The projection weights (non-negative, sum to 1).
    pub pwcca_weights: Vec<f64>,
}

fn check_input(name: &str, m: &Mat) -> Result<()> {
    if m.rows <= m.cols {
        return Err(Error::Analysis(format!(
            "{}: need more rows than columns (rank), got {} x {}",
            name, m.rows, m.cols
        )));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Analysis(format!("{}: input contains non-finite values", name)));
    }
    Ok(())
}

/// Relative ridge added to covariance diagonals for numerical stability.
const RIDGE_SCALE: f64 = 1e-8;

/// Canonical correlation analysis of W (n x k) against Y (n x j). The number
/// of coefficients is min(k, j); both orders of arguments work. PWCCA
/// weights are computed from W's canonical projections.
pub fn cca(w: &Mat, y: &Mat) -> Result<CcaResult> {
    if w.rows != y.rows {
        return Err(Error::Analysis(format!(
            "row/frame counts disagree: {} vs {}",
            w.rows, y.rows
        )));
    }
    check_input("W", w)?;
    check_input("Y", y)?;
    let n = w.rows;
    let k = w.cols;
    let j = y.cols;
    let r = k.min(j);

    let mut wc = w.clone();
    wc.center_columns();
    let mut yc = y.clone();
    yc.center_columns();

    let denom = 1.0 / (n as f64 - 1.0);
    let mut sww = wc.transpose().matmul(&wc);
    let mut syy = yc.transpose().matmul(&yc);
    let swy = {
        let mut m = wc.transpose().matmul(&yc);
        for v in &mut m.data {
            *v *= denom;
        }
        m
    };
    for v in &mut sww.data {
        *v *= denom;
    }
    for v in &mut syy.data {
        *v *= denom;
    }
    add_ridge(&mut sww);
    add_ridge(&mut syy);

    let isw = inv_sqrt_psd(&sww);
    let isy = inv_sqrt_psd(&syy);
    // whitened cross-covariance
    let m = isw.matmul(&swy).matmul(&isy); // k x j

    // singular values/vectors of m via the smaller gram matrix
    let (rho, u, v) = if k <= j {
        let gram = m.matmul(&m.transpose()); // k x k
        let (vals, u) = sym_eig(&gram);
        let rho: Vec<f64> = vals.iter().take(r).map(|&l| l.max(0.0).sqrt().min(1.0)).collect();
        let mut v = Mat::zeros(j, r);
        let mt = m.transpose(); // j x k
        for c in 0..r {
            if rho[c] > 1e-12 {
                for row in 0..j {
                    let mut acc = 0.0;
                    for e in 0..k {
                        acc += mt.at(row, e) * u.at(e, c);
                    }
                    v.set(row, c, acc / rho[c]);
                }
            }
        }
        let mut u_r = Mat::zeros(k, r);
        for c in 0..r {
            for row in 0..k {
                u_r.set(row, c, u.at(row, c));
            }
        }
        (rho, u_r, v)
    } else {
        let gram = m.transpose().matmul(&m); // j x j
        let (vals, v) = sym_eig(&gram);
        let rho: Vec<f64> = vals.iter().take(r).map(|&l| l.max(0.0).sqrt().min(1.0)).collect();
        let mut u = Mat::zeros(k, r);
        for c in 0..r {
            if rho[c] > 1e-12 {
                for row in 0..k {
                    let mut acc = 0.0;
                    for e in 0..j {
                        acc += m.at(row, e) * v.at(e, c);
                    }
                    u.set(row, c, acc / rho[c]);
                }
            }
        }
        let mut v_r = Mat::zeros(j, r);
        for c in 0..r {
            for row in 0..j {
                v_r.set(row, c, v.at(row, c));
            }
        }
        (rho, u, v_r)
    };

    // canonical directions in original coordinates
    let w_directions = isw.matmul(&u); // k x r
    let y_directions = isy.matmul(&v); // j x r

    let mean_cca = rho.iter().sum::<f64>() / r as f64;

    // projection weights: how much of W's columns the i-th canonical
    // projection accounts for
    let projections = wc.matmul(&w_directions); // n x r
    let mut weights = vec![0.0f64; r];
    for (i, wt) in weights.iter_mut().enumerate() {
        let h = projections.column(i);
        let mut acc = 0.0;
        for c in 0..k {
            let col = wc.column(c);
            let dot: f64 = h.iter().zip(&col).map(|(a, b)| a * b).sum();
            acc += dot.abs();
        }
        *wt = acc;
    }
    let wsum: f64 = weights.iter().sum();
    if wsum > 0.0 {
        for w_ in &mut weights {
            *w_ /= wsum;
        }
    } else {
        let uniform = 1.0 / r as f64;
        weights.iter_mut().for_each(|w_| *w_ = uniform);
    }
    let pwcca = weights.iter().zip(&rho).map(|(a, b)| a * b).sum();

    Ok(CcaResult { coefficients: rho, w_directions, y_directions, mean_cca, pwcca, pwcca_weights: weights })
}

fn add_ridge(m: &mut Mat) {
    let n = m.rows;
    let trace: f64 = (0..n).map(|i| m.at(i, i)).sum();
    let ridge = RIDGE_SCALE * (trace / n as f64).max(1e-300);
    for i in 0..n {
        let v = m.at(i, i) + ridge;
        m.set(i, i, v);
    }
}

/// Projection-weighted CCA score only.
pub fn pwcca(w: &Mat, y: &Mat) -> Result<f64> {
    Ok(cca(w, y)?.pwcca)
}
