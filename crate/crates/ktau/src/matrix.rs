//! Dense row-major data matrix plus the small symmetric-matrix kernels
//! (Cholesky, cyclic Jacobi) used by the scatter estimators and the
//! scenario generator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// n observations by p features, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data matrix"));
        }
        Ok(Self { n, p, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("data matrix rows"));
        }
        let p = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::CsvParse {
                    row: i,
                    col: r.len(),
                    reason: format!("expected {p} columns"),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), p, data)
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.p)
    }

    /// Sub-matrix containing the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> DataMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DataMatrix {
            n: idx.len(),
            p: self.p,
            data,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Lower-triangular Cholesky factor of a symmetric matrix stored row-major
/// (p x p). Returns `None` when the matrix is not positive definite.
pub fn cholesky(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i * p + j];
            for k in 0..j {
                sum -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * p + i] = sum.sqrt();
            } else {
                l[i * p + j] = sum / l[j * p + j];
            }
        }
    }
    Some(l)
}

/// Solves L L^t x = b given the lower Cholesky factor.
pub fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * p + k] * y[k];
        }
        y[i] = sum / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut sum = y[i];
        for k in i + 1..p {
            sum -= l[k * p + i] * x[k];
        }
        x[i] = sum / l[i * p + i];
    }
    x
}

/// Condition-number proxy from the Cholesky factor: (max L_ii / min L_ii)^2.
pub fn cholesky_condition(l: &[f64], p: usize) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..p {
        let d = l[i * p + i];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (hi / lo) * (hi / lo)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors) with eigenvector k stored in column k
/// of the returned row-major matrix.
pub fn jacobi_eigen(a: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; p * p];
    for i in 0..p {
        v[i * p + i] = 1.0;
    }
    let tol = 1e-12;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in i + 1..p {
                off += m[i * p + j] * m[i * p + j];
            }
        }
        let norm: f64 = m.iter().map(|x| x * x).sum::<f64>().max(1e-300);
        if off / norm < tol * tol {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                let apq = m[i * p + j];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[i * p + i];
                let aqq = m[j * p + j];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..p {
                    let aik = m[i * p + k];
                    let ajk = m[j * p + k];
                    m[i * p + k] = c * aik - s * ajk;
                    m[j * p + k] = s * aik + c * ajk;
                }
                for k in 0..p {
                    let aki = m[k * p + i];
                    let akj = m[k * p + j];
                    m[k * p + i] = c * aki - s * akj;
                    m[k * p + j] = s * aki + c * akj;
                }
                for k in 0..p {
                    let vki = v[k * p + i];
                    let vkj = v[k * p + j];
                    v[k * p + i] = c * vki - s * vkj;
                    v[k * p + j] = s * vki + c * vkj;
                }
            }
        }
    }
    let eig = (0..p).map(|i| m[i * p + i]).collect();
    (eig, v)
}
