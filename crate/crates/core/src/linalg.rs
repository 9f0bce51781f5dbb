//! Small dense linear algebra on row-major `Vec<f64>` matrices.
//!
//! Everything in this crate works with dimensions of a handful of variables,
//! so a hand-rolled Cholesky factor is both faster and easier to control than
//! a general-purpose matrix library. The factorization doubles as the single
//! positive-definiteness test used throughout.

use crate::error::{CwmError, Result};

/// Relative pivot threshold: a pivot below `PIVOT_TOL * max(diag)` rejects the matrix.
pub const PIVOT_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor `A = L L'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
    log_det: f64,
}

impl Cholesky {
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(CwmError::DimensionMismatch { expected: n * n, found: a.len() });
        }
        if n == 0 {
            return Err(CwmError::InvalidParameter("empty matrix".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(CwmError::InvalidParameter("matrix has non-finite entries".into()));
        }
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            for j in 0..i {
                let (u, v) = (a[i * n + j], a[j * n + i]);
                let scale = u.abs().max(v.abs()).max(max_diag.abs()).max(f64::MIN_POSITIVE);
                if (u - v).abs() > SYMMETRY_TOL * scale {
                    return Err(CwmError::NotSymmetric);
                }
            }
        }
        if max_diag <= 0.0 {
            return Err(CwmError::NotPositiveDefinite { row: 0, pivot: max_diag });
        }
        let threshold = PIVOT_TOL * max_diag;
        let mut l = vec![0.0; n * n];
        let mut log_det = 0.0;
        for j in 0..n {
            let mut pivot = a[j * n + j];
            for k in 0..j {
                pivot -= l[j * n + k] * l[j * n + k];
            }
            if !(pivot > threshold) {
                return Err(CwmError::NotPositiveDefinite { row: j, pivot });
            }
            let ljj = pivot.sqrt();
            l[j * n + j] = ljj;
            log_det += 2.0 * ljj.ln();
            for i in (j + 1)..n {
                // lower triangle read from the symmetric average
                let mut s = 0.5 * (a[i * n + j] + a[j * n + i]);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { n, lower: l, log_det })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `ln det A`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Solves `L v = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves `L' v = b` in place.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves `A v = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut v = b.to_vec();
        self.forward_in_place(&mut v);
        self.backward_in_place(&mut v);
        v
    }

    /// `d' A^{-1} d` through a forward substitution; no inverse is formed.
    pub fn quad_form(&self, d: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        // small n: a stack buffer avoids allocating in the E-step hot loop
        if n <= 8 {
            let mut buf = [0.0f64; 8];
            buf[..n].copy_from_slice(&d[..n]);
            self.forward_in_place(&mut buf[..n]);
            for v in &buf[..n] {
                acc += v * v;
            }
        } else {
            let mut v = d.to_vec();
            self.forward_in_place(&mut v);
            acc = v.iter().map(|x| x * x).sum();
        }
        acc
    }

    /// Explicit inverse; only used where a matrix of coefficients is needed as output.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

pub fn trace(a: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

/// Factor `a`, adding a ridge of `base * trace/n` (escalating tenfold) to the diagonal
/// on failure. Returns the factor, the possibly modified matrix and the number of
/// ridge attempts used.
pub fn factor_with_ridge(a: &[f64], n: usize, base: f64, attempts: usize) -> Result<(Cholesky, Vec<f64>, usize)> {
    match Cholesky::factor(a, n) {
        Ok(c) => return Ok((c, a.to_vec(), 0)),
        Err(CwmError::NotSymmetric) => return Err(CwmError::NotSymmetric),
        Err(_) => {}
    }
    let scale = (trace(a, n) / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut ridge = base * scale;
    let mut last = None;
    for attempt in 1..=attempts {
        let mut m = a.to_vec();
        for i in 0..n {
            m[i * n + i] += ridge;
        }
        match Cholesky::factor(&m, n) {
            Ok(c) => return Ok((c, m, attempt)),
            Err(e) => last = Some(e),
        }
        ridge *= 10.0;
    }
    Err(last.unwrap_or(CwmError::NotPositiveDefinite { row: 0, pivot: 0.0 }))
}

pub fn det(a: &[f64], n: usize) -> f64 {
    // Gaussian elimination with partial pivoting; used by scatter-matrix statistics.
    let mut m = a.to_vec();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs()))
            .unwrap_or(c);
        if m[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                m.swap(p * n + k, c * n + k);
            }
            det = -det;
        }
        let piv = m[c * n + c];
        det *= piv;
        for r in (c + 1)..n {
            let f = m[r * n + c] / piv;
            for k in c..n {
                m[r * n + k] -= f * m[c * n + k];
            }
        }
    }
    det
}

pub fn mat_vec(a: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows).map(|i| (0..cols).map(|j| a[i * cols + j] * v[j]).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Converts nested rows to a row-major square buffer.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let n = rows.len();
    let mut out = Vec::with_capacity(n * n);
    for r in rows {
        if r.len() != n {
            return Err(CwmError::DimensionMismatch { expected: n, found: r.len() });
        }
        out.extend_from_slice(r);
    }
    Ok((out, n))
}

pub fn to_rows(a: &[f64], n: usize) -> Vec<Vec<f64>> {
    a.chunks(n.max(1)).map(|c| c.to_vec()).collect()
}
