//! Small dense matrix helpers for the filter covariance math.
//!
//! Dimensions here are tiny (latent and sensor counts), so everything is
//! plain row-major `Vec<f64>` with straightforward loops.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Mat::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] += v;
        }
    }

    /// Force exact symmetry by averaging with the transpose.
    pub fn symmetrize(&mut self) {
        debug_assert_eq!(self.rows, self.cols);
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                let avg = 0.5 * (self.get(r, c) + self.get(c, r));
                self.set(r, c, avg);
                self.set(c, r, avg);
            }
        }
    }

    /// Add `w * outer(a, b)` in place.
    pub fn add_outer(&mut self, w: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(self.rows, a.len());
        debug_assert_eq!(self.cols, b.len());
        for (r, &av) in a.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            let wa = w * av;
            for (dst, &bv) in row.iter_mut().zip(b.iter()) {
                *dst += wa * bv;
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.cols, x.len());
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * out.cols + c] += a * other.get(k, c);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails when a pivot is not strictly positive.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    debug_assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "cholesky pivot {i} is {sum}, matrix not positive definite"
                    )));
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Cholesky with escalating diagonal jitter; used where failure is not an option.
pub fn cholesky_jittered(a: &Mat) -> Mat {
    if let Ok(l) = cholesky(a) {
        return l;
    }
    let mut jitter = 1e-9;
    loop {
        let mut padded = a.clone();
        padded.add_diag(jitter);
        if let Ok(l) = cholesky(&padded) {
            return l;
        }
        jitter *= 10.0;
        if jitter > 1.0 {
            // total breakdown: fall back to a scaled identity factor
            return Mat::identity(a.rows);
        }
    }
}

/// Solve `A x = b` for symmetric positive-definite `A` via its Cholesky factor.
#[allow(clippy::needless_range_loop)] // substitution loops carry index dependencies
pub fn solve_spd(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    debug_assert_eq!(b.len(), n);
    // forward: L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l.get(i, k) * y[k];
        }
        y[i] = sum / l.get(i, i);
    }
    // backward: L^T x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l.get(k, i) * x[k];
        }
        x[i] = sum / l.get(i, i);
    }
    x
}

/// Eigen-decomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    debug_assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off += m.get(r, c) * m.get(r, c);
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| m.get(i, i)).collect();
    (eigvals, v)
}

/// Project a symmetric matrix onto the positive-semidefinite cone:
/// symmetrize, then clip negative eigenvalues at zero.
pub fn clip_psd(a: &Mat) -> Mat {
    let mut sym = a.clone();
    sym.symmetrize();
    let (vals, vecs) = jacobi_eigen(&sym);
    if vals.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let n = sym.rows;
    let mut out = Mat::zeros(n, n);
    for (j, &val) in vals.iter().enumerate() {
        let lam = val.max(0.0);
        if lam == 0.0 {
            continue;
        }
        let col: Vec<f64> = (0..n).map(|i| vecs.get(i, j)).collect();
        out.add_outer(lam, &col, &col);
    }
    out.symmetrize();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cholesky_recovers_matrix() {
        let a = Mat {
            rows: 2,
            cols: 2,
            data: vec![4.0, 2.0, 2.0, 3.0],
        };
        let l = cholesky(&a).unwrap();
        let recon = l.matmul(&l.transpose());
        for (x, y) in recon.data.iter().zip(a.data.iter()) {
            assert!(approx(*x, *y, 1e-12), "{x} vs {y}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat {
            rows: 2,
            cols: 2,
            data: vec![1.0, 2.0, 2.0, 1.0],
        };
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn solve_spd_matches_direct() {
        let a = Mat {
            rows: 2,
            cols: 2,
            data: vec![4.0, 2.0, 2.0, 3.0],
        };
        let l = cholesky(&a).unwrap();
        let x = solve_spd(&l, &[2.0, 1.0]);
        let back = a.matvec(&x);
        assert!(approx(back[0], 2.0, 1e-12));
        assert!(approx(back[1], 1.0, 1e-12));
    }

    #[test]
    fn jacobi_finds_known_eigenvalues() {
        let a = Mat {
            rows: 2,
            cols: 2,
            data: vec![2.0, 1.0, 1.0, 2.0],
        };
        let (mut vals, _) = jacobi_eigen(&a);
        vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!(approx(vals[0], 1.0, 1e-10), "{vals:?}");
        assert!(approx(vals[1], 3.0, 1e-10), "{vals:?}");
    }

    #[test]
    fn clip_psd_makes_indefinite_usable() {
        let a = Mat {
            rows: 2,
            cols: 2,
            data: vec![1.0, 2.0, 2.0, 1.0],
        };
        let clipped = clip_psd(&a);
        let (vals, _) = jacobi_eigen(&clipped);
        assert!(vals.iter().all(|&v| v >= -1e-12), "{vals:?}");
        assert!(cholesky_jittered(&clipped).rows == 2);
    }
}
