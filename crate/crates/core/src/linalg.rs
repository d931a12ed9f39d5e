//! Small dense linear algebra: square matrices, vector helpers, and a cyclic
//! Jacobi eigensolver for the symmetric mixing matrices (N <= 64).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix must be at least 2x2 for a second eigenvalue")]
    TooSmall,
    #[error("row length {got} does not match dimension {want}")]
    BadRow { got: usize, want: usize },
    #[error("Jacobi sweep did not converge in {0} sweeps")]
    NoConvergence(usize),
}

/// Row-major square matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(LinalgError::BadRow {
                    got: row.len(),
                    want: n,
                });
            }
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// (M + I) / 2, the lazy transform that shifts the spectrum into (0, 1].
    pub fn lazy(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                let v = if i == j {
                    (self.get(i, j) + 1.0) / 2.0
                } else {
                    self.get(i, j) / 2.0
                };
                out.set(i, j, v);
            }
        }
        out
    }
}

const SYMMETRY_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix, sorted descending.
///
/// Cyclic Jacobi rotations; unconditionally stable for symmetric input and
/// fully deterministic, which the byte-reproducibility contract relies on.
pub fn symmetric_eigenvalues(m: &SquareMatrix) -> Result<Vec<f64>, LinalgError> {
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let n = m.n;
    if n == 1 {
        return Ok(vec![m.get(0, 0)]);
    }
    let mut a = m.clone();
    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() < JACOBI_TOL {
            let mut eigs: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
            eigs.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
            return Ok(eigs);
        }
        let _ = sweep;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() < JACOBI_TOL * 1e-2 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let phi = (aqq - app) / (2.0 * apq);
                let t = if phi >= 0.0 {
                    1.0 / (phi + (phi * phi + 1.0).sqrt())
                } else {
                    -1.0 / (-phi + (phi * phi + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q in place.
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(p, k, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                        a.set(q, k, s * akp + c * akq);
                    }
                }
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
            }
        }
    }
    Err(LinalgError::NoConvergence(MAX_SWEEPS))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal() {
        let m = SquareMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let e = symmetric_eigenvalues(&m).unwrap();
        assert!((e[0] - 3.0).abs() < 1e-12);
        assert!((e[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_two_path_average() {
        // [[.5,.5],[.5,.5]] has spectrum {1, 0}.
        let m = SquareMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let e = symmetric_eigenvalues(&m).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!(e[1].abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_known_3x3() {
        // Complete-3 uniform averaging: rank-1 projector, spectrum {1, 0, 0}.
        let t = 1.0 / 3.0;
        let m = SquareMatrix::from_rows(&[vec![t; 3], vec![t; 3], vec![t; 3]]).unwrap();
        let e = symmetric_eigenvalues(&m).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!(e[1].abs() < 1e-12);
        assert!(e[2].abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = SquareMatrix::from_rows(&[vec![1.0, 0.2], vec![0.1, 1.0]]).unwrap();
        assert!(matches!(
            symmetric_eigenvalues(&m),
            Err(LinalgError::NotSymmetric(_))
        ));
    }

    #[test]
    fn lazy_transform_shifts_spectrum() {
        let m = SquareMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let l = m.lazy();
        assert!((l.get(0, 0) - 0.75).abs() < 1e-15);
        assert!((l.get(0, 1) - 0.25).abs() < 1e-15);
        let e = symmetric_eigenvalues(&l).unwrap();
        assert!((e[1] - 0.5).abs() < 1e-12);
    }
}
