use alloc::vec::Vec;

use super::Matrix;
use crate::{Error, Result};

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Fails with [`Error::NotPositiveDefinite`] when a pivot is not
    /// comfortably positive relative to the diagonal scale.
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("cholesky needs a square matrix"));
        }
        let n = a.rows();
        let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
        let floor = scale * 1e-14;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > floor) {
                return Err(Error::NotPositiveDefinite);
            }
            let d = libm::sqrt(d);
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let y = self.solve_lower(b);
        self.solve_upper(&y)
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            let s: f64 = (0..i).map(|k| row[k] * y[k]).sum();
            y[i] = (y[i] - s) / row[i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| self.l[(k, i)] * x[k]).sum();
            x[i] = (x[i] - s) / self.l[(i, i)];
        }
        x
    }

    /// `L⁻ᵀ`, an upper triangular matrix with `L⁻ᵀ L⁻¹ = A⁻¹`.
    pub fn inv_lt(&self) -> Matrix {
        let n = self.l.rows();
        let mut out = Matrix::zeros(n, n);
        let mut e = alloc::vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            // column j of L⁻ᵀ solves Lᵀ x = e_j
            let x = self.solve_upper(&e);
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        out
    }
}

/// LU factorisation with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("LU needs a square matrix"));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))
                .unwrap_or(k);
            if lu[(p, k)].abs() <= scale * 1e-14 {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= f * u;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n, "LU solve: rhs length mismatch");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|k| self.lu[(i, k)] * x[k]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| self.lu[(i, k)] * x[k]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.col(j));
            for i in 0..b.rows() {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> Matrix {
        self.solve_matrix(&Matrix::identity(self.lu.rows()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]);
        let c = Cholesky::new(&a).unwrap();
        let x = c.solve(&[8.0, 7.0]);
        assert!((x[0] - 1.25).abs() < 1e-14 && (x[1] - 1.5).abs() < 1e-14);
        let j = c.inv_lt();
        let inv = j.matmul_t(&j);
        assert!((&inv.matmul(&a) - &Matrix::identity(2)).max_abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_semidefinite() {
        let a = Matrix::from_rows(&[[0.25, 0.5], [0.5, 1.0]]);
        assert_eq!(Cholesky::new(&a).unwrap_err(), Error::NotPositiveDefinite);
    }

    #[test]
    fn lu_inverse() {
        let a = Matrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]]);
        let inv = Lu::new(&a).unwrap().inverse();
        assert!((&a.matmul(&inv) - &Matrix::identity(3)).max_abs() < 1e-14);
        let s = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert_eq!(Lu::new(&s).unwrap_err(), Error::Singular);
    }
}
