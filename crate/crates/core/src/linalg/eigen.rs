use alloc::vec::Vec;

use super::Matrix;
use crate::{Error, Result};

/// Eigen-decomposition `S = V diag(values) Vᵀ` of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, matching `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi rotations. Only the lower triangle's symmetric part is
/// meaningful; the input is symmetrised first.
pub fn symmetric_eigen(s: &Matrix) -> Result<SymmetricEigen> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch("eigen needs a square matrix"));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("eigen input"));
    }
    let n = s.rows();
    let mut a = s.clone();
    a.symmetrize();
    let mut v = Matrix::identity(n);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let total: f64 = off + (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum::<f64>();
        if off <= 1e-32 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(SymmetricEigen { values, vectors })
}

/// Returns `G` (n×r, r the numerical rank) with `G Gᵀ = S` for a symmetric
/// PSD `S`. Works for singular `S`, where a Cholesky factor does not exist.
pub fn psd_factor(s: &Matrix) -> Result<Matrix> {
    if !s.is_symmetric(1e-10 * s.max_abs().max(1.0)) {
        return Err(Error::Domain("psd_factor input is not symmetric"));
    }
    let eig = symmetric_eigen(s)?;
    let n = s.rows();
    let scale = eig.values.first().map_or(0.0, |v| v.abs()).max(1.0);
    if let Some(&min) = eig.values.last() {
        if min < -1e-10 * scale {
            return Err(Error::NotPsd(min));
        }
    }
    let keep: Vec<usize> = (0..n)
        .filter(|&k| eig.values[k] > 1e-13 * scale)
        .collect();
    Ok(Matrix::from_fn(n, keep.len(), |i, j| {
        let k = keep[j];
        eig.vectors[(i, k)] * libm::sqrt(eig.values[k])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(g: &Matrix) -> Matrix {
        g.matmul_t(g)
    }

    #[test]
    fn eigen_of_diagonal_and_rank_one() {
        let e = symmetric_eigen(&Matrix::diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(e.values, alloc::vec![3.0, 2.0, 1.0]);
        let e = symmetric_eigen(&Matrix::from_rows(&[[0.25, 0.5], [0.5, 1.0]])).unwrap();
        assert!((e.values[0] - 1.25).abs() < 1e-15);
        assert!(e.values[1].abs() < 1e-15);
    }

    #[test]
    fn factor_identity() {
        let g = psd_factor(&Matrix::identity(3)).unwrap();
        assert!((&reconstruct(&g) - &Matrix::identity(3)).max_abs() < 1e-15);
    }

    #[test]
    fn factor_rank_one_noise() {
        let s = Matrix::from_rows(&[[0.25, 0.5], [0.5, 1.0]]);
        let g = psd_factor(&s).unwrap();
        assert_eq!(g.cols(), 1);
        // the column is ±[0.5, 1]
        assert!((g[(0, 0)].abs() - 0.5).abs() < 1e-14);
        assert!((g[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((&reconstruct(&g) - &s).max_abs() < 1e-10);
    }

    #[test]
    fn factor_zero_is_empty() {
        let g = psd_factor(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(g.shape(), (2, 0));
    }

    #[test]
    fn factor_rejects_indefinite() {
        let s = Matrix::from_rows(&[[1.0, 0.0], [0.0, -0.5]]);
        assert!(matches!(psd_factor(&s), Err(Error::NotPsd(v)) if (v + 0.5).abs() < 1e-12));
    }
}
