use super::{Lu, Matrix};
use crate::{Error, Result};

const MAX_ITER: usize = 100_000;

#[derive(Clone, Debug)]
pub struct LqrSolution {
    /// Feedback gain with the `u = K x` sign convention.
    pub k: Matrix,
    /// Stabilizing solution of the discrete algebraic Riccati equation.
    pub p: Matrix,
}

/// Infinite-horizon discrete LQR by value iteration on the Riccati map
/// `P ← AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q`, started from `P = Q`.
pub fn lqr_gain(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<LqrSolution> {
    let n = a.rows();
    let m = b.cols();
    if !a.is_square() || b.rows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::DimensionMismatch("lqr: inconsistent A, B, Q, R"));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let gain = |p: &Matrix| -> Result<Matrix> {
        let s = r + &bt.congruence(p);
        let rhs = bt.matmul(p).matmul(a);
        Ok(Lu::new(&s)?.solve_matrix(&rhs).scale(-1.0))
    };

    let mut p = q.clone();
    for _ in 0..MAX_ITER {
        let k = gain(&p)?;
        // AᵀPA + AᵀPB K, with K already carrying the minus sign
        let atp = at.matmul(&p);
        let mut next = &(&atp.matmul(a) + &atp.matmul(b).matmul(&k)) + q;
        next.symmetrize();
        if !next.is_finite() {
            return Err(Error::NoConvergence);
        }
        let delta = (&next - &p).max_abs();
        p = next;
        if delta <= 1e-13 * p.max_abs().max(1.0) {
            let k = gain(&p)?;
            return Ok(LqrSolution { k, p });
        }
    }
    Err(Error::NoConvergence)
}
