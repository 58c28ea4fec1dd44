use super::Matrix;
use crate::{Error, Result};

const MAX_DOUBLINGS: usize = 64;

/// Solves `Σ = A Σ Aᵀ + W` for Schur-stable `A`.
///
/// Uses the doubling form of the fixed-point iteration: after `k` rounds the
/// partial sum covers `2^k` terms of `Σ_t Aᵗ W (Aᵗ)ᵀ`. Divergence (or no
/// convergence after 64 doublings) is reported as [`Error::NonContractive`].
pub fn solve_discrete_lyapunov(a: &Matrix, w: &Matrix) -> Result<Matrix> {
    if !a.is_square() || w.shape() != a.shape() {
        return Err(Error::DimensionMismatch("lyapunov: A and W must be n×n"));
    }
    if !a.is_finite() || !w.is_finite() {
        return Err(Error::NonFinite("lyapunov input"));
    }
    if !w.is_symmetric(1e-12 * w.max_abs().max(1.0)) {
        return Err(Error::Domain("lyapunov: W must be symmetric"));
    }

    let mut sigma = w.clone();
    sigma.symmetrize();
    let mut ak = a.clone();
    let mut converged = false;
    for _ in 0..MAX_DOUBLINGS {
        let term = ak.congruence(&sigma);
        if !term.is_finite() {
            return Err(Error::NonContractive);
        }
        let increment = term.max_abs();
        sigma = &sigma + &term;
        ak = ak.matmul(&ak);
        if !ak.is_finite() {
            return Err(Error::NonContractive);
        }
        if increment <= f64::EPSILON * 1e-2 * sigma.max_abs() || ak.max_abs() == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonContractive);
    }
    // One plain sweep cleans up rounding from the doubling sums.
    sigma = &a.congruence(&sigma) + w;
    sigma.symmetrize();
    Ok(sigma)
}
