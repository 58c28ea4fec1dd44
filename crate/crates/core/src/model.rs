//! The LTI plant `x⁺ = A x + B u + w`, its tube decomposition `x = z + e`
//! under `u = v + K e`, and the Gaussian ground truth used for validation.

use alloc::vec::Vec;

use crate::linalg::{
    self, psd_factor, solve_discrete_lyapunov, std_normal_quantile, Matrix,
};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() || b.rows() != a.rows() {
            return Err(Error::DimensionMismatch("system: A must be n×n and B n×m"));
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite("system matrices"));
        }
        Ok(Self { a, b })
    }

    /// The double integrator `A = [[1, 1], [0, 1]]`, `B = [0.5, 1]ᵀ`.
    pub fn double_integrator() -> Self {
        Self {
            a: Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]),
            b: Matrix::from_rows(&[[0.5], [1.0]]),
        }
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn nx(&self) -> usize {
        self.a.rows()
    }

    pub fn nu(&self) -> usize {
        self.b.cols()
    }

    /// `A x + B u + w`.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let mut next = self.a.mul_vec(x);
        let bu = self.b.mul_vec(u);
        for ((n, b), w) in next.iter_mut().zip(bu).zip(w) {
            *n += b + w;
        }
        next
    }
}

/// Error feedback `u = v + K e` with the cached closed-loop matrix `A_K = A + BK`.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeGain {
    k: Matrix,
    a_k: Matrix,
}

impl TubeGain {
    /// Rejects gains for which `A + BK` is not Schur stable.
    pub fn new(system: &LtiSystem, k: Matrix) -> Result<Self> {
        if k.shape() != (system.nu(), system.nx()) {
            return Err(Error::DimensionMismatch("gain K must be nu×nx"));
        }
        let a_k = system.a() + &system.b().matmul(&k);
        // solvability of the Lyapunov equation certifies ρ(A_K) < 1
        solve_discrete_lyapunov(&a_k, &Matrix::identity(system.nx()))?;
        Ok(Self { k, a_k })
    }

    /// LQR gain for the given weights.
    pub fn lqr(system: &LtiSystem, q: &Matrix, r: &Matrix) -> Result<Self> {
        let sol = linalg::lqr_gain(system.a(), system.b(), q, r)?;
        Self::new(system, sol.k)
    }

    pub fn k(&self) -> &Matrix {
        &self.k
    }

    pub fn a_k(&self) -> &Matrix {
        &self.a_k
    }

    /// One step of the closed-loop error, `A_K e + w`.
    pub fn error_step(&self, e: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let n = self.a_k.rows();
        if e.len() != n || w.len() != n {
            return Err(Error::DimensionMismatch("error_step: e and w must have length nx"));
        }
        let mut next = self.a_k.mul_vec(e);
        for (x, w) in next.iter_mut().zip(w) {
            *x += w;
        }
        Ok(next)
    }

    /// Noise-free `t`-step propagation `A_Kᵗ e₀`, the predicted error mean.
    pub fn predicted_error(&self, e0: &[f64], t: usize) -> Vec<f64> {
        (0..t).fold(e0.to_vec(), |e, _| self.a_k.mul_vec(&e))
    }

    /// Stationary covariance `Σ_e = A_K Σ_e A_Kᵀ + Σ_w`.
    pub fn stationary_error_cov(&self, noise: &NoiseModel) -> Result<Matrix> {
        solve_discrete_lyapunov(&self.a_k, &noise.covariance())
    }
}

/// Zero-mean additive noise `w = G ξ`, ξ i.i.d. standard normal, stored by
/// its factor so singular covariances are fine.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    factor: Matrix,
}

impl NoiseModel {
    pub fn from_factor(factor: Matrix) -> Result<Self> {
        if !factor.is_finite() {
            return Err(Error::NonFinite("noise factor"));
        }
        Ok(Self { factor })
    }

    pub fn from_covariance(cov: &Matrix) -> Result<Self> {
        Self::from_factor(psd_factor(cov)?)
    }

    pub fn zero(nx: usize) -> Self {
        Self {
            factor: Matrix::zeros(nx, 0),
        }
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn covariance(&self) -> Matrix {
        self.factor.matmul_t(&self.factor)
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    /// Number of standard normals consumed per draw.
    pub fn rank(&self) -> usize {
        self.factor.cols()
    }

    /// Maps standard normals `ξ` (length [`rank`](Self::rank)) to `G ξ`.
    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        self.factor.mul_vec(xi)
    }
}

/// Radius of the exact symmetric PRS `{|e_i| ≤ η*}` at level `p` for
/// `e ~ N(0, Σ_e)`: `η* = sqrt(Σ_e[i,i] · χ²₁(p))`. `coord` is zero-based.
pub fn true_gaussian_prs(sigma_e: &Matrix, coord: usize, p: f64) -> Result<f64> {
    if coord >= sigma_e.rows() || !sigma_e.is_square() {
        return Err(Error::DimensionMismatch("coordinate outside Σ_e"));
    }
    let var = sigma_e[(coord, coord)];
    if var < 0.0 {
        return Err(Error::Domain("negative variance"));
    }
    Ok(libm::sqrt(var) * std_normal_quantile(0.5 * (1.0 + p))?)
}

/// Same as [`true_gaussian_prs`] for the two-sided loss `|hᵀ e|` along an
/// arbitrary direction.
pub fn true_gaussian_prs_direction(sigma_e: &Matrix, h: &[f64], p: f64) -> Result<f64> {
    if h.len() != sigma_e.rows() {
        return Err(Error::DimensionMismatch("direction length != nx"));
    }
    let var = linalg::dot(h, &sigma_e.mul_vec(h)).max(0.0);
    Ok(libm::sqrt(var) * std_normal_quantile(0.5 * (1.0 + p))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn paper_gain() -> TubeGain {
        TubeGain::new(
            &LtiSystem::double_integrator(),
            Matrix::from_rows(&[[-0.2, -0.6]]),
        )
        .unwrap()
    }

    fn paper_noise() -> NoiseModel {
        NoiseModel::from_covariance(&Matrix::from_rows(&[[0.25, 0.5], [0.5, 1.0]])).unwrap()
    }

    #[test]
    fn closed_loop_matrix() {
        assert_eq!(
            paper_gain().a_k(),
            &Matrix::from_rows(&[[0.9, 0.7], [-0.2, 0.4]])
        );
    }

    #[test]
    fn unstable_gain_rejected() {
        let sys = LtiSystem::double_integrator();
        assert_eq!(
            TubeGain::new(&sys, Matrix::zeros(1, 2)).unwrap_err(),
            Error::NonContractive
        );
        assert!(matches!(
            TubeGain::new(&sys, Matrix::zeros(2, 2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn error_step_examples() {
        let g = paper_gain();
        assert_eq!(g.error_step(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(g.error_step(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.9, -0.2]);
        assert_eq!(g.error_step(&[0.0, 0.0], &[0.5, 1.0]).unwrap(), vec![0.5, 1.0]);
        assert!(matches!(
            g.error_step(&[0.0], &[0.0, 0.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn predicted_error_examples() {
        let g = paper_gain();
        let e0 = [1.0, 1.0];
        assert_eq!(g.predicted_error(&e0, 0), e0.to_vec());
        assert_eq!(g.predicted_error(&e0, 1), g.error_step(&e0, &[0.0, 0.0]).unwrap());
        // A_K [1, 1]ᵀ = [1.6, 0.2]ᵀ, then A_K [1.6, 0.2]ᵀ = [1.58, −0.24]ᵀ
        let e2 = g.predicted_error(&e0, 2);
        assert!((e2[0] - 1.58).abs() < 1e-14 && (e2[1] + 0.24).abs() < 1e-14);
    }

    #[test]
    fn stationary_covariance_examples() {
        let g = paper_gain();
        let s = g.stationary_error_cov(&paper_noise()).unwrap();
        assert!((s[(1, 1)] - 10.0 / 7.0).abs() < 1e-12);
        assert_eq!(
            g.stationary_error_cov(&NoiseModel::zero(2)).unwrap(),
            Matrix::zeros(2, 2)
        );
        // A_K = 0 ⇒ Σ_e = Σ_w
        let sys = LtiSystem::new(Matrix::zeros(2, 2), Matrix::identity(2)).unwrap();
        let dead = TubeGain::new(&sys, Matrix::zeros(2, 2)).unwrap();
        let sw = paper_noise().covariance();
        assert!((&dead.stationary_error_cov(&paper_noise()).unwrap() - &sw).max_abs() < 1e-15);
    }

    #[test]
    fn true_prs_examples() {
        let s = paper_gain().stationary_error_cov(&paper_noise()).unwrap();
        let eta = true_gaussian_prs(&s, 1, 0.8).unwrap();
        assert!((eta - 1.53).abs() <= 0.005, "eta* = {eta}");
        // sqrt(10/7) Φ⁻¹(0.75)
        let half = true_gaussian_prs(&s, 1, 0.5).unwrap();
        assert!((half - 0.6744897501960817 * libm::sqrt(10.0 / 7.0)).abs() < 1e-12);
        assert_eq!(true_gaussian_prs(&Matrix::zeros(2, 2), 0, 0.8).unwrap(), 0.0);
        assert!(matches!(true_gaussian_prs(&s, 0, 1.0), Err(Error::Domain(_))));
        let along = true_gaussian_prs_direction(&s, &[0.0, -1.0], 0.8).unwrap();
        assert!((along - eta).abs() < 1e-15);
    }

    #[test]
    fn true_prs_monotone_in_p() {
        let s = paper_gain().stationary_error_cov(&paper_noise()).unwrap();
        let mut last = 0.0;
        for i in 1..100 {
            let eta = true_gaussian_prs(&s, 1, i as f64 / 100.0).unwrap();
            assert!(eta > last);
            last = eta;
        }
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn predicted_error_is_a_semigroup(
            e0 in proptest::collection::vec(-10.0..10.0f64, 2),
            s in 0usize..20,
            t in 0usize..20,
        ) {
            let g = TubeGain::new(
                &LtiSystem::double_integrator(),
                Matrix::from_rows(&[[-0.2, -0.6]]),
            ).unwrap();
            let direct = g.predicted_error(&e0, s + t);
            let composed = g.predicted_error(&g.predicted_error(&e0, s), t);
            for (a, b) in direct.iter().zip(&composed) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
