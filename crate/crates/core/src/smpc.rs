//! Indirect-feedback stochastic MPC.
//!
//! The plant state is split as `x = z + e`. The nominal state `z` follows
//! `z⁺ = A z + B v` and carries the tightened constraints. The error
//! `e⁺ = A_K e + w` is never fed back into the constraints, only into the
//! predicted mean cost through `μ_x(t) = z(t) + A_Kᵗ e` and
//! `μ_u(t) = v(t) + K A_Kᵗ e`. The applied input is `u = v*(0) + K(x − z)`.
//!
//! The QP is condensed onto `v(0..N−1)`: `z(t) = Aᵗ z + Γ_t v`. Everything
//! but the linear term, the constraint offsets and the constant is built
//! once per configuration.

use alloc::vec;
use alloc::vec::Vec;

use crate::constraints::TightenedSet;
use crate::linalg::{psd_factor, solve_discrete_lyapunov, Cholesky, Matrix};
use crate::model::{LtiSystem, TubeGain};
use crate::qp::{feasibility_slack, Factored, QpProblem, QpStatus, FEASIBILITY_TOL};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct MpcConfig {
    system: LtiSystem,
    gain: TubeGain,
    q: Matrix,
    r: Matrix,
    p: Matrix,
    horizon: usize,
    z_set: TightenedSet,
    v_set: TightenedSet,
}

impl MpcConfig {
    /// The terminal weight solves `P = A_KᵀP A_K + Q + KᵀR K`; the terminal
    /// set is `{0}`.
    pub fn new(
        system: LtiSystem,
        gain: TubeGain,
        q: Matrix,
        r: Matrix,
        horizon: usize,
        z_set: TightenedSet,
        v_set: TightenedSet,
    ) -> Result<Self> {
        let (nx, nu) = (system.nx(), system.nu());
        if horizon == 0 {
            return Err(Error::Domain("horizon must be at least 1"));
        }
        if q.shape() != (nx, nx)
            || r.shape() != (nu, nu)
            || gain.k().shape() != (nu, nx)
            || z_set.base().dim() != nx
            || v_set.base().dim() != nu
        {
            return Err(Error::DimensionMismatch("mpc: Q, R, K, Z or V"));
        }
        psd_factor(&q)?;
        Cholesky::new(&r)?;
        let k = gain.k();
        let stage = &q + &k.transpose().matmul(&r).matmul(k);
        let p = solve_discrete_lyapunov(&gain.a_k().transpose(), &stage)?;
        Ok(Self {
            system,
            gain,
            q,
            r,
            p,
            horizon,
            z_set,
            v_set,
        })
    }

    pub fn system(&self) -> &LtiSystem {
        &self.system
    }

    pub fn gain(&self) -> &TubeGain {
        &self.gain
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn terminal_weight(&self) -> &Matrix {
        &self.p
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn z_set(&self) -> &TightenedSet {
        &self.z_set
    }

    pub fn v_set(&self) -> &TightenedSet {
        &self.v_set
    }

    fn sets_empty(&self) -> bool {
        self.z_set.is_empty() || self.v_set.is_empty()
    }
}

/// The condensed QP of one configuration, parametrized by `(x_k, z_k)`.
#[derive(Clone, Debug)]
pub struct CondensedMpc {
    nx: usize,
    nu: usize,
    horizon: usize,
    template: QpProblem,
    // q = fz z + fe e
    fz: Matrix,
    fe: Matrix,
    // b_in = base − shift z
    base: Vec<f64>,
    shift: Matrix,
    // b_eq = −A^N z
    terminal: Matrix,
    phis: Vec<Matrix>,
    psis: Vec<Matrix>,
    q: Matrix,
    r: Matrix,
    p: Matrix,
    k: Matrix,
}

impl CondensedMpc {
    /// Fails with [`Error::TightenedSetEmpty`] if `Z` or `V` is empty.
    pub fn new(cfg: &MpcConfig) -> Result<Self> {
        if cfg.sets_empty() {
            return Err(Error::TightenedSetEmpty);
        }
        let a = cfg.system.a();
        let b = cfg.system.b();
        let (nx, nu, n) = (cfg.system.nx(), cfg.system.nu(), cfg.horizon);
        let dim = n * nu;
        let k = cfg.gain.k();

        let mut gammas = vec![Matrix::zeros(nx, dim)];
        let mut phis = vec![Matrix::identity(nx)];
        let mut psis = vec![Matrix::identity(nx)];
        for t in 0..n {
            let mut next = a.matmul(&gammas[t]);
            for i in 0..nx {
                for j in 0..nu {
                    next[(i, t * nu + j)] += b[(i, j)];
                }
            }
            gammas.push(next);
            phis.push(a.matmul(&phis[t]));
            psis.push(cfg.gain.a_k().matmul(&psis[t]));
        }

        let mut hess = Matrix::zeros(dim, dim);
        let mut fz = Matrix::zeros(dim, nx);
        let mut fe = Matrix::zeros(dim, nx);
        let rk = cfg.r.matmul(k);
        for t in 0..=n {
            let weight = if t < n { &cfg.q } else { &cfg.p };
            let gtw = gammas[t].transpose().matmul(weight);
            hess = &hess + &gtw.matmul(&gammas[t]);
            fz = &fz + &gtw.matmul(&phis[t]);
            fe = &fe + &gtw.matmul(&psis[t]);
            if t < n {
                hess.set_block(t * nu, t * nu, &(&hess.block(t * nu, t * nu, nu, nu) + &cfg.r));
                let rkp = rk.matmul(&psis[t]);
                fe.set_block(t * nu, 0, &(&fe.block(t * nu, 0, nu, nx) + &rkp));
            }
        }
        let mut hess = hess.scale(2.0);
        hess.symmetrize();
        let fz = fz.scale(2.0);
        let fe = fe.scale(2.0);

        let hz = cfg.z_set.matrix();
        let hz_t = cfg.z_set.tightened_offsets();
        let hv = cfg.v_set.matrix();
        let hv_t = cfg.v_set.tightened_offsets();
        let rows = n.saturating_sub(1) * hz.rows() + n * hv.rows();
        let mut a_in = Matrix::zeros(rows, dim);
        let mut shift = Matrix::zeros(rows, nx);
        let mut base = Vec::with_capacity(rows);
        let mut row = 0;
        for t in 1..n {
            let hg = hz.matmul(&gammas[t]);
            let hp = hz.matmul(&phis[t]);
            a_in.set_block(row, 0, &hg);
            shift.set_block(row, 0, &hp);
            base.extend_from_slice(hz_t);
            row += hz.rows();
        }
        for t in 0..n {
            a_in.set_block(row, t * nu, hv);
            base.extend_from_slice(hv_t);
            row += hv.rows();
        }

        let template = QpProblem::new(hess, vec![0.0; dim])
            .with_inequalities(a_in, base.clone())
            .with_equalities(gammas[n].clone(), vec![0.0; nx]);
        Ok(Self {
            nx,
            nu,
            horizon: n,
            template,
            fz,
            fe,
            base,
            shift,
            terminal: phis[n].clone(),
            phis,
            psis,
            q: cfg.q.clone(),
            r: cfg.r.clone(),
            p: cfg.p.clone(),
            k: k.clone(),
        })
    }

    /// The condensed Hessian.
    pub fn hessian(&self) -> &Matrix {
        &self.template.p
    }

    pub fn dim(&self) -> usize {
        self.horizon * self.nu
    }

    /// The QP for measured state `x` and nominal state `z`.
    pub fn problem(&self, x: &[f64], z: &[f64]) -> Result<QpProblem> {
        let mut prob = self.template.clone();
        self.update(&mut prob, x, z)?;
        Ok(prob)
    }

    /// Rewrites the parameter-dependent parts of `prob` in place.
    pub fn update(&self, prob: &mut QpProblem, x: &[f64], z: &[f64]) -> Result<()> {
        if x.len() != self.nx || z.len() != self.nx {
            return Err(Error::DimensionMismatch("mpc: state length"));
        }
        if x.iter().chain(z).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mpc state"));
        }
        let e: Vec<f64> = x.iter().zip(z).map(|(x, z)| x - z).collect();
        let qz = self.fz.mul_vec(z);
        let qe = self.fe.mul_vec(&e);
        for ((q, a), b) in prob.q.iter_mut().zip(qz).zip(qe) {
            *q = a + b;
        }
        let sz = self.shift.mul_vec(z);
        for ((b, base), s) in prob.b_in.iter_mut().zip(&self.base).zip(sz) {
            *b = base - s;
        }
        for (b, t) in prob.b_eq.iter_mut().zip(self.terminal.mul_vec(z)) {
            *b = -t;
        }
        prob.constant = self.constant(z, &e);
        Ok(())
    }

    /// The part of the cost that does not depend on `v`.
    fn constant(&self, z: &[f64], e: &[f64]) -> f64 {
        let quad = |m: &Matrix, v: &[f64]| crate::linalg::dot(v, &m.mul_vec(v));
        let mut total = 0.0;
        for t in 0..=self.horizon {
            let mut c = self.phis[t].mul_vec(z);
            let pe = self.psis[t].mul_vec(e);
            for (c, p) in c.iter_mut().zip(&pe) {
                *c += p;
            }
            if t < self.horizon {
                total += quad(&self.q, &c) + quad(&self.r, &self.k.mul_vec(&pe));
            } else {
                total += quad(&self.p, &c);
            }
        }
        total
    }
}

/// Convenience wrapper around [`CondensedMpc::problem`].
pub fn build_mpc_qp(x: &[f64], z: &[f64], cfg: &MpcConfig) -> Result<QpProblem> {
    CondensedMpc::new(cfg)?.problem(x, z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    z: Vec<f64>,
    plan: Option<Vec<f64>>,
    k: usize,
}

impl ControllerState {
    /// Starts with `z(0) = x(0)`, so `e(0) = 0`.
    pub fn new(x0: &[f64]) -> Self {
        Self {
            z: x0.to_vec(),
            plan: None,
            k: 0,
        }
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The shifted plan `(v*(1..N−1), 0)` kept as a fallback.
    pub fn fallback(&self) -> Option<&[f64]> {
        self.plan.as_deref()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub status: QpStatus,
    pub used_fallback: bool,
    /// Predicted cost of the applied plan (QP objective when optimal).
    pub predicted_cost: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub u: Vec<f64>,
    pub v0: Vec<f64>,
    pub diagnostics: StepDiagnostics,
}

/// A configured controller that reuses the condensed matrices and the
/// Hessian factorization across steps.
#[derive(Clone, Debug)]
pub struct Controller {
    cfg: MpcConfig,
    condensed: Option<CondensedMpc>,
    factored: Option<Factored>,
}

impl Controller {
    /// Empty tightened sets are accepted here and surface as
    /// [`Error::InitialInfeasible`] on the first step.
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        let condensed = match CondensedMpc::new(&cfg) {
            Ok(c) => Some(c),
            Err(Error::TightenedSetEmpty) => None,
            Err(e) => return Err(e),
        };
        let factored = condensed
            .as_ref()
            .map(|c| Factored::new(c.hessian()))
            .transpose()?;
        Ok(Self {
            cfg,
            condensed,
            factored,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn condensed(&self) -> Option<&CondensedMpc> {
        self.condensed.as_ref()
    }

    /// One receding-horizon step at measured state `x`.
    pub fn step(&self, x: &[f64], state: &mut ControllerState) -> Result<StepOutput> {
        let (Some(condensed), Some(factored)) = (&self.condensed, &self.factored) else {
            return Err(Error::InitialInfeasible);
        };
        let nu = self.cfg.system.nu();
        let prob = condensed.problem(x, &state.z)?;
        let sol = factored.solve(&prob)?;
        let (plan, used_fallback, predicted_cost) = if sol.is_optimal() {
            (sol.x, false, sol.objective)
        } else {
            match (&state.plan, state.k) {
                (Some(plan), k) if k > 0 => (plan.clone(), true, prob.objective(plan)),
                _ => return Err(Error::InitialInfeasible),
            }
        };

        let v0 = plan[..nu].to_vec();
        let e: Vec<f64> = x.iter().zip(&state.z).map(|(x, z)| x - z).collect();
        let ke = self.cfg.gain.k().mul_vec(&e);
        let u: Vec<f64> = v0.iter().zip(&ke).map(|(v, k)| v + k).collect();

        let mut shifted = plan[nu..].to_vec();
        shifted.extend(core::iter::repeat_n(0.0, nu));
        state.z = self.cfg.system.step(&state.z, &v0, &vec![0.0; state.z.len()]);
        state.plan = Some(shifted);
        state.k += 1;
        Ok(StepOutput {
            u,
            v0,
            diagnostics: StepDiagnostics {
                status: sol.status,
                used_fallback,
                predicted_cost,
                iterations: sol.iterations,
            },
        })
    }
}

/// One step of a freshly configured controller.
pub fn mpc_step(x: &[f64], state: &mut ControllerState, cfg: &MpcConfig) -> Result<StepOutput> {
    Controller::new(cfg.clone())?.step(x, state)
}

/// Whether the `k = 0` problem with `z(0) = x₀` is feasible, per grid point.
pub fn feasible_region_scan(grid: &[Vec<f64>], cfg: &MpcConfig) -> Result<Vec<bool>> {
    let nx = cfg.system.nx();
    if grid.iter().any(|p| p.len() != nx) {
        return Err(Error::DimensionMismatch("grid point length"));
    }
    let condensed = match CondensedMpc::new(cfg) {
        Ok(c) => c,
        Err(Error::TightenedSetEmpty) => return Ok(vec![false; grid.len()]),
        Err(e) => return Err(e),
    };
    grid.iter()
        .map(|x0| {
            if x0.iter().any(|v| !v.is_finite()) {
                return Ok(false);
            }
            let prob = condensed.problem(x0, x0)?;
            let s = feasibility_slack(&prob.a_in, &prob.b_in, &prob.a_eq, &prob.b_eq)?;
            Ok(s <= FEASIBILITY_TOL)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{tighten, Halfspaces};
    use crate::linalg::dot;
    use crate::qp::solve_qp;

    fn scalar_config(q: f64, horizon: usize) -> MpcConfig {
        let sys = LtiSystem::new(Matrix::identity(1), Matrix::identity(1)).unwrap();
        let gain = TubeGain::new(&sys, Matrix::diag(&[-0.5])).unwrap();
        MpcConfig::new(
            sys,
            gain,
            Matrix::diag(&[q]),
            Matrix::identity(1),
            horizon,
            TightenedSet::untightened(Halfspaces::unconstrained(1)),
            TightenedSet::untightened(Halfspaces::unconstrained(1)),
        )
        .unwrap()
    }

    pub(crate) fn paper_config(bound: f64, eta: f64, horizon: usize) -> MpcConfig {
        let sys = LtiSystem::double_integrator();
        let gain = TubeGain::new(&sys, Matrix::from_rows(&[[-0.2, -0.6]])).unwrap();
        let x = Halfspaces::symmetric_bound(2, 1, bound).unwrap();
        let z = tighten(&x, &[eta, eta]).unwrap();
        MpcConfig::new(
            sys,
            gain,
            Matrix::identity(2),
            Matrix::identity(1),
            horizon,
            z,
            TightenedSet::untightened(Halfspaces::unconstrained(1)),
        )
        .unwrap()
    }

    #[test]
    fn terminal_weight() {
        assert!((scalar_config(1.0, 1).terminal_weight()[(0, 0)] - 5.0 / 3.0).abs() < 1e-12);
        let cfg = paper_config(3.0, 1.53, 30);
        let p = cfg.terminal_weight();
        let expected = Matrix::from_rows(&[[2.77142857, 1.92857143], [1.92857143, 4.52142857]]);
        assert!((p - &expected).max_abs() < 1e-7);
        let ak = cfg.gain().a_k();
        let k = cfg.gain().k();
        let residual = &(&ak.transpose().congruence(p) + &(cfg.q() + &k.transpose().matmul(k))) - p;
        assert!(residual.max_abs() < 1e-8);
    }

    #[test]
    fn scalar_one_step() {
        let cfg = scalar_config(1.0, 1);
        let prob = build_mpc_qp(&[1.0], &[1.0], &cfg).unwrap();
        let sol = solve_qp(&prob).unwrap();
        assert!((sol.x[0] + 1.0).abs() < 1e-12);
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let cfg = paper_config(3.0, 1.53, 10);
        let sol = solve_qp(&build_mpc_qp(&[0.0, 0.0], &[0.0, 0.0], &cfg).unwrap()).unwrap();
        assert!(sol.x.iter().all(|v| v.abs() < 1e-12));
        assert!(sol.objective.abs() < 1e-12);

        let mut state = ControllerState::new(&[0.0, 0.0]);
        let out = mpc_step(&[0.0, 0.0], &mut state, &cfg).unwrap();
        assert!(out.u[0].abs() < 1e-12);
        assert!(state.z().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn error_feedback_by_completing_the_square() {
        // x⁺ = ½x + v₁: v₂ only enters the cost, so v₂* = −(K e)₂
        let sys = LtiSystem::new(Matrix::diag(&[0.5]), Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        let gain = TubeGain::new(&sys, Matrix::from_rows(&[[0.0], [0.7]])).unwrap();
        let cfg = MpcConfig::new(
            sys,
            gain,
            Matrix::zeros(1, 1),
            Matrix::identity(2),
            1,
            TightenedSet::untightened(Halfspaces::unconstrained(1)),
            TightenedSet::untightened(Halfspaces::unconstrained(2)),
        )
        .unwrap();
        let e = 1.3;
        let sol = solve_qp(&build_mpc_qp(&[e], &[0.0], &cfg).unwrap()).unwrap();
        assert!(sol.x[0].abs() < 1e-12);
        assert!((sol.x[1] + 0.7 * e).abs() < 1e-12);
    }

    #[test]
    fn condensed_cost_matches_rollout() {
        let cfg = paper_config(3.0, 1.53, 6);
        let (x, z) = ([0.7, -0.4], [1.0, 0.3]);
        let prob = build_mpc_qp(&x, &z, &cfg).unwrap();
        let v = [0.3, -0.2, 0.1, 0.05, -0.4, 0.2];
        // direct rollout of the mean predictions
        let sys = cfg.system();
        let ak = cfg.gain().a_k();
        let k = cfg.gain().k();
        let mut zt = z.to_vec();
        let mut et: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a - b).collect();
        let mut cost = 0.0;
        for &vt in &v {
            let mx: Vec<f64> = zt.iter().zip(&et).map(|(a, b)| a + b).collect();
            let mu = vt + dot(k.row(0), &et);
            cost += dot(&mx, &cfg.q().mul_vec(&mx)) + mu * mu;
            zt = sys.step(&zt, &[vt], &[0.0, 0.0]);
            et = ak.mul_vec(&et);
        }
        let mx: Vec<f64> = zt.iter().zip(&et).map(|(a, b)| a + b).collect();
        cost += dot(&mx, &cfg.terminal_weight().mul_vec(&mx));
        assert!((prob.objective(&v) - cost).abs() < 1e-10 * cost.max(1.0));
        // and z(N) through the equality rows
        let zn = prob.a_eq.mul_vec(&v);
        for i in 0..2 {
            assert!((zn[i] - prob.b_eq[i] - zt[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_tightening_is_initially_infeasible() {
        let cfg = paper_config(1.2, 2.67, 30);
        let mut state = ControllerState::new(&[10.0, 0.0]);
        assert_eq!(mpc_step(&[10.0, 0.0], &mut state, &cfg), Err(Error::InitialInfeasible));
        assert_eq!(build_mpc_qp(&[10.0, 0.0], &[10.0, 0.0], &cfg), Err(Error::TightenedSetEmpty));
        assert_eq!(feasible_region_scan(&[vec![0.0, 0.0]], &cfg).unwrap(), vec![false]);
    }

    #[test]
    fn unreachable_start_is_initially_infeasible() {
        let cfg = paper_config(3.0, 1.53, 30);
        let mut state = ControllerState::new(&[1e6, 0.0]);
        assert_eq!(mpc_step(&[1e6, 0.0], &mut state, &cfg), Err(Error::InitialInfeasible));
    }

    #[test]
    fn region_scan_examples() {
        let cfg = paper_config(3.0, 1.53, 30);
        let grid = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![1e6, 0.0]];
        assert_eq!(feasible_region_scan(&grid, &cfg).unwrap(), vec![true, true, false]);
    }

    #[test]
    fn noise_free_tube_collapses() {
        let cfg = paper_config(3.0, 1.53, 30);
        let ctl = Controller::new(cfg.clone()).unwrap();
        let mut x = vec![8.0, 0.0];
        let mut state = ControllerState::new(&x);
        let mut last_cost = f64::INFINITY;
        for _ in 0..60 {
            let out = ctl.step(&x, &mut state).unwrap();
            assert!(!out.diagnostics.used_fallback);
            assert_eq!(out.u, out.v0);
            x = cfg.system().step(&x, &out.u, &[0.0, 0.0]);
            assert!(x.iter().zip(state.z()).all(|(a, b)| (a - b).abs() < 1e-12));
            last_cost = dot(&x, &x) + out.u[0] * out.u[0];
        }
        assert!(last_cost < 1e-12, "{last_cost}");
    }
}
