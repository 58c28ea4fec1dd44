//! Dense convex quadratic programs
//!
//! ```text
//! min ½ xᵀP x + qᵀx + c   s.t.   A_in x ≤ b_in,   A_eq x = b_eq
//! ```
//!
//! solved by the dual active-set method of Goldfarb and Idnani. Starting at the
//! unconstrained minimizer, the method adds the most violated constraint, takes
//! primal and dual steps, and drops constraints whose multiplier reaches zero.
//! The factorization `J = L⁻ᵀ Q` and the triangular `R` are updated by
//! orthogonal rotations on every change of the active set.
//!
//! A semidefinite `P` is handled by proximal-point outer iterations. Every
//! returned optimum is checked against scaled KKT residuals, and every
//! infeasibility claim carries a verified Farkas certificate.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, norm_inf, Cholesky, Matrix};
use crate::{Error, Result};

/// Bound on every scaled KKT residual of an [`QpStatus::Optimal`] solution.
pub const KKT_TOL: f64 = 1e-6;

/// A point is declared feasible when its uniform slack is at most this.
pub const FEASIBILITY_TOL: f64 = 1e-6;

// a new constraint normal counts as dependent on the active ones when the
// part of Jᵀn outside the active span is this small, relative and squared
const DEPENDENT: f64 = 1e-22;
const VIOLATION: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub p: Matrix,
    pub q: Vec<f64>,
    pub constant: f64,
    pub a_in: Matrix,
    pub b_in: Vec<f64>,
    pub a_eq: Matrix,
    pub b_eq: Vec<f64>,
}

impl QpProblem {
    /// An unconstrained problem.
    pub fn new(p: Matrix, q: Vec<f64>) -> Self {
        let d = q.len();
        Self {
            p,
            q,
            constant: 0.0,
            a_in: Matrix::zeros(0, d),
            b_in: Vec::new(),
            a_eq: Matrix::zeros(0, d),
            b_eq: Vec::new(),
        }
    }

    pub fn with_inequalities(mut self, a_in: Matrix, b_in: Vec<f64>) -> Self {
        self.a_in = a_in;
        self.b_in = b_in;
        self
    }

    pub fn with_equalities(mut self, a_eq: Matrix, b_eq: Vec<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.p.mul_vec(x)) + dot(&self.q, x) + self.constant
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.q.len();
        if self.p.shape() != (d, d)
            || self.a_in.cols() != d
            || self.a_in.rows() != self.b_in.len()
            || self.a_eq.cols() != d
            || self.a_eq.rows() != self.b_eq.len()
        {
            return Err(Error::BadProblem("inconsistent dimensions"));
        }
        let vectors_finite = self
            .q
            .iter()
            .chain(&self.b_in)
            .chain(&self.b_eq)
            .all(|x| x.is_finite());
        if !vectors_finite
            || !self.constant.is_finite()
            || !self.p.is_finite()
            || !self.a_in.is_finite()
            || !self.a_eq.is_finite()
        {
            return Err(Error::BadProblem("non-finite data"));
        }
        if !self.p.is_symmetric(1e-10 * self.p.max_abs().max(1.0)) {
            return Err(Error::BadProblem("P is not symmetric"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    MaxIter,
}

/// Scaled KKT residuals for the multipliers of the `≤` form.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// `y ≥ 0` and `z` with `A_inᵀy + A_eqᵀz = 0` and `yᵀb_in + zᵀb_eq < 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub status: QpStatus,
    pub objective: f64,
    /// Multipliers of `A_in x ≤ b_in`.
    pub y_in: Vec<f64>,
    /// Multipliers of `A_eq x = b_eq`, with `P x + q + A_inᵀy + A_eqᵀz = 0`.
    pub z_eq: Vec<f64>,
    pub kkt: KktResiduals,
    pub certificate: Option<Certificate>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Scaled KKT residuals of `(x, y, z)` for `prob`.
pub fn kkt_residuals(prob: &QpProblem, x: &[f64], y: &[f64], z: &[f64]) -> KktResiduals {
    let px = prob.p.mul_vec(x);
    let aty = prob.a_in.tr_mul_vec(y);
    let atz = prob.a_eq.tr_mul_vec(z);
    let grad: Vec<f64> = (0..x.len()).map(|i| px[i] + prob.q[i] + aty[i] + atz[i]).collect();
    let stat_scale = norm_inf(&px)
        .max(norm_inf(&prob.q))
        .max(norm_inf(&aty))
        .max(norm_inf(&atz));

    let ax = prob.a_in.mul_vec(x);
    let aex = prob.a_eq.mul_vec(x);
    let viol_in = ax
        .iter()
        .zip(&prob.b_in)
        .fold(0.0f64, |m, (a, b)| m.max(a - b));
    let viol_eq = aex
        .iter()
        .zip(&prob.b_eq)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let row_scale = norm_inf(&ax)
        .max(norm_inf(&prob.b_in))
        .max(norm_inf(&aex))
        .max(norm_inf(&prob.b_eq));

    let y_scale = norm_inf(y);
    let dual = y.iter().fold(0.0f64, |m, &v| m.max(-v));
    let comp = y
        .iter()
        .zip(ax.iter().zip(&prob.b_in))
        .fold(0.0f64, |m, (y, (a, b))| m.max((y * (a - b)).abs()));

    KktResiduals {
        stationarity: norm_inf(&grad) / (1.0 + stat_scale),
        primal: viol_in.max(viol_eq) / (1.0 + row_scale),
        dual: dual / (1.0 + y_scale),
        complementarity: comp / ((1.0 + y_scale) * (1.0 + row_scale)),
    }
}

/// Checks a Farkas certificate numerically.
pub fn verify_certificate(prob: &QpProblem, cert: &Certificate) -> bool {
    if cert.y.len() != prob.b_in.len() || cert.z.len() != prob.b_eq.len() {
        return false;
    }
    if cert.y.iter().any(|&v| v < 0.0) {
        return false;
    }
    let weight: f64 = cert.y.iter().chain(&cert.z).map(|v| v.abs()).sum();
    if weight == 0.0 {
        return false;
    }
    let mut combo = prob.a_in.tr_mul_vec(&cert.y);
    for (c, e) in combo.iter_mut().zip(prob.a_eq.tr_mul_vec(&cert.z)) {
        *c += e;
    }
    let a_scale = prob.a_in.max_abs().max(prob.a_eq.max_abs()).max(1.0);
    let gap = dot(&cert.y, &prob.b_in) + dot(&cert.z, &prob.b_eq);
    let b_scale = norm_inf(&prob.b_in).max(norm_inf(&prob.b_eq)).max(1.0);
    norm_inf(&combo) <= 1e-9 * weight * a_scale && gap < -1e-9 * weight * b_scale
}

/// Solves `prob`, factoring `P` on every call.
pub fn solve_qp(prob: &QpProblem) -> Result<QpSolution> {
    prob.validate()?;
    match Cholesky::new(&prob.p) {
        Ok(chol) => {
            let factor = Factored {
                p: prob.p.clone(),
                jt: chol.inv_lt().transpose(),
            };
            Ok(factor.solve_validated(prob, &prob.q))
        }
        Err(Error::NotPositiveDefinite) => proximal(prob),
        Err(e) => Err(e),
    }
}

/// A positive definite Hessian factored once, for many problems that share
/// it and differ in `q`, constraints or offsets.
#[derive(Clone, Debug)]
pub struct Factored {
    p: Matrix,
    // Jᵀ with J = L⁻ᵀ, stored so that columns of J are contiguous rows
    jt: Matrix,
}

impl Factored {
    pub fn new(p: &Matrix) -> Result<Self> {
        if !p.is_square() || !p.is_finite() || !p.is_symmetric(1e-10 * p.max_abs().max(1.0)) {
            return Err(Error::BadProblem("P must be finite, square and symmetric"));
        }
        let chol = Cholesky::new(p)?;
        Ok(Self {
            p: p.clone(),
            jt: chol.inv_lt().transpose(),
        })
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    /// Solves `prob`, whose `P` must equal the factored one.
    pub fn solve(&self, prob: &QpProblem) -> Result<QpSolution> {
        prob.validate()?;
        if prob.p != self.p {
            return Err(Error::BadProblem("P differs from the factored matrix"));
        }
        Ok(self.solve_validated(prob, &prob.q))
    }

    fn solve_validated(&self, prob: &QpProblem, q: &[f64]) -> QpSolution {
        let raw = dual_active_set(&self.jt, q, prob);
        finish(prob, raw)
    }
}

enum Outcome {
    Done,
    Infeasible(Certificate),
    Stalled,
}

struct Raw {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    outcome: Outcome,
    iterations: usize,
}

fn finish(prob: &QpProblem, raw: Raw) -> QpSolution {
    let kkt = kkt_residuals(prob, &raw.x, &raw.y, &raw.z);
    let (status, certificate) = match raw.outcome {
        Outcome::Infeasible(cert) if verify_certificate(prob, &cert) => {
            (QpStatus::PrimalInfeasible, Some(cert))
        }
        Outcome::Infeasible(_) => (QpStatus::MaxIter, None),
        Outcome::Done | Outcome::Stalled if kkt.max() <= KKT_TOL => (QpStatus::Optimal, None),
        Outcome::Done | Outcome::Stalled => (QpStatus::MaxIter, None),
    };
    QpSolution {
        objective: prob.objective(&raw.x),
        x: raw.x,
        status,
        y_in: raw.y,
        z_eq: raw.z,
        kkt,
        certificate,
        iterations: raw.iterations,
    }
}

#[derive(Clone, Copy, Debug)]
enum Row {
    Eq(usize),
    In(usize),
}

/// `J` (through its transpose) and the upper triangular `R` with
/// `Jᵀ N = [R; 0]` for the active normals `N`.
struct Work {
    n: usize,
    jt: Vec<f64>,
    r: Vec<f64>,
    r_norm: f64,
    active: Vec<Row>,
    u: Vec<f64>,
}

impl Work {
    fn iq(&self) -> usize {
        self.active.len()
    }

    /// `d = Jᵀ np`.
    fn compute_d(&self, np: &[f64], d: &mut [f64]) {
        for (c, dc) in d.iter_mut().enumerate() {
            *dc = dot(&self.jt[c * self.n..(c + 1) * self.n], np);
        }
    }

    /// Primal direction `z = J₂ d₂`.
    fn update_z(&self, d: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        for (c, &dc) in d.iter().enumerate().skip(self.iq()) {
            for (zi, j) in z.iter_mut().zip(&self.jt[c * self.n..(c + 1) * self.n]) {
                *zi += dc * j;
            }
        }
    }

    /// Dual direction `r = R⁻¹ d₁`.
    fn update_r(&self, d: &[f64], r: &mut [f64]) {
        let n = self.n;
        let iq = self.iq();
        for i in (0..iq).rev() {
            let mut s = d[i];
            for k in i + 1..iq {
                s -= self.r[i * n + k] * r[k];
            }
            r[i] = s / self.r[i * n + i];
        }
    }

    /// Reflects rows `a` and `b` of `Jᵀ` by the rotation `(cc, ss)`.
    fn reflect_jt(&mut self, a: usize, b: usize, cc: f64, ss: f64) {
        let n = self.n;
        let xny = ss / (1.0 + cc);
        let (lo, hi) = self.jt.split_at_mut(b * n);
        let ra = &mut lo[a * n..(a + 1) * n];
        let rb = &mut hi[..n];
        for (x, y) in ra.iter_mut().zip(rb.iter_mut()) {
            let t1 = *x;
            let t2 = *y;
            *x = t1 * cc + t2 * ss;
            *y = xny * (t1 + *x) - t2;
        }
    }

    /// Appends the normal whose `Jᵀ n` is `d` to the factorization. Returns
    /// false if it is numerically dependent on the active normals.
    fn add(&mut self, d: &mut [f64]) -> bool {
        let n = self.n;
        let iq = self.iq();
        for c in (iq + 1..n).rev() {
            let mut cc = d[c - 1];
            let mut ss = d[c];
            let h = libm::hypot(cc, ss);
            if h == 0.0 {
                continue;
            }
            d[c] = 0.0;
            cc /= h;
            ss /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[c - 1] = -h;
            } else {
                d[c - 1] = h;
            }
            self.reflect_jt(c - 1, c, cc, ss);
        }
        if libm::fabs(d[iq]) <= f64::EPSILON * self.r_norm {
            return false;
        }
        for i in 0..=iq {
            self.r[i * n + iq] = d[i];
        }
        self.r_norm = self.r_norm.max(libm::fabs(d[iq]));
        true
    }

    /// Removes the active constraint at position `pos`.
    fn delete(&mut self, pos: usize) {
        let n = self.n;
        let iq = self.iq();
        for c in pos..iq - 1 {
            for i in 0..=c + 1 {
                self.r[i * n + c] = self.r[i * n + c + 1];
            }
        }
        for i in 0..iq {
            self.r[i * n + iq - 1] = 0.0;
        }
        self.active.remove(pos);
        self.u.remove(pos);
        let iq = iq - 1;
        for c in pos..iq {
            let mut cc = self.r[c * n + c];
            let mut ss = self.r[(c + 1) * n + c];
            let h = libm::hypot(cc, ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(c + 1) * n + c] = 0.0;
            if cc < 0.0 {
                self.r[c * n + c] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[c * n + c] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in c + 1..iq {
                let t1 = self.r[c * n + k];
                let t2 = self.r[(c + 1) * n + k];
                self.r[c * n + k] = t1 * cc + t2 * ss;
                self.r[(c + 1) * n + k] = xny * (t1 + self.r[c * n + k]) - t2;
            }
            self.reflect_jt(c, c + 1, cc, ss);
        }
    }

    fn infeasibility(&self, r: &[f64], m: usize, p: usize, new: Row) -> Certificate {
        let mut y = vec![0.0; m];
        let mut z = vec![0.0; p];
        for (k, row) in self.active.iter().enumerate() {
            match *row {
                Row::Eq(i) => z[i] = r[k],
                Row::In(i) => y[i] = -r[k],
            }
        }
        match new {
            Row::In(i) => y[i] = 1.0,
            Row::Eq(i) => z[i] = -1.0,
        }
        Certificate { y, z }
    }
}

fn violation_tol(a: &[f64], x: &[f64], b: f64) -> f64 {
    let ax: f64 = a.iter().zip(x).map(|(a, x)| (a * x).abs()).sum();
    VIOLATION * (1.0 + b.abs() + ax)
}

fn dual_active_set(jt0: &Matrix, q: &[f64], prob: &QpProblem) -> Raw {
    let n = q.len();
    let m = prob.b_in.len();
    let p = prob.b_eq.len();
    let max_iter = 50 * (n + m + p) + 100;
    let mut w = Work {
        n,
        jt: jt0.as_slice().to_vec(),
        r: vec![0.0; n * n],
        r_norm: 1.0,
        active: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
    };
    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];

    // unconstrained minimizer −J Jᵀ q
    w.compute_d(q, &mut d);
    let mut x = vec![0.0; n];
    for (c, &dc) in d.iter().enumerate() {
        for (xi, j) in x.iter_mut().zip(&w.jt[c * n..(c + 1) * n]) {
            *xi -= dc * j;
        }
    }

    let multipliers = |w: &Work| {
        let mut y = vec![0.0; m];
        let mut ze = vec![0.0; p];
        for (row, &u) in w.active.iter().zip(&w.u) {
            match *row {
                Row::Eq(i) => ze[i] = -u,
                Row::In(i) => y[i] = u,
            }
        }
        (y, ze)
    };
    let raw = |x: Vec<f64>, w: &Work, outcome: Outcome, iterations: usize| {
        let (y, z) = multipliers(w);
        Raw {
            x,
            y,
            z,
            outcome,
            iterations,
        }
    };

    for i in 0..p {
        let np = prob.a_eq.row(i);
        w.compute_d(np, &mut d);
        w.update_z(&d, &mut z);
        w.update_r(&d, &mut r);
        let iq = w.iq();
        let d2: f64 = d[iq..].iter().map(|v| v * v).sum();
        let res = dot(np, &x) - prob.b_eq[i];
        if d2 <= DEPENDENT * dot(&d, &d) {
            if res.abs() <= violation_tol(np, &x, prob.b_eq[i]) {
                continue;
            }
            let mut cert = w.infeasibility(&r, m, p, Row::Eq(i));
            if res > 0.0 {
                cert.z.iter_mut().for_each(|v| *v = -*v);
            }
            return raw(x, &w, Outcome::Infeasible(cert), 0);
        }
        let t2 = -res / dot(&z, np);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += t2 * zi;
        }
        for k in 0..iq {
            w.u[k] -= t2 * r[k];
        }
        if !w.add(&mut d) {
            return raw(x, &w, Outcome::Stalled, 0);
        }
        w.active.push(Row::Eq(i));
        w.u.push(t2);
    }

    let mut is_active = vec![false; m];
    let mut np = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let mut chosen = None;
        let mut worst = 0.0;
        for i in 0..m {
            if is_active[i] {
                continue;
            }
            let a = prob.a_in.row(i);
            let viol = dot(a, &x) - prob.b_in[i];
            if viol > worst && viol > violation_tol(a, &x, prob.b_in[i]) {
                worst = viol;
                chosen = Some(i);
            }
        }
        let Some(ip) = chosen else {
            return raw(x, &w, Outcome::Done, iterations);
        };
        // ≥ form: (−a)ᵀx + b ≥ 0
        for (v, a) in np.iter_mut().zip(prob.a_in.row(ip)) {
            *v = -a;
        }
        let mut s_ip = prob.b_in[ip] - dot(prob.a_in.row(ip), &x);
        let mut u_new = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return raw(x, &w, Outcome::Stalled, iterations);
            }
            w.compute_d(&np, &mut d);
            w.update_z(&d, &mut z);
            w.update_r(&d, &mut r);
            let iq = w.iq();

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..iq {
                if matches!(w.active[k], Row::In(_)) && r[k] > 0.0 {
                    let t = w.u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let d2: f64 = d[iq..].iter().map(|v| v * v).sum();
            let t2 = if d2 > DEPENDENT * dot(&d, &d) {
                -s_ip / dot(&z, &np)
            } else {
                f64::INFINITY
            };

            match drop {
                None if t2 == f64::INFINITY => {
                    let cert = w.infeasibility(&r, m, p, Row::In(ip));
                    return raw(x, &w, Outcome::Infeasible(cert), iterations);
                }
                Some(l) if t2 == f64::INFINITY => {
                    // dual step only
                    for k in 0..iq {
                        w.u[k] -= t1 * r[k];
                    }
                    u_new += t1;
                    if let Row::In(i) = w.active[l] {
                        is_active[i] = false;
                    }
                    w.delete(l);
                    continue;
                }
                _ => {}
            }

            let t = t1.min(t2);
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += t * zi;
            }
            for k in 0..iq {
                w.u[k] -= t * r[k];
            }
            u_new += t;

            if t2 <= t1 {
                if !w.add(&mut d) {
                    return raw(x, &w, Outcome::Stalled, iterations);
                }
                w.active.push(Row::In(ip));
                w.u.push(u_new);
                is_active[ip] = true;
                break;
            }
            let l = drop.unwrap_or_else(|| unreachable!());
            if let Row::In(i) = w.active[l] {
                is_active[i] = false;
            }
            w.delete(l);
            s_ip = prob.b_in[ip] - dot(prob.a_in.row(ip), &x);
        }
    }
}

/// Proximal-point iterations `x⁺ = argmin f(x) + ρ/2 ‖x − x_k‖²` for a
/// semidefinite `P`.
fn proximal(prob: &QpProblem) -> Result<QpSolution> {
    let n = prob.dim();
    let rho = 1e-4 * prob.p.max_abs().max(1.0);
    let shifted = &prob.p + &Matrix::identity(n).scale(rho);
    let chol = Cholesky::new(&shifted)?;
    let factor = Factored {
        p: shifted,
        jt: chol.inv_lt().transpose(),
    };
    let mut xk = vec![0.0; n];
    let mut total = 0;
    let mut last = None;
    for _ in 0..2000 {
        let q: Vec<f64> = prob.q.iter().zip(&xk).map(|(q, x)| q - rho * x).collect();
        let raw = dual_active_set(&factor.jt, &q, prob);
        total += raw.iterations;
        let mut sol = finish(prob, raw);
        sol.iterations = total;
        match sol.status {
            QpStatus::PrimalInfeasible | QpStatus::Optimal => return Ok(sol),
            QpStatus::MaxIter if sol.certificate.is_none() && sol.x.iter().all(|v| v.is_finite()) => {
                xk.clone_from(&sol.x);
                last = Some(sol);
            }
            QpStatus::MaxIter => return Ok(sol),
        }
    }
    Ok(last.unwrap_or_else(|| unreachable!()))
}

/// Smallest uniform slack `s ≥ 0` such that `A_in x ≤ b_in + s` and
/// `|A_eq x − b_eq| ≤ s` are solvable, from the always-feasible QP
/// `min s² + 1e−8 ‖x‖²`.
pub fn feasibility_slack(a_in: &Matrix, b_in: &[f64], a_eq: &Matrix, b_eq: &[f64]) -> Result<f64> {
    let d = a_in.cols();
    if a_in.rows() != b_in.len() || a_eq.rows() != b_eq.len() || a_eq.cols() != d {
        return Err(Error::BadProblem("inconsistent dimensions"));
    }
    let m = b_in.len();
    let e = b_eq.len();
    let rows = m + 2 * e + 1;
    let mut a = Matrix::zeros(rows, d + 1);
    let mut b = Vec::with_capacity(rows);
    for i in 0..m {
        a.row_mut(i)[..d].copy_from_slice(a_in.row(i));
        a[(i, d)] = -1.0;
        b.push(b_in[i]);
    }
    for i in 0..e {
        let (up, down) = (m + 2 * i, m + 2 * i + 1);
        for (k, &v) in a_eq.row(i).iter().enumerate() {
            a[(up, k)] = v;
            a[(down, k)] = -v;
        }
        a[(up, d)] = -1.0;
        a[(down, d)] = -1.0;
        b.push(b_eq[i]);
        b.push(-b_eq[i]);
    }
    a[(rows - 1, d)] = -1.0;
    b.push(0.0);

    let mut diag = vec![2e-8; d + 1];
    diag[d] = 2.0;
    let prob = QpProblem::new(Matrix::diag(&diag), vec![0.0; d + 1]).with_inequalities(a, b);
    let sol = solve_qp(&prob)?;
    if !sol.is_optimal() {
        return Err(Error::NoConvergence);
    }
    Ok(sol.x[d].max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(p: f64, q: f64) -> QpProblem {
        QpProblem::new(Matrix::diag(&[p]), vec![q])
    }

    #[test]
    fn unconstrained_minimum() {
        let sol = solve_qp(&QpProblem::new(Matrix::diag(&[2.0, 2.0]), vec![0.0, 0.0])).unwrap();
        assert!(sol.is_optimal());
        assert_eq!(sol.x, vec![0.0, 0.0]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn bound_with_active_multiplier() {
        // (x − 1)² = ½·2x² − 2x + 1
        let prob = scalar(2.0, -2.0)
            .with_constant(1.0)
            .with_inequalities(Matrix::identity(1), vec![0.0]);
        let sol = solve_qp(&prob).unwrap();
        assert!(sol.is_optimal());
        assert!(sol.x[0].abs() < 1e-12);
        assert!((sol.y_in[0] - 2.0).abs() < 1e-12);
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bounds_give_certificate() {
        let prob = scalar(2.0, 0.0).with_inequalities(Matrix::from_rows(&[[1.0], [-1.0]]), vec![-1.0, -1.0]);
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
        let cert = sol.certificate.unwrap();
        assert_eq!(cert.y, vec![1.0, 1.0]);
        assert!(verify_certificate(&prob, &cert));
    }

    #[test]
    fn equalities() {
        // min x² + y² s.t. x + y = 2
        let prob = QpProblem::new(Matrix::diag(&[2.0, 2.0]), vec![0.0, 0.0])
            .with_equalities(Matrix::from_rows(&[[1.0, 1.0]]), vec![2.0]);
        let sol = solve_qp(&prob).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
        assert!((sol.z_eq[0] + 2.0).abs() < 1e-12);

        // a repeated consistent row is skipped
        let dup = prob
            .clone()
            .with_equalities(Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]), vec![2.0, 4.0]);
        assert!(solve_qp(&dup).unwrap().is_optimal());

        // an inconsistent one is certified
        let bad = prob.with_equalities(Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]), vec![2.0, 5.0]);
        let sol = solve_qp(&bad).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
        assert!(verify_certificate(&bad, sol.certificate.as_ref().unwrap()));
    }

    #[test]
    fn mixed_infeasibility() {
        // x = 0 but x ≥ 1
        let prob = scalar(1.0, 0.0)
            .with_equalities(Matrix::identity(1), vec![0.0])
            .with_inequalities(Matrix::from_rows(&[[-1.0]]), vec![-1.0]);
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn semidefinite_hessian() {
        // min x + y² s.t. x ≥ −1
        let prob = QpProblem::new(Matrix::diag(&[0.0, 2.0]), vec![1.0, 0.0])
            .with_inequalities(Matrix::from_rows(&[[-1.0, 0.0]]), vec![1.0]);
        let sol = solve_qp(&prob).unwrap();
        assert!(sol.is_optimal(), "{sol:?}");
        assert!((sol.x[0] + 1.0).abs() < 1e-6);
        assert!((sol.y_in[0] - 1.0).abs() < 1e-6);

        // unbounded below: never reported optimal
        let unbounded = QpProblem::new(Matrix::diag(&[0.0]), vec![1.0]);
        assert_ne!(solve_qp(&unbounded).unwrap().status, QpStatus::Optimal);
    }

    #[test]
    fn bad_problems() {
        let asym = QpProblem::new(Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]), vec![0.0, 0.0]);
        assert!(matches!(solve_qp(&asym), Err(Error::BadProblem(_))));
        let dims = QpProblem::new(Matrix::identity(2), vec![0.0]);
        assert!(matches!(solve_qp(&dims), Err(Error::BadProblem(_))));
        let nan = scalar(1.0, f64::NAN);
        assert!(matches!(solve_qp(&nan), Err(Error::BadProblem(_))));
        let rows = scalar(1.0, 0.0).with_inequalities(Matrix::identity(1), vec![]);
        assert!(matches!(solve_qp(&rows), Err(Error::BadProblem(_))));
    }

    #[test]
    fn factored_reuse() {
        let f = Factored::new(&Matrix::diag(&[2.0])).unwrap();
        let sol = f.solve(&scalar(2.0, -2.0).with_inequalities(Matrix::identity(1), vec![0.5])).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-12);
        assert!(f.solve(&scalar(3.0, 0.0)).is_err());
    }

    #[test]
    fn slack_examples() {
        let two = Matrix::from_rows(&[[1.0], [-1.0]]);
        let none = Matrix::zeros(0, 1);
        assert!(feasibility_slack(&two, &[1.0, 1.0], &none, &[]).unwrap() <= FEASIBILITY_TOL);
        let s = feasibility_slack(&two, &[-1.0, -1.0], &none, &[]).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        let s = feasibility_slack(&Matrix::identity(1), &[3.0], &Matrix::identity(1), &[3.0]).unwrap();
        assert!(s <= FEASIBILITY_TOL);
        assert!(feasibility_slack(&two, &[1.0], &none, &[]).is_err());
    }
}
