//! Empirical and Wasserstein-robust risk of scalar losses, and the synthesis
//! of probabilistic reachable sets (PRS) from closed-loop error samples.
//!
//! For losses `a_1..a_M` write `ḡ(τ) = M⁻¹ Σ_j (a_j − τ)⁺`. The robust
//! program solved here is
//!
//! ```text
//! min_τ  τ + ε⁻¹ (θλ + ḡ(τ))   s.t.  θλ + ḡ(τ) ≤ ε
//! ```
//!
//! with `λ` fixed at `λ_min`. Its minimizer `τ̃` is the robust VaR and the
//! optimal value the robust CVaR. Without the constraint the minimizer is the
//! order statistic `q = a_(⌈(1−ε)M⌉)`; with it, `τ̃ = max(q, τ_c)` where
//! `τ_c` is the smallest `τ` with `ḡ(τ) ≤ ε − θλ`. At `θ = 0` the program is
//! the sample-average one and `τ̃ = q`.

use alloc::vec::Vec;

use crate::constraints::Halfspaces;
use crate::linalg::{dot, Matrix};
use crate::{Error, Result};

/// `θ λ_min` may exceed `ε` by this relative amount, so that `θ = 1 − p`
/// is accepted despite rounding in `1 − p`.
pub const BUDGET_RTOL: f64 = 1e-12;

/// Rows are i.i.d. samples of the closed-loop error.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    samples: Matrix,
}

impl SampleSet {
    pub fn new(samples: Matrix) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::EmptySampleSet);
        }
        if !samples.is_finite() {
            return Err(Error::NonFinite("sample set"));
        }
        Ok(Self { samples })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptySampleSet);
        };
        let n = first.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("sample rows differ in length"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(Matrix::new(rows.len(), n, data)?)
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.samples
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        self.samples.row(j)
    }

    /// `|e_i|` over all samples.
    pub fn abs_column(&self, i: usize) -> Vec<f64> {
        self.samples.col(i).into_iter().map(f64::abs).collect()
    }

    /// `hᵀ e` over all samples.
    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|j| dot(h, self.sample(j))).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RiskMode {
    /// The radius is the optimal `τ̃` (robust VaR).
    #[default]
    VarByproduct,
    /// The radius is the robust CVaR value.
    Cvar,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrConfig {
    pub epsilon: f64,
    pub theta: f64,
    pub lambda_min: f64,
    pub mode: RiskMode,
}

impl DrConfig {
    pub fn new(epsilon: f64, theta: f64) -> Result<Self> {
        Self {
            epsilon,
            theta,
            lambda_min: 1.0,
            mode: RiskMode::default(),
        }
        .validated()
    }

    pub fn with_lambda_min(mut self, lambda_min: f64) -> Result<Self> {
        self.lambda_min = lambda_min;
        self.validated()
    }

    pub fn with_mode(mut self, mode: RiskMode) -> Self {
        self.mode = mode;
        self
    }

    fn validated(self) -> Result<Self> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Domain("epsilon must lie in (0, 1)"));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Domain("theta must be finite and >= 0"));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min.is_finite()) {
            return Err(Error::Domain("lambda_min must be finite and > 0"));
        }
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskResult {
    pub eta: f64,
    pub cvar: f64,
    pub lambda: f64,
    pub feasible: bool,
}

impl RiskResult {
    /// The radius selected by `mode`.
    pub fn radius(&self, mode: RiskMode) -> f64 {
        match mode {
            RiskMode::VarByproduct => self.eta,
            RiskMode::Cvar => self.cvar,
        }
    }
}

/// Losses sorted ascending with suffix sums, so that `ḡ` costs one binary
/// search. Sort once and query many `(ε, θ)` pairs.
#[derive(Clone, Debug)]
pub struct SortedLosses {
    sorted: Vec<f64>,
    // suffix[i] = Σ_{j ≥ i} sorted[j]
    suffix: Vec<f64>,
}

impl SortedLosses {
    pub fn new(losses: &[f64]) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if losses.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("losses"));
        }
        let mut sorted = losses.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let mut suffix = alloc::vec![0.0; sorted.len() + 1];
        for i in (0..sorted.len()).rev() {
            suffix[i] = suffix[i + 1] + sorted[i];
        }
        Ok(Self { sorted, suffix })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sorted
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// `ḡ(τ) = M⁻¹ Σ_j (a_j − τ)⁺`.
    pub fn mean_excess(&self, tau: f64) -> f64 {
        let idx = self.sorted.partition_point(|&a| a <= tau);
        let above = (self.sorted.len() - idx) as f64;
        (self.suffix[idx] - above * tau) / self.sorted.len() as f64
    }

    /// One-based rank `⌈(1−ε)M⌉`, computed as `M − ⌊εM⌋` with `εM` snapped
    /// to a nearby integer so decimal inputs like `0.2 · 30` are exact.
    fn var_rank(&self, epsilon: f64) -> usize {
        let m = self.sorted.len();
        let em = epsilon * m as f64;
        let nearest = libm::round(em);
        let fl = if libm::fabs(em - nearest) <= 1e-9 * (m as f64) {
            nearest
        } else {
            libm::floor(em)
        };
        m.saturating_sub(fl as usize).clamp(1, m)
    }

    /// The empirical VaR, the left endpoint of the CVaR argmin.
    pub fn var(&self, epsilon: f64) -> f64 {
        self.sorted[self.var_rank(epsilon) - 1]
    }

    /// Smallest `τ` with `ḡ(τ) ≤ budget`, obtained by inverting the
    /// piecewise-linear `ḡ` on the bracketing segment.
    fn excess_inverse(&self, budget: f64, start: usize) -> f64 {
        let m = self.sorted.len();
        if budget <= 0.0 {
            return self.max();
        }
        let rel = self.sorted[start..].partition_point(|&a| self.mean_excess(a) > budget);
        let i = start + rel;
        if i >= m {
            return self.max();
        }
        let hi = self.sorted[i];
        if i == start || self.mean_excess(hi) == budget {
            return hi;
        }
        let lo = self.sorted[i - 1];
        let idx = self.sorted.partition_point(|&a| a <= lo);
        let above = (m - idx) as f64;
        let tau = (self.suffix[idx] - m as f64 * budget) / above;
        tau.clamp(lo, hi)
    }

    /// Sample-average CVaR at level `ε`.
    pub fn empirical(&self, epsilon: f64) -> Result<RiskResult> {
        DrConfig::new(epsilon, 0.0)?;
        Ok(self.evaluate(self.var(epsilon), epsilon, 0.0, 1.0))
    }

    /// The robust program with `λ = λ_min`.
    pub fn solve(&self, cfg: &DrConfig) -> Result<RiskResult> {
        let cfg = cfg.validated()?;
        let lambda = cfg.lambda_min;
        let penalty = cfg.theta * lambda;
        if penalty > cfg.epsilon * (1.0 + BUDGET_RTOL) {
            return Err(Error::InfeasibleRadius {
                budget: penalty,
                epsilon: cfg.epsilon,
            });
        }
        let rank = self.var_rank(cfg.epsilon);
        let q = self.sorted[rank - 1];
        if cfg.theta == 0.0 {
            return Ok(self.evaluate(q, cfg.epsilon, 0.0, lambda));
        }
        let budget = (cfg.epsilon - penalty).max(0.0);
        let eta = if self.mean_excess(q) <= budget {
            q
        } else {
            self.excess_inverse(budget, rank - 1).max(q)
        };
        Ok(self.evaluate(eta, cfg.epsilon, penalty, lambda))
    }

    fn evaluate(&self, eta: f64, epsilon: f64, penalty: f64, lambda: f64) -> RiskResult {
        RiskResult {
            eta,
            cvar: eta + (penalty + self.mean_excess(eta)) / epsilon,
            lambda,
            feasible: true,
        }
    }
}

/// Sample-average CVaR `min_τ τ + (εM)⁻¹ Σ (a_j − τ)⁺` and its left argmin.
pub fn empirical_cvar(losses: &[f64], epsilon: f64) -> Result<RiskResult> {
    SortedLosses::new(losses)?.empirical(epsilon)
}

/// Worst-case CVaR over the Wasserstein ball with its robust VaR byproduct.
pub fn wc_cvar_program(losses: &[f64], cfg: &DrConfig) -> Result<RiskResult> {
    SortedLosses::new(losses)?.solve(cfg)
}

/// Empirical CVaR plus `θ/ε`, the robust CVaR for 1-Lipschitz losses
/// without the budget constraint.
pub fn dr_cvar_closed_form(losses: &[f64], epsilon: f64, theta: f64) -> Result<f64> {
    let cfg = DrConfig::new(epsilon, theta)?;
    Ok(empirical_cvar(losses, epsilon)?.cvar + cfg.theta / cfg.epsilon)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrsKind {
    Box,
    Halfspace,
}

/// How the violation budget `1 − p` is split among directions.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Allocation {
    /// `(1 − p) / n` for each of the `n` directions.
    #[default]
    Uniform,
    /// One `ε` per direction, in order.
    Explicit(Vec<f64>),
}

/// Parameters shared by every direction of a PRS synthesis.
#[derive(Clone, Debug, PartialEq)]
pub struct PrsSpec {
    pub p: f64,
    pub theta: f64,
    pub lambda_min: f64,
    pub mode: RiskMode,
    pub allocation: Allocation,
}

impl PrsSpec {
    pub fn new(p: f64, theta: f64) -> Self {
        Self {
            p,
            theta,
            lambda_min: 1.0,
            mode: RiskMode::default(),
            allocation: Allocation::Uniform,
        }
    }

    /// The per-direction budgets for `groups` directions.
    pub fn epsilons(&self, groups: usize) -> Result<Vec<f64>> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Domain("p must lie in (0, 1)"));
        }
        let limit = 1.0 - self.p;
        let eps = match &self.allocation {
            Allocation::Uniform => alloc::vec![limit / groups.max(1) as f64; groups],
            Allocation::Explicit(v) => {
                if v.len() != groups {
                    return Err(Error::DimensionMismatch("allocation: one epsilon per direction"));
                }
                v.clone()
            }
        };
        let total: f64 = eps.iter().sum();
        if eps.iter().any(|&e| !(e > 0.0)) || total > limit * (1.0 + 1e-12) {
            return Err(Error::Allocation { total, limit });
        }
        Ok(eps)
    }

    fn config(&self, epsilon: f64) -> Result<DrConfig> {
        Ok(DrConfig::new(epsilon, self.theta)?
            .with_lambda_min(self.lambda_min)?
            .with_mode(self.mode))
    }
}

/// Radii of a box `{|e_i| ≤ η_i}` or of a polytope `{H_i e ≤ η_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrPrsResult {
    pub etas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Rows with the same group share one two-sided loss and one `ε`.
    pub groups: Vec<usize>,
    pub theta: f64,
    pub p: f64,
    pub kind: PrsKind,
}

impl DrPrsResult {
    /// `Σ ε` counting each group once.
    pub fn total_risk(&self) -> f64 {
        let mut seen: Vec<usize> = Vec::new();
        let mut total = 0.0;
        for (g, e) in self.groups.iter().zip(&self.epsilons) {
            if !seen.contains(g) {
                seen.push(*g);
                total += e;
            }
        }
        total
    }
}

/// Box PRS over the listed (zero-based) coordinates. Unlisted coordinates
/// get an infinite radius and no risk.
pub fn synthesize_box_prs(samples: &SampleSet, coords: &[usize], spec: &PrsSpec) -> Result<DrPrsResult> {
    let n = samples.dim();
    if coords.is_empty() {
        return Err(Error::DimensionMismatch("box PRS needs at least one coordinate"));
    }
    for (k, &c) in coords.iter().enumerate() {
        if c >= n || coords[..k].contains(&c) {
            return Err(Error::DimensionMismatch("box PRS coordinates must be distinct and < nx"));
        }
    }
    let eps = spec.epsilons(coords.len())?;
    let mut etas = alloc::vec![f64::INFINITY; n];
    let mut epsilons = alloc::vec![0.0; n];
    for (&c, &e) in coords.iter().zip(&eps) {
        let cfg = spec.config(e)?;
        etas[c] = wc_cvar_program(&samples.abs_column(c), &cfg)?.radius(spec.mode);
        epsilons[c] = e;
    }
    Ok(DrPrsResult {
        etas,
        epsilons,
        groups: (0..n).collect(),
        theta: spec.theta,
        p: spec.p,
        kind: PrsKind::Box,
    })
}

fn is_negation(a: &[f64], b: &[f64]) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    scale > 0.0 && a.iter().zip(b).all(|(x, y)| (x + y).abs() <= 1e-12 * scale)
}

/// Groups the rows of `h`; with `symmetric_pairs`, a row and its first
/// later negation share a group. Returns the group of every row and, per
/// group, its representative row and whether the loss is two-sided.
pub fn row_groups(h: &Matrix, symmetric_pairs: bool) -> (Vec<usize>, Vec<(usize, bool)>) {
    let r = h.rows();
    let mut groups = alloc::vec![usize::MAX; r];
    let mut reps: Vec<(usize, bool)> = Vec::new();
    for i in 0..r {
        if groups[i] != usize::MAX {
            continue;
        }
        groups[i] = reps.len();
        let partner = if symmetric_pairs {
            (i + 1..r).find(|&j| groups[j] == usize::MAX && is_negation(h.row(i), h.row(j)))
        } else {
            None
        };
        if let Some(j) = partner {
            groups[j] = reps.len();
        }
        reps.push((i, partner.is_some()));
    }
    (groups, reps)
}

/// Polytopic PRS on the rows of `rows`, one loss `H_i e` per row. With
/// `symmetric_pairs`, rows `±H_i` share the two-sided loss `|H_i e|`.
pub fn synthesize_halfspace_prs(
    samples: &SampleSet,
    rows: &Halfspaces,
    spec: &PrsSpec,
    symmetric_pairs: bool,
) -> Result<DrPrsResult> {
    if rows.dim() != samples.dim() {
        return Err(Error::DimensionMismatch("halfspace rows vs sample dimension"));
    }
    let h = rows.matrix();
    let (groups, reps) = row_groups(h, symmetric_pairs);
    let eps = spec.epsilons(reps.len())?;
    let mut group_eta = Vec::with_capacity(reps.len());
    for (&(i, two_sided), &e) in reps.iter().zip(&eps) {
        let mut losses = samples.project(h.row(i));
        if two_sided {
            losses.iter_mut().for_each(|x| *x = x.abs());
        }
        group_eta.push(wc_cvar_program(&losses, &spec.config(e)?)?.radius(spec.mode));
    }
    Ok(DrPrsResult {
        etas: groups.iter().map(|&g| group_eta[g]).collect(),
        epsilons: groups.iter().map(|&g| eps[g]).collect(),
        groups,
        theta: spec.theta,
        p: spec.p,
        kind: PrsKind::Halfspace,
    })
}


#[cfg(test)]
mod proptests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    /// Direct evaluation of the robust objective at the breakpoints, with
    /// `τ_c` located by bisection on a plainly summed `ḡ`.
    pub(crate) fn breakpoint_oracle(losses: &[f64], eps: f64, theta: f64) -> (f64, f64) {
        let m = losses.len() as f64;
        let g = |t: f64| losses.iter().map(|a| (a - t).max(0.0)).sum::<f64>() / m;
        let obj = |t: f64| t + (theta + g(t)) / eps;
        let lo_a = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_a = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut cands: Vec<f64> = losses.to_vec();
        if theta > 0.0 {
            let budget = eps - theta;
            let (mut lo, mut hi) = (lo_a - budget.abs() - 1.0, hi_a);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) <= budget {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            cands.retain(|&a| a >= hi);
            cands.push(hi);
        }
        cands.sort_by(f64::total_cmp);
        let best = cands.iter().map(|&t| obj(t)).fold(f64::INFINITY, f64::min);
        let scale = 1.0 + best.abs();
        let eta = cands.into_iter().find(|&t| obj(t) <= best + 1e-11 * scale).unwrap();
        (eta, best)
    }

    fn losses() -> impl Strategy<Value = Vec<f64>> {
        (1usize..200, 0.01..20.0f64).prop_flat_map(|(m, s)| proptest::collection::vec(0.0..s, m))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn agrees_with_breakpoint_oracle(a in losses(), eps in 0.01..0.99f64, frac in 0.0..1.0f64) {
            let theta = frac * eps;
            let r = wc(&a, eps, theta);
            let (eta, cvar) = breakpoint_oracle(&a, eps, theta);
            prop_assert!((r.eta - eta).abs() <= 1e-9 * (1.0 + eta.abs()), "{} vs {}", r.eta, eta);
            prop_assert!((r.cvar - cvar).abs() <= 1e-9 * (1.0 + cvar.abs()));
        }

        #[test]
        fn zero_radius_is_the_empirical_program(a in losses(), eps in 0.01..0.99f64) {
            let r = wc(&a, eps, 0.0);
            let e = empirical_cvar(&a, eps).unwrap();
            prop_assert_eq!(r.eta.to_bits(), e.eta.to_bits());
            prop_assert_eq!(r.cvar.to_bits(), e.cvar.to_bits());
        }

        #[test]
        fn full_radius_gives_the_max(a in losses(), eps in 0.01..0.99f64) {
            let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(wc(&a, eps, eps).eta, max);
        }

        #[test]
        fn monotone_in_theta_and_level(a in losses(), eps in 0.02..0.98f64, f1 in 0.0..1.0f64, f2 in 0.0..1.0f64, shrink in 0.0..1.0f64) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(wc(&a, eps, lo * eps).eta <= wc(&a, eps, hi * eps).eta);
            // smaller ε, i.e. larger 1 − ε, at a fixed feasible θ
            let eps2 = eps * (0.01 + 0.99 * shrink);
            let theta = lo * eps2;
            prop_assert!(wc(&a, eps, theta).eta <= wc(&a, eps2, theta).eta);
        }

        #[test]
        fn cvar_dominates_eta(a in losses(), eps in 0.01..0.99f64, frac in 0.0..1.0f64) {
            let r = wc(&a, eps, frac * eps);
            prop_assert!(r.cvar >= r.eta);
        }

        #[test]
        fn slack_budget_matches_closed_form(a in proptest::collection::vec(0.0..1.0f64, 1..200), eps in 0.05..0.95f64, frac in 0.0..1.0f64) {
            // losses in [0, 1) keep ḡ(q) below ε − θ for small θ
            let s = SortedLosses::new(&a).unwrap();
            let q = s.var(eps);
            let slack = eps - s.mean_excess(q);
            prop_assume!(slack > 0.0);
            let theta = frac * slack;
            let r = wc(&a, eps, theta);
            prop_assert_eq!(r.eta, q);
            let closed = dr_cvar_closed_form(&a, eps, theta).unwrap();
            prop_assert!((r.cvar - closed).abs() <= 1e-12 * (1.0 + closed));
        }

        #[test]
        fn scaling_equivariance_when_slack(a in proptest::collection::vec(0.0..1.0f64, 1..200), eps in 0.05..0.95f64, frac in 0.0..1.0f64, c in 0.05..1.0f64) {
            let s = SortedLosses::new(&a).unwrap();
            let slack = eps - s.mean_excess(s.var(eps));
            prop_assume!(slack > 0.0);
            let theta = frac * slack;
            let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
            let r = wc(&a, eps, theta);
            let rs = wc(&scaled, eps, c * theta);
            prop_assert!((rs.eta - c * r.eta).abs() <= 1e-12 * (1.0 + r.eta));
            prop_assert!((rs.cvar - c * r.cvar).abs() <= 1e-12 * (1.0 + r.cvar));
        }
    }

    fn wc(a: &[f64], eps: f64, theta: f64) -> RiskResult {
        wc_cvar_program(a, &DrConfig::new(eps, theta).unwrap()).unwrap()
    }
}
