//! Seeded sampling, closed-loop Monte-Carlo and the reliability experiment.
//!
//! Every random quantity comes from an [`RngStream`] identified by a master
//! seed and a stream index, so results do not depend on how rayon schedules
//! the work. Reductions always run in index order.

use drsmpc_core::constraints::Halfspaces;
use drsmpc_core::drprs::{DrConfig, SampleSet, SortedLosses};
use drsmpc_core::linalg::{dot, psd_factor, Matrix};
use drsmpc_core::model::{NoiseModel, TubeGain};
use drsmpc_core::smpc::{Controller, ControllerState};
use drsmpc_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Stream index of the validation draws in the reliability experiment.
pub const VALIDATION_STREAM: u64 = u64::MAX;

/// Stream index of the training draws behind a single synthesized radius.
pub const TRAINING_STREAM: u64 = u64::MAX - 1;

/// Steps discarded before recording in [`ErrorSampling::Recursion`] mode.
pub const BURN_IN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

/// `w = G ξ` with `ξ` standard normal.
pub fn sample_noise(noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let xi: Vec<f64> = (0..noise.rank()).map(|_| StandardNormal.sample(rng)).collect();
    noise.apply(&xi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ErrorSampling {
    /// i.i.d. draws from the stationary `N(0, Σ_e)`.
    #[default]
    Stationary,
    /// Successive states of `e⁺ = A_K e + w` after a burn-in.
    Recursion,
}

/// Draws closed-loop error samples for the tube gain and noise model.
pub fn draw_error_samples(
    mode: ErrorSampling,
    count: usize,
    gain: &TubeGain,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<SampleSet> {
    let nx = gain.a_k().rows();
    let mut data = Vec::with_capacity(count * nx);
    match mode {
        ErrorSampling::Stationary => {
            let stationary = NoiseModel::from_factor(psd_factor(&gain.stationary_error_cov(noise)?)?)?;
            for _ in 0..count {
                data.extend(sample_noise(&stationary, rng));
            }
        }
        ErrorSampling::Recursion => {
            let mut e = vec![0.0; nx];
            for k in 0..BURN_IN + count {
                e = gain.error_step(&e, &sample_noise(noise, rng))?;
                if k >= BURN_IN {
                    data.extend_from_slice(&e);
                }
            }
        }
    }
    SampleSet::new(Matrix::new(count, nx, data)?)
}

/// States, inputs and noise of one closed-loop run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    /// `x(0..=T)`.
    pub x: Vec<Vec<f64>>,
    /// `z(0..=T)`.
    pub z: Vec<Vec<f64>>,
    /// `u(0..T)`.
    pub u: Vec<Vec<f64>>,
    /// `w(0..T)`.
    pub w: Vec<Vec<f64>>,
}

impl Trajectory {
    /// `e(k) = x(k) − z(k)`.
    pub fn errors(&self) -> Vec<Vec<f64>> {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(x, z)| x.iter().zip(z).map(|(a, b)| a - b).collect())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunMetrics {
    /// `T⁻¹ Σ_k x(k)ᵀQ x(k) + u(k)ᵀR u(k)`.
    pub cost: f64,
    /// Steps `k < T` with `x(k) ∉ X`.
    pub violations: usize,
    pub steps: usize,
    pub fallback_steps: usize,
}

/// Everything shared by the runs of one Monte-Carlo cell.
#[derive(Clone, Debug)]
pub struct ClosedLoopSetup {
    pub controller: Controller,
    pub noise: NoiseModel,
    pub x0: Vec<f64>,
    pub steps: usize,
    /// The untightened state constraints, for counting violations.
    pub state_constraints: Halfspaces,
}

/// Runs the controller for `setup.steps` steps.
pub fn run_closed_loop(setup: &ClosedLoopSetup, rng: &mut ChaCha8Rng) -> Result<(Trajectory, RunMetrics)> {
    if setup.steps == 0 {
        return Err(Error::Domain("a closed-loop run needs at least one step"));
    }
    let cfg = setup.controller.config();
    let system = cfg.system();
    let (q, r) = (cfg.q(), cfg.r());
    let mut x = setup.x0.clone();
    let mut state = ControllerState::new(&x);
    let mut traj = Trajectory::default();
    let mut metrics = RunMetrics {
        steps: setup.steps,
        ..RunMetrics::default()
    };
    let mut cost = 0.0;
    for _ in 0..setup.steps {
        if !setup.state_constraints.contains(&x)? {
            metrics.violations += 1;
        }
        traj.x.push(x.clone());
        traj.z.push(state.z().to_vec());
        let out = setup.controller.step(&x, &mut state)?;
        if out.diagnostics.used_fallback {
            metrics.fallback_steps += 1;
        }
        cost += dot(&x, &q.mul_vec(&x)) + dot(&out.u, &r.mul_vec(&out.u));
        let w = sample_noise(&setup.noise, rng);
        x = system.step(&x, &out.u, &w);
        traj.u.push(out.u);
        traj.w.push(w);
    }
    traj.x.push(x);
    traj.z.push(state.z().to_vec());
    metrics.cost = cost / setup.steps as f64;
    Ok((traj, metrics))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimMetrics {
    pub runs: usize,
    pub steps: usize,
    /// Mean over feasible runs of the per-run time-averaged cost.
    pub avg_cost: f64,
    pub violation_count: usize,
    pub total_state_samples: usize,
    pub infeasible_at_start: usize,
    pub fallback_steps: usize,
}

impl SimMetrics {
    /// Fraction of recorded states inside `X`.
    pub fn satisfaction(&self) -> f64 {
        1.0 - self.violation_count as f64 / self.total_state_samples as f64
    }
}

/// `runs` closed-loop runs; run `i` draws its noise from stream `i`, so
/// different setups with the same seed see the same noise sequences.
pub fn monte_carlo(setup: &ClosedLoopSetup, runs: usize, seed: u64) -> Result<SimMetrics> {
    let results: Vec<Result<RunMetrics>> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64).rng();
            run_closed_loop(setup, &mut rng).map(|(_, m)| m)
        })
        .collect();
    let mut out = SimMetrics {
        runs,
        steps: setup.steps,
        ..SimMetrics::default()
    };
    let mut cost_sum = 0.0;
    for res in results {
        match res {
            Ok(m) => {
                cost_sum += m.cost;
                out.violation_count += m.violations;
                out.total_state_samples += m.steps;
                out.fallback_steps += m.fallback_steps;
            }
            Err(Error::InitialInfeasible) => out.infeasible_at_start += 1,
            Err(e) => return Err(e),
        }
    }
    let feasible = runs - out.infeasible_at_start;
    out.avg_cost = if feasible > 0 {
        cost_sum / feasible as f64
    } else {
        f64::NAN
    };
    Ok(out)
}

/// One `(M, θ)` cell of the reliability experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReliabilityRow {
    pub m: usize,
    pub theta: f64,
    /// Fraction of training sets whose radius covers at least `p` of the
    /// validation set; NaN when `θ λ_min > ε`.
    pub r: f64,
    pub eta_q05: f64,
    pub eta_q50: f64,
    pub eta_q95: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug)]
pub struct ReliabilitySetup {
    pub gain: TubeGain,
    pub noise: NoiseModel,
    pub sampling: ErrorSampling,
    /// Zero-based coordinate of the two-sided loss `|e_i|`.
    pub coordinate: usize,
    pub p: f64,
    pub lambda_min: f64,
    pub m_values: Vec<usize>,
    pub thetas: Vec<f64>,
    pub n_mc: usize,
    pub n_v: usize,
    pub seed: u64,
}

/// Radii `η(θ)` for every training set, indexed `[M][replicate][θ]`, plus
/// the sorted validation losses.
#[derive(Clone, Debug)]
pub struct ReliabilityRaw {
    pub etas: Vec<Vec<Vec<f64>>>,
    pub validation: Vec<f64>,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Draws training and validation sets and solves for every radius. Training
/// set `i` of size `M` uses stream `(M << 32) | i`.
pub fn reliability_raw(setup: &ReliabilitySetup) -> Result<ReliabilityRaw> {
    if setup.n_mc == 0 || setup.n_v == 0 || setup.m_values.contains(&0) {
        return Err(Error::Domain("N_mc, N_v and every M must be at least 1"));
    }
    let nx = setup.gain.a_k().rows();
    if setup.coordinate >= nx {
        return Err(Error::DimensionMismatch("reliability coordinate"));
    }
    let epsilon = 1.0 - setup.p;
    DrConfig::new(epsilon, 0.0)?.with_lambda_min(setup.lambda_min)?;

    let mut rng = RngStream::new(setup.seed, VALIDATION_STREAM).rng();
    let validation = draw_error_samples(setup.sampling, setup.n_v, &setup.gain, &setup.noise, &mut rng)?;
    let mut validation = validation.abs_column(setup.coordinate);
    validation.sort_by(f64::total_cmp);

    let mut etas = Vec::with_capacity(setup.m_values.len());
    for &m in &setup.m_values {
        let per_set: Vec<Result<Vec<f64>>> = (0..setup.n_mc)
            .into_par_iter()
            .map(|i| {
                let stream = ((m as u64) << 32) | i as u64;
                let mut rng = RngStream::new(setup.seed, stream).rng();
                let train = draw_error_samples(setup.sampling, m, &setup.gain, &setup.noise, &mut rng)?;
                let losses = SortedLosses::new(&train.abs_column(setup.coordinate))?;
                setup
                    .thetas
                    .iter()
                    .map(|&theta| {
                        let cfg = DrConfig::new(epsilon, theta)?.with_lambda_min(setup.lambda_min)?;
                        match losses.solve(&cfg) {
                            Ok(r) => Ok(r.eta),
                            Err(Error::InfeasibleRadius { .. }) => Ok(f64::NAN),
                            Err(e) => Err(e),
                        }
                    })
                    .collect()
            })
            .collect();
        etas.push(per_set.into_iter().collect::<Result<Vec<_>>>()?);
    }
    Ok(ReliabilityRaw { etas, validation })
}

/// Aggregates [`reliability_raw`] into one row per `(M, θ)`.
pub fn reliability_experiment(setup: &ReliabilitySetup) -> Result<Vec<ReliabilityRow>> {
    let raw = reliability_raw(setup)?;
    let n_v = raw.validation.len() as f64;
    let mut rows = Vec::with_capacity(setup.m_values.len() * setup.thetas.len());
    for (mi, &m) in setup.m_values.iter().enumerate() {
        for (ti, &theta) in setup.thetas.iter().enumerate() {
            let mut etas: Vec<f64> = raw.etas[mi].iter().map(|set| set[ti]).collect();
            if etas.iter().any(|e| e.is_nan()) {
                rows.push(ReliabilityRow {
                    m,
                    theta,
                    r: f64::NAN,
                    eta_q05: f64::NAN,
                    eta_q50: f64::NAN,
                    eta_q95: f64::NAN,
                    feasible: false,
                });
                continue;
            }
            let covered = etas
                .iter()
                .filter(|&&eta| raw.validation.partition_point(|&v| v <= eta) as f64 / n_v >= setup.p)
                .count();
            etas.sort_by(f64::total_cmp);
            rows.push(ReliabilityRow {
                m,
                theta,
                r: covered as f64 / etas.len() as f64,
                eta_q05: quantile_sorted(&etas, 0.05),
                eta_q50: quantile_sorted(&etas, 0.5),
                eta_q95: quantile_sorted(&etas, 0.95),
                feasible: true,
            });
        }
    }
    Ok(rows)
}
