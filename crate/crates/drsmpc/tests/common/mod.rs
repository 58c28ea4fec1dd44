#![allow(dead_code)]

use drsmpc_core::constraints::{tighten, Halfspaces, TightenedSet};
use drsmpc_core::linalg::Matrix;
use drsmpc_core::model::{LtiSystem, NoiseModel, TubeGain};
use drsmpc_core::smpc::{Controller, MpcConfig};
use drsmpc::sim::ClosedLoopSetup;

pub const PAPER_CFG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/paper.cfg");
pub const BOUND3_CFG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/bound3.cfg");

pub fn gain() -> TubeGain {
    TubeGain::new(&LtiSystem::double_integrator(), Matrix::from_rows(&[[-0.2, -0.6]])).unwrap()
}

pub fn noise() -> NoiseModel {
    NoiseModel::from_covariance(&Matrix::from_rows(&[[0.25, 0.5], [0.5, 1.0]])).unwrap()
}

pub fn state_set(bound: f64) -> Halfspaces {
    Halfspaces::symmetric_bound(2, 1, bound).unwrap()
}

/// `|x2| ≤ bound` tightened by `eta`, no input constraints, `Q = I`, `R = 1`.
pub fn mpc_config(bound: f64, eta: f64, horizon: usize) -> MpcConfig {
    let z = tighten(&state_set(bound), &[eta, eta]).unwrap();
    let v = TightenedSet::untightened(Halfspaces::unconstrained(1));
    MpcConfig::new(
        LtiSystem::double_integrator(),
        gain(),
        Matrix::identity(2),
        Matrix::identity(1),
        horizon,
        z,
        v,
    )
    .unwrap()
}

pub fn setup(bound: f64, eta: f64, x0: [f64; 2], steps: usize) -> ClosedLoopSetup {
    ClosedLoopSetup {
        controller: Controller::new(mpc_config(bound, eta, 30)).unwrap(),
        noise: noise(),
        x0: x0.to_vec(),
        steps,
        state_constraints: state_set(bound),
    }
}
