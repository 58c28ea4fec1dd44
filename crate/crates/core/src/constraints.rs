//! Halfspace polytopes `{x : H x ≤ h}` and their tightening by a reachable
//! set, `Z = X ⊖ A`.
//!
//! When the reachable set is built on the constraint rows themselves
//! (`A = {H e ≤ η}`), the Pontryagin difference is exact and reduces to
//! `h − η`. For a box-shaped set the offset of each row is the box support
//! function `Σ_k |H_ik| η_k`.

use alloc::vec::Vec;

use crate::drprs::{DrPrsResult, PrsKind};
use crate::linalg::{dot, Matrix};
use crate::{Error, Result};

/// Membership tolerance for [`Halfspaces::contains`] and [`TightenedSet::contains`].
pub const CONTAINS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Halfspaces {
    h_mat: Matrix,
    h: Vec<f64>,
}

impl Halfspaces {
    pub fn new(h_mat: Matrix, h: Vec<f64>) -> Result<Self> {
        if h_mat.rows() != h.len() {
            return Err(Error::DimensionMismatch("halfspaces: H rows != len(h)"));
        }
        if !h_mat.is_finite() || h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("halfspaces"));
        }
        Ok(Self { h_mat, h })
    }

    /// A constraint set for states or inputs; these must contain the origin
    /// in their interior, i.e. `h > 0`.
    pub fn constraint_set(h_mat: Matrix, h: Vec<f64>) -> Result<Self> {
        if h.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("constraint sets need h > 0"));
        }
        Self::new(h_mat, h)
    }

    /// No rows: all of `R^n`.
    pub fn unconstrained(n: usize) -> Self {
        Self {
            h_mat: Matrix::zeros(0, n),
            h: Vec::new(),
        }
    }

    /// `|x_coord| ≤ bound` as the two rows `±e_coord`.
    pub fn symmetric_bound(n: usize, coord: usize, bound: f64) -> Result<Self> {
        if coord >= n {
            return Err(Error::DimensionMismatch("coordinate outside state"));
        }
        let mut h_mat = Matrix::zeros(2, n);
        h_mat[(0, coord)] = 1.0;
        h_mat[(1, coord)] = -1.0;
        Self::constraint_set(h_mat, alloc::vec![bound, bound])
    }

    pub fn matrix(&self) -> &Matrix {
        &self.h_mat
    }

    pub fn offsets(&self) -> &[f64] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.h_mat.cols()
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        contains_rows(&self.h_mat, &self.h, x)
    }
}

fn contains_rows(h_mat: &Matrix, h: &[f64], x: &[f64]) -> Result<bool> {
    if x.len() != h_mat.cols() {
        return Err(Error::DimensionMismatch("contains: point dimension"));
    }
    Ok((0..h.len()).all(|i| dot(h_mat.row(i), x) <= h[i] + CONTAINS_TOL))
}

/// `X ⊖ A` represented by the base rows and per-row offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct TightenedSet {
    base: Halfspaces,
    offsets: Vec<f64>,
    tightened: Vec<f64>,
    empty: bool,
}

impl TightenedSet {
    pub fn base(&self) -> &Halfspaces {
        &self.base
    }

    /// The subtracted offsets η.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// `h' = h − η`.
    pub fn tightened_offsets(&self) -> &[f64] {
        &self.tightened
    }

    /// Conservative emptiness: some row has `h'_i ≤ 0`, so the origin is not
    /// an interior point.
    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn matrix(&self) -> &Matrix {
        self.base.matrix()
    }

    pub fn len(&self) -> usize {
        self.tightened.len()
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        contains_rows(self.base.matrix(), &self.tightened, x)
    }

    /// The tightened rows as a plain polytope (offsets may be ≤ 0).
    pub fn to_halfspaces(&self) -> Halfspaces {
        Halfspaces {
            h_mat: self.base.h_mat.clone(),
            h: self.tightened.clone(),
        }
    }

    /// A tightening by zero.
    pub fn untightened(base: Halfspaces) -> Self {
        let n = base.len();
        tighten(&base, &alloc::vec![0.0; n]).unwrap_or_else(|_| unreachable!())
    }
}

/// Row-wise tightening `h'_i = h_i − η_i`.
pub fn tighten(set: &Halfspaces, etas: &[f64]) -> Result<TightenedSet> {
    if etas.len() != set.len() {
        return Err(Error::DimensionMismatch("tighten: one eta per row"));
    }
    if etas.iter().any(|e| e.is_nan()) {
        return Err(Error::NonFinite("tighten etas"));
    }
    let tightened: Vec<f64> = set.h.iter().zip(etas).map(|(h, e)| h - e).collect();
    let empty = tightened.iter().any(|&x| x <= 0.0);
    Ok(TightenedSet {
        base: set.clone(),
        offsets: etas.to_vec(),
        tightened,
        empty,
    })
}

/// Tightening by a symmetric box `{|e_k| ≤ η_k}`: the offset of row `i` is
/// `Σ_k |H_ik| η_k`. Infinite radii only matter on rows that touch them.
pub fn tighten_with_box(set: &Halfspaces, prs: &DrPrsResult) -> Result<TightenedSet> {
    if prs.kind != PrsKind::Box || prs.etas.len() != set.dim() {
        return Err(Error::DimensionMismatch("tighten_with_box: need a box over the state"));
    }
    let offsets: Vec<f64> = (0..set.len())
        .map(|i| {
            set.h_mat
                .row(i)
                .iter()
                .zip(&prs.etas)
                .filter(|(h, _)| **h != 0.0)
                .map(|(h, eta)| h.abs() * eta)
                .sum()
        })
        .collect();
    tighten(set, &offsets)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pontryagin_round_trip_by_sampling() {
        // (X ⊖ A) ⊕ A ⊆ X for a box A and a general X
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Halfspaces::constraint_set(
            Matrix::from_rows(&[[1.0, 0.5], [-1.0, 0.2], [0.3, -1.0], [0.0, 1.0]]),
            alloc::vec![4.0, 3.0, 5.0, 2.5],
        )
        .unwrap();
        let prs = DrPrsResult {
            etas: alloc::vec![0.8, 0.6],
            epsilons: alloc::vec![0.1, 0.1],
            groups: alloc::vec![0, 1],
            theta: 0.0,
            p: 0.8,
            kind: PrsKind::Box,
        };
        let z = tighten_with_box(&x, &prs).unwrap();
        let mut checked = 0;
        while checked < 10_000 {
            let p: Vec<f64> = (0..2).map(|_| rng.random_range(-6.0..6.0)).collect();
            if !z.contains(&p).unwrap() {
                continue;
            }
            let a: Vec<f64> = prs.etas.iter().map(|&r| rng.random_range(-r..=r)).collect();
            let sum: Vec<f64> = p.iter().zip(&a).map(|(p, a)| p + a).collect();
            assert!(x.contains(&sum).unwrap(), "z = {p:?}, a = {a:?}");
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn tightening_is_monotone(
            base in proptest::collection::vec(0.5..5.0f64, 4),
            eta in proptest::collection::vec(0.0..2.0f64, 4),
            extra in proptest::collection::vec(0.0..1.0f64, 4),
            point in proptest::collection::vec(-5.0..5.0f64, 2),
        ) {
            let x = Halfspaces::constraint_set(
                Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                base,
            ).unwrap();
            let bigger: Vec<f64> = eta.iter().zip(&extra).map(|(a, b)| a + b).collect();
            let z = tighten(&x, &eta).unwrap();
            let z2 = tighten(&x, &bigger).unwrap();
            // Z' ⊆ Z
            if z2.contains(&point).unwrap() {
                prop_assert!(z.contains(&point).unwrap());
            }
            prop_assert!(z2.is_empty() || !z.is_empty());
        }
    }
}
