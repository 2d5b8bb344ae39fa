//! General matrix Riccati comparison principle as a solver-plus-checker
//! harness: PSD-ordered terminal values and coefficients imply PSD-ordered
//! solutions.
//!
//! The equation family is `dK/dt = K H(t) K - G(t)^T K - K G(t) - I(t)`,
//! `K(T) = S`, integrated backward. With `S_1 <= S_2`, `0 <= H_2 <= H_1`
//! and `I_1 <= I_2` (all in PSD order, shared `G`), the solutions satisfy
//! `K_1(t) <= K_2(t)` on `[0, T]`.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::SolveError;
use crate::model::{min_eigenvalue, Schedule};
use crate::ode::{solve_path, OdeOptions};
use crate::riccati::GridSpec;

/// One instance of the general Riccati family.
#[derive(Debug, Clone)]
pub struct GeneralRiccatiInstance {
    pub g: Schedule<DMatrix<f64>>,
    /// Quadratic coefficient, PSD.
    pub h: Schedule<DMatrix<f64>>,
    /// Source term, symmetric.
    pub i_src: Schedule<DMatrix<f64>>,
    /// Terminal value, symmetric.
    pub s: DMatrix<f64>,
    pub horizon: f64,
}

impl GeneralRiccatiInstance {
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .g
            .breakpoints()
            .chain(self.h.breakpoints())
            .chain(self.i_src.breakpoints())
            .collect();
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
        b
    }
}

/// Backward integration; returns (grid, K path) in forward time order.
pub fn solve_general(
    inst: &GeneralRiccatiInstance,
    grid: &GridSpec,
) -> Result<(Vec<f64>, Vec<DMatrix<f64>>), SolveError> {
    assert!((grid.t_end - inst.horizon).abs() < 1e-12);
    let mut t_points = grid.points(&inst.breakpoints());
    t_points.reverse();
    let s0 = (&inst.s + inst.s.transpose()) * 0.5;
    let (path, _) = solve_path(
        |t, k| {
            let g = inst.g.at(t);
            let h = inst.h.at(t);
            let i = inst.i_src.at(t);
            let out = k * h * k - g.transpose() * k - k * g - i;
            (&out + out.transpose()) * 0.5
        },
        &t_points,
        s0,
        &OdeOptions::default(),
    )?;
    let mut grid_fwd = t_points;
    grid_fwd.reverse();
    Ok((grid_fwd, path.into_iter().rev().collect()))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub enum ComparisonOutcome {
    /// Hypotheses verified and conclusion holds.
    Pass,
    /// Hypotheses fail: the theorem does not apply (not a failure).
    Inapplicable { reason: String },
    /// Hypotheses hold but the conclusion margin dips below tolerance.
    ConclusionViolated { t: f64, margin: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub outcome: ComparisonOutcome,
    /// min over grid of the smallest eigenvalue of K2 - K1.
    pub worst_margin: f64,
    pub worst_t: f64,
}

/// Verify the hypotheses `S_1 <= S_2`, `0 <= H_2 <= H_1`, `I_1 <= I_2`,
/// solve both instances and check `K_1(t) <= K_2(t)` over the grid.
pub fn check_comparison(
    inst1: &GeneralRiccatiInstance,
    inst2: &GeneralRiccatiInstance,
    grid: &GridSpec,
    tol: f64,
) -> Result<ComparisonReport, SolveError> {
    assert!((inst1.horizon - inst2.horizon).abs() < 1e-12, "instances must share T");

    let hyp_tol = 1e-12;
    let mut check_points: Vec<f64> = grid.points(&[]);
    check_points.extend(inst1.breakpoints());
    check_points.extend(inst2.breakpoints());

    if min_eigenvalue(&(&inst2.s - &inst1.s)) < -hyp_tol {
        return Ok(inapplicable("terminal values not ordered S1 <= S2"));
    }
    for &t in &check_points {
        let h1 = inst1.h.at(t);
        let h2 = inst2.h.at(t);
        if min_eigenvalue(h2) < -hyp_tol {
            return Ok(inapplicable("H2 not PSD"));
        }
        if min_eigenvalue(&(h1 - h2)) < -hyp_tol {
            return Ok(inapplicable("quadratic coefficients not ordered H2 <= H1"));
        }
        if min_eigenvalue(&(inst2.i_src.at(t) - inst1.i_src.at(t))) < -hyp_tol {
            return Ok(inapplicable("source terms not ordered I1 <= I2"));
        }
        let g_diff = inst1.g.at(t) - inst2.g.at(t);
        if g_diff.norm() > hyp_tol {
            return Ok(inapplicable("instances do not share G"));
        }
    }

    let (grid1, k1) = solve_general(inst1, grid)?;
    let (_, k2) = solve_general(inst2, grid)?;
    let mut worst_margin = f64::INFINITY;
    let mut worst_t = grid1[0];
    for ((t, a), b) in grid1.iter().zip(&k1).zip(&k2) {
        let m = min_eigenvalue(&(b - a));
        if m < worst_margin {
            worst_margin = m;
            worst_t = *t;
        }
    }
    let outcome = if worst_margin >= -tol {
        ComparisonOutcome::Pass
    } else {
        ComparisonOutcome::ConclusionViolated {
            t: worst_t,
            margin: worst_margin,
        }
    };
    Ok(ComparisonReport {
        outcome,
        worst_margin,
        worst_t,
    })
}

fn inapplicable(reason: &str) -> ComparisonReport {
    ComparisonReport {
        outcome: ComparisonOutcome::Inapplicable {
            reason: reason.to_string(),
        },
        worst_margin: f64::NAN,
        worst_t: f64::NAN,
    }
}

/// Deterministic generator of hypothesis-satisfying instance pairs:
/// shared G, `H_1 = H_2 + M^T M`, `I_2 = I_1 + M^T M`, `S_2 = S_1 + M^T M`.
pub fn random_ordered_pair(
    seed: u64,
    d: usize,
    horizon: f64,
) -> (GeneralRiccatiInstance, GeneralRiccatiInstance) {
    assert!(d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |scale: f64| {
        DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0) * scale)
    };
    let psd = |m: DMatrix<f64>| m.transpose() * m;

    // PSD terminal values and sources keep both solutions PSD and
    // bounded backward over the horizon (no finite-time escape).
    let g = mat(0.5);
    let h2 = psd(mat(0.7));
    let h1 = &h2 + psd(mat(0.5));
    let i1 = psd(mat(0.5));
    let i2 = &i1 + psd(mat(0.5));
    let s1 = psd(mat(0.5));
    let s2 = &s1 + psd(mat(0.5));

    let make = |h: DMatrix<f64>, i: DMatrix<f64>, s: DMatrix<f64>| GeneralRiccatiInstance {
        g: Schedule::constant(g.clone()),
        h: Schedule::constant(h),
        i_src: Schedule::constant(i),
        s,
        horizon,
    };
    (make(h1, i1, s1), make(h2, i2, s2))
}
