//! Backward integration of the transformed matrix Riccati equation and
//! extraction of the singular-terminal limit by a penalization ladder.
//!
//! The transformed equation, in forward-time form, reads
//! `dQ/dt = Q R Q - Q S(t) - S(t) Q - Gamma(t)` with
//! `R = [-I; gamma] Lambda^{-1} [-I, gamma]`,
//! `S(t) = [[0,0],[0,-rho(t)]]` and
//! `Gamma(t) = [[Sigma(t),0],[0,gamma^{-1}rho(t)+rho(t)gamma^{-1}]]`,
//! with terminal value `Q(T) = [[nI, I],[I, gamma^{-1}]]`. The limit
//! `n -> infinity` encodes the hard liquidation constraint; its norm
//! diverges at `T`, so the limit solution is only reported on `[0, t_max]`
//! with `t_max < T`.

use nalgebra::DMatrix;

use crate::error::SolveError;
use crate::model::{BlockSym, ModelParams};
use crate::ode::{solve_path, OdeOptions};

/// Output-grid specification: `base_steps` intervals on `[t_start, t_end]`
/// with spacings shrinking geometrically toward `t_end` by the factor
/// `refinement` (1 = uniform).
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub base_steps: usize,
    pub refinement: f64,
}

impl GridSpec {
    pub fn new(t_start: f64, t_end: f64, base_steps: usize, refinement: f64) -> Self {
        assert!(t_start < t_end, "grid must have t_start < t_end");
        assert!(base_steps >= 1);
        assert!(refinement >= 1.0);
        GridSpec {
            t_start,
            t_end,
            base_steps,
            refinement,
        }
    }

    pub fn uniform(t_start: f64, t_end: f64, base_steps: usize) -> Self {
        Self::new(t_start, t_end, base_steps, 1.0)
    }

    /// Strictly increasing grid, first point `t_start`, last `t_end`,
    /// with any of `extra` points inside the range merged in.
    pub fn points(&self, extra: &[f64]) -> Vec<f64> {
        let n = self.base_steps;
        let mut weights = Vec::with_capacity(n);
        if n == 1 || self.refinement == 1.0 {
            weights.resize(n, 1.0);
        } else {
            // spacing ratio chosen so first/last spacing = refinement
            let q = self.refinement.powf(-1.0 / (n as f64 - 1.0));
            let mut w = 1.0;
            for _ in 0..n {
                weights.push(w);
                w *= q;
            }
        }
        let total: f64 = weights.iter().sum();
        let span = self.t_end - self.t_start;
        let mut pts = Vec::with_capacity(n + 1 + extra.len());
        let mut acc = 0.0;
        pts.push(self.t_start);
        for w in &weights[..n - 1] {
            acc += w;
            pts.push(self.t_start + span * acc / total);
        }
        pts.push(self.t_end);
        for &e in extra {
            if e > self.t_start && e < self.t_end {
                pts.push(e);
            }
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * (1.0 + b.abs()));
        pts
    }
}

/// Penalization level attached to a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyLevel {
    Finite(f64),
    Limit,
}

impl PenaltyLevel {
    pub fn is_limit(&self) -> bool {
        matches!(self, PenaltyLevel::Limit)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    pub max_symmetry_defect: f64,
    pub min_eigenvalue: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// For ladder solves: (n, sup over grid of |Q^n - Q^prev|).
    pub ladder_history: Vec<(f64, f64)>,
    /// Smallest eigenvalue of Q^{n_{k+1}} - Q^{n_k} seen at sampled points.
    pub ladder_monotonicity_margin: f64,
    /// Set when the ladder was exhausted before reaching the tolerance.
    pub ladder_converged: bool,
}

/// A solved Riccati path on a time grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub params: ModelParams,
    pub level: PenaltyLevel,
    pub grid: Vec<f64>,
    pub values: Vec<BlockSym>,
    pub diagnostics: SolveDiagnostics,
}

/// The quadratic coefficient `R = [-I; gamma] Lambda^{-1} [-I, gamma]`.
pub fn quadratic_coefficient(params: &ModelParams) -> DMatrix<f64> {
    let d = params.d;
    let g = params.gamma_matrix();
    let mut sel = DMatrix::zeros(2 * d, d);
    sel.view_mut((0, 0), (d, d))
        .copy_from(&(-DMatrix::<f64>::identity(d, d)));
    sel.view_mut((d, 0), (d, d)).copy_from(&g);
    &sel * params.lambda_inv() * sel.transpose()
}

fn linear_coefficient(params: &ModelParams, t: f64) -> DMatrix<f64> {
    let d = params.d;
    let mut s = DMatrix::zeros(2 * d, 2 * d);
    let rho = params.rho_matrix(t);
    s.view_mut((d, d), (d, d)).copy_from(&(-&rho));
    s
}

fn source_coefficient(params: &ModelParams, t: f64) -> DMatrix<f64> {
    let d = params.d;
    let mut g = DMatrix::zeros(2 * d, 2 * d);
    g.view_mut((0, 0), (d, d)).copy_from(&params.sigma_matrix(t));
    let rho = params.rho_matrix(t);
    let ginv = params.gamma_inv_matrix();
    let lower = &ginv * &rho + &rho * &ginv;
    g.view_mut((d, d), (d, d)).copy_from(&lower);
    g
}

/// Forward-time drift `dQ/dt` of the transformed Riccati equation.
pub fn rhs(t: f64, q: &BlockSym, params: &ModelParams) -> BlockSym {
    let qm = q.assemble();
    let out = rhs_assembled(t, &qm, params, &quadratic_coefficient(params));
    BlockSym::from_assembled(&out)
}

fn rhs_assembled(
    t: f64,
    q: &DMatrix<f64>,
    params: &ModelParams,
    r: &DMatrix<f64>,
) -> DMatrix<f64> {
    let s = linear_coefficient(params, t);
    let g = source_coefficient(params, t);
    let out = q * r * q - q * &s - &s * q - g;
    (&out + out.transpose()) * 0.5
}

/// Terminal value `[[nI, I],[I, gamma^{-1}]]`; PSD iff `n >= gamma_max`.
pub fn terminal_condition(n: f64, params: &ModelParams) -> Result<BlockSym, SolveError> {
    let gmax = params.gamma_max();
    if n < gmax {
        return Err(SolveError::PenalizationTooSmall {
            n,
            bound: gmax,
            context: "terminal condition requires n >= gamma_max for PSD".to_string(),
        });
    }
    let d = params.d;
    Ok(BlockSym {
        a: DMatrix::identity(d, d) * n,
        b: DMatrix::identity(d, d),
        c: params.gamma_inv_matrix(),
    })
}

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

/// Backward integration of the penalized equation from `t = T` down the
/// grid. Every stored value is re-symmetrized; symmetry and PSD
/// invariants are verified over the whole grid.
pub fn solve_penalized(
    params: &ModelParams,
    n: f64,
    grid: &GridSpec,
) -> Result<RiccatiSolution, SolveError> {
    solve_penalized_with(params, n, grid, &OdeOptions::default())
}

pub fn solve_penalized_with(
    params: &ModelParams,
    n: f64,
    grid: &GridSpec,
    opts: &OdeOptions,
) -> Result<RiccatiSolution, SolveError> {
    params.ensure_valid()?;
    assert!(
        (grid.t_end - params.horizon).abs() < 1e-12,
        "penalized solve must start from the terminal time"
    );
    let terminal = terminal_condition(n, params)?;
    let breakpoints = params.breakpoints();
    let mut t_points = grid.points(&breakpoints);
    t_points.reverse(); // integrate backward from T

    let r = quadratic_coefficient(params);
    let (path, stats) = solve_path(
        |t, q| rhs_assembled(t, q, params, &r),
        &t_points,
        terminal.assemble(),
        opts,
    )?;

    let mut grid_fwd: Vec<f64> = t_points;
    grid_fwd.reverse();
    let mut values: Vec<BlockSym> = path.iter().rev().map(BlockSym::from_assembled).collect();
    // exact terminal value, not the round-tripped one
    *values.last_mut().unwrap() = terminal;

    let mut diag = SolveDiagnostics {
        accepted_steps: stats.accepted,
        rejected_steps: stats.rejected,
        min_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    for (t, v) in grid_fwd.iter().zip(&values) {
        let defect = v.symmetry_defect();
        diag.max_symmetry_defect = diag.max_symmetry_defect.max(defect);
        let min_eig = v.min_eigenvalue();
        diag.min_eigenvalue = diag.min_eigenvalue.min(min_eig);
        if min_eig < -PSD_TOL * (1.0 + v.norm()) {
            return Err(SolveError::PsdViolation {
                t: *t,
                min_eig,
            });
        }
        if defect > SYMMETRY_TOL * (1.0 + v.norm()) {
            return Err(SolveError::PsdViolation { t: *t, min_eig: defect });
        }
    }

    Ok(RiccatiSolution {
        params: params.clone(),
        level: PenaltyLevel::Finite(n),
        grid: grid_fwd,
        values,
        diagnostics: diag,
    })
}

/// Extract the singular-terminal limit by running the penalization ladder
/// until two consecutive rungs agree uniformly on `[0, t_max]`.
///
/// Returns the top converged rung restricted to `[0, t_max]`, flagged as
/// the limit. Diagnostics carry the convergence history and verify the
/// PSD monotonicity of the ladder at the grid points.
pub fn solve_limit(
    params: &ModelParams,
    t_max: f64,
    n_ladder: &[f64],
    tol: f64,
    grid: &GridSpec,
) -> Result<RiccatiSolution, SolveError> {
    params.ensure_valid()?;
    assert!(t_max < params.horizon, "t_max must be strictly below T");
    assert!(!n_ladder.is_empty());
    assert!(
        n_ladder.windows(2).all(|w| w[0] < w[1]),
        "ladder must be increasing"
    );

    let mut prev: Option<RiccatiSolution> = None;
    let mut history = Vec::new();
    let mut mono_margin = f64::INFINITY;
    let mut best: Option<RiccatiSolution> = None;
    let mut converged = false;

    for &n in n_ladder {
        let sol = solve_penalized(params, n, grid)?;
        if let Some(p) = &prev {
            let mut sup = 0.0_f64;
            for ((t, v), pv) in sol.grid.iter().zip(&sol.values).zip(&p.values) {
                if *t > t_max + 1e-12 {
                    continue;
                }
                sup = sup.max((v.assemble() - pv.assemble()).norm());
                // ladder monotonicity: Q^{n_{k+1}} >= Q^{n_k} in PSD order
                let diff = v.assemble() - pv.assemble();
                let margin = crate::model::min_eigenvalue(&diff) + 1e-7 * (1.0 + v.norm());
                mono_margin = mono_margin.min(margin);
                if margin < 0.0 {
                    return Err(SolveError::MonotonicityViolation {
                        t: *t,
                        min_eig: crate::model::min_eigenvalue(&diff),
                    });
                }
            }
            history.push((n, sup));
            if sup < tol {
                best = Some(sol.clone());
                converged = true;
            }
        }
        prev = Some(sol);
        if converged {
            break;
        }
    }

    let source = best.unwrap_or_else(|| prev.unwrap());
    let keep: Vec<usize> = source
        .grid
        .iter()
        .enumerate()
        .filter(|(_, t)| **t <= t_max + 1e-12)
        .map(|(i, _)| i)
        .collect();
    let mut diag = source.diagnostics.clone();
    diag.ladder_history = history;
    diag.ladder_monotonicity_margin = mono_margin;
    diag.ladder_converged = converged;

    let mut grid_out: Vec<f64> = keep.iter().map(|&i| source.grid[i]).collect();
    let mut values_out: Vec<BlockSym> = keep.iter().map(|&i| source.values[i].clone()).collect();
    // make sure the restricted solution covers t_max itself
    if *grid_out.last().unwrap() < t_max - 1e-12 {
        values_out.push(source.eval(t_max)?);
        grid_out.push(t_max);
    }

    Ok(RiccatiSolution {
        params: source.params.clone(),
        level: PenaltyLevel::Limit,
        grid: grid_out,
        values: values_out,
        diagnostics: diag,
    })
}

impl RiccatiSolution {
    pub fn t_start(&self) -> f64 {
        self.grid[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    fn locate(&self, t: f64) -> Result<usize, SolveError> {
        let (start, end) = (self.t_start(), self.t_end());
        if t < start - 1e-12 || t > end + 1e-12 {
            return Err(SolveError::OutOfRange { t, start, end });
        }
        // index of the interval [grid[i], grid[i+1]] containing t
        let i = match self
            .grid
            .binary_search_by(|g| g.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        Ok(i.min(self.grid.len() - 2))
    }

    /// Dense output by cubic Hermite interpolation between stored points,
    /// re-symmetrized; exact at grid points.
    pub fn eval(&self, t: f64) -> Result<BlockSym, SolveError> {
        let i = self.locate(t)?;
        // exact at nodes
        for j in [i, i + 1] {
            if (self.grid[j] - t).abs() < 1e-13 * (1.0 + t.abs()) {
                return Ok(self.values[j].clone());
            }
        }
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let h = t1 - t0;
        let y0 = self.values[i].assemble();
        let y1 = self.values[i + 1].assemble();
        // exact endpoint slopes from the equation itself; the right slope
        // is taken just inside the interval so piecewise-constant
        // coefficients use their left limit at breakpoint nodes
        let m0 = rhs(t0, &self.values[i], &self.params).assemble();
        let m1 = rhs(t1 - 1e-9 * h, &self.values[i + 1], &self.params).assemble();
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let out = y0 * h00 + m0 * (h10 * h) + y1 * h01 + m1 * (h11 * h);
        Ok(BlockSym::from_assembled(&out))
    }

    /// D, E, F blocks at an arbitrary time via dense output.
    pub fn def_at(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), SolveError> {
        let q = self.eval(t)?;
        Ok(crate::model::def_blocks(&q, &self.params.gamma))
    }

    /// Columnar export: one row per grid time, `t` then the upper triangle
    /// of the assembled matrix row-major, 12 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.params.d;
        let mut header = vec!["t".to_string()];
        for i in 0..2 * d {
            for j in i..2 * d {
                let name = if i < d && j < d {
                    format!("A_{}{}", i + 1, j + 1)
                } else if i < d {
                    format!("B_{}{}", i + 1, j - d + 1)
                } else {
                    format!("C_{}{}", i - d + 1, j - d + 1)
                };
                header.push(name);
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for (t, v) in self.grid.iter().zip(&self.values) {
            let m = v.assemble();
            let mut row = vec![format_sig(*t)];
            for i in 0..2 * d {
                for j in i..2 * d {
                    row.push(format_sig(m[(i, j)]));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Fixed 12-significant-digit formatting for reproducible file output.
pub fn format_sig(x: f64) -> String {
    format!("{x:.11e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Schedule;
    use nalgebra::DVector;

    pub fn frictionless_scalar() -> ModelParams {
        ModelParams {
            d: 1,
            lambda: DMatrix::from_element(1, 1, 1.0),
            gamma: DVector::from_element(1, 1.0),
            rho: Schedule::constant(DVector::zeros(1)),
            sigma: Schedule::constant(DMatrix::zeros(1, 1)),
            horizon: 1.0,
        }
    }

    #[test]
    fn grid_points_shape() {
        let g = GridSpec::new(0.0, 1.0, 10, 8.0);
        let pts = g.points(&[]);
        assert_eq!(pts.len(), 11);
        assert_eq!(pts[0], 0.0);
        assert_eq!(*pts.last().unwrap(), 1.0);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        // clustering: last spacing smaller than first
        let first = pts[1] - pts[0];
        let last = pts[10] - pts[9];
        assert!(first / last > 6.0 && first / last < 10.0);
    }

    #[test]
    fn grid_merges_breakpoints() {
        let g = GridSpec::uniform(0.0, 1.0, 4);
        let pts = g.points(&[0.3]);
        assert!(pts.iter().any(|&t| (t - 0.3).abs() < 1e-15));
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rhs_zero_everywhere_vanishes() {
        let p = frictionless_scalar();
        let q = BlockSym::zeros(1);
        let out = rhs(0.3, &q, &p);
        assert!(out.norm() < 1e-15);
    }

    #[test]
    fn rhs_identity_scalar() {
        // lambda=gamma=1, rho=sigma=0, Q=I: dQ/dt = R = [[1,-1],[-1,1]].
        let p = frictionless_scalar();
        let q = BlockSym {
            a: DMatrix::identity(1, 1),
            b: DMatrix::zeros(1, 1),
            c: DMatrix::identity(1, 1),
        };
        let out = rhs(0.0, &q, &p).assemble();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((out - expect).norm() < 1e-14);
    }

    #[test]
    fn rhs_preserves_symmetry() {
        let mut p = frictionless_scalar();
        p.d = 2;
        p.lambda = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        p.gamma = DVector::from_vec(vec![1.0, 0.5]);
        p.rho = Schedule::constant(DVector::from_vec(vec![0.5, 1.5]));
        p.sigma = Schedule::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]));
        let q = BlockSym {
            a: DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
            b: DMatrix::from_row_slice(2, 2, &[0.4, -0.1, 0.2, 0.6]),
            c: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.2]),
        };
        let out = rhs(0.2, &q, &p).assemble();
        assert!((&out - out.transpose()).norm() < 1e-13);
    }

    #[test]
    fn terminal_condition_values() {
        let p = frictionless_scalar();
        let tc = terminal_condition(3.0, &p).unwrap();
        assert_eq!(tc.a[(0, 0)], 3.0);
        assert_eq!(tc.b[(0, 0)], 1.0);
        assert_eq!(tc.c[(0, 0)], 1.0);
    }

    #[test]
    fn terminal_condition_d2() {
        let mut p = frictionless_scalar();
        p.d = 2;
        p.lambda = DMatrix::identity(2, 2);
        p.gamma = DVector::from_vec(vec![1.0, 2.0]);
        p.rho = Schedule::constant(DVector::zeros(2));
        p.sigma = Schedule::constant(DMatrix::zeros(2, 2));
        let tc = terminal_condition(5.0, &p).unwrap();
        assert_eq!(tc.a, DMatrix::identity(2, 2) * 5.0);
        assert_eq!(tc.b, DMatrix::identity(2, 2));
        assert_eq!(tc.c, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])));
    }

    #[test]
    fn terminal_condition_psd_at_boundary() {
        let mut p = frictionless_scalar();
        p.gamma = DVector::from_element(1, 2.0);
        let tc = terminal_condition(2.0, &p).unwrap();
        assert!(tc.min_eigenvalue() >= -1e-12);
        assert!(terminal_condition(1.9, &p).is_err());
    }

    #[test]
    fn solve_matches_scalar_closed_form() {
        // sigma=rho=0 forces E=0, B=1, C=1/gamma and D solves
        // dD/dt = D^2/lambda, D(T) = n - gamma.
        let p = frictionless_scalar();
        let n = 3.0;
        let sol = solve_penalized(&p, n, &GridSpec::uniform(0.0, 1.0, 200)).unwrap();
        for (t, v) in sol.grid.iter().zip(&sol.values) {
            let d_exact = 1.0 / ((1.0 - t) + 1.0 / (n - 1.0));
            let (dd, e, _) = crate::model::def_blocks(v, &p.gamma);
            assert!((dd[(0, 0)] - d_exact).abs() < 1e-8, "t={t}");
            assert!(e[(0, 0)].abs() < 1e-8);
            assert!((v.b[(0, 0)] - 1.0).abs() < 1e-8);
            assert!((v.c[(0, 0)] - 1.0).abs() < 1e-8);
        }
        // t=0.5: A=2, B=1, C=1
        let mid = sol.eval(0.5).unwrap();
        assert!((mid.a[(0, 0)] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn terminal_value_stored_exactly() {
        let p = frictionless_scalar();
        let sol = solve_penalized(&p, 3.0, &GridSpec::uniform(0.0, 1.0, 50)).unwrap();
        let last = sol.values.last().unwrap();
        let tc = terminal_condition(3.0, &p).unwrap();
        assert_eq!(last.assemble(), tc.assemble());
        assert_eq!(sol.eval(1.0).unwrap().assemble(), tc.assemble());
    }

    #[test]
    fn eval_midpoint_matches_closed_form() {
        let p = frictionless_scalar();
        let n = 3.0;
        let sol = solve_penalized(&p, n, &GridSpec::uniform(0.0, 1.0, 100)).unwrap();
        for i in 0..sol.grid.len() - 1 {
            let t = 0.5 * (sol.grid[i] + sol.grid[i + 1]);
            let q = sol.eval(t).unwrap();
            let d_exact = 1.0 / ((1.0 - t) + 0.5);
            assert!((q.a[(0, 0)] - 1.0 - d_exact).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn eval_out_of_range_errors() {
        let p = frictionless_scalar();
        let sol = solve_penalized(&p, 3.0, &GridSpec::uniform(0.0, 1.0, 10)).unwrap();
        assert!(sol.eval(-0.1).is_err());
        assert!(sol.eval(1.1).is_err());
    }

    #[test]
    fn limit_matches_scalar_closed_form() {
        // n -> inf: D(t) = 1/(T-t); at t=0.5, D=2 so A=3.
        let p = frictionless_scalar();
        let ladder: Vec<f64> = (3..=11).map(|k| 2f64.powi(k)).collect();
        // consecutive-doubling rung differences shrink like 1/n, so the
        // ladder to 2048 reaches roughly 5e-3 sup distance at t <= 0.5
        let sol = solve_limit(&p, 0.5, &ladder, 5e-3, &GridSpec::new(0.0, 1.0, 400, 8.0)).unwrap();
        assert!(sol.level.is_limit());
        assert!(sol.diagnostics.ladder_converged);
        let q = sol.eval(0.5).unwrap();
        assert!((q.a[(0, 0)] - 3.0).abs() < 5e-3, "A(0.5) = {}", q.a[(0, 0)]);
    }

    #[test]
    fn limit_vacuous_tolerance_returns_top_rung() {
        let p = frictionless_scalar();
        let sol = solve_limit(&p, 0.5, &[8.0, 16.0], f64::INFINITY, &GridSpec::uniform(0.0, 1.0, 100))
            .unwrap();
        assert_eq!(sol.diagnostics.ladder_history.len(), 1);
        // tolerance met at the first comparison, so the n=16 rung is kept
        let q0 = sol.eval(0.0).unwrap();
        let d_exact = 1.0 / (1.0 + 1.0 / 15.0);
        assert!((q0.a[(0, 0)] - 1.0 - d_exact).abs() < 1e-7);
    }

    #[test]
    fn blowup_norm_at_terminal() {
        // |Q^n(T)|_{2,2} >= n exactly.
        let p = frictionless_scalar();
        for n in [8.0, 64.0, 512.0] {
            let tc = terminal_condition(n, &p).unwrap();
            assert!(crate::model::max_eigenvalue(&tc.assemble()) >= n);
        }
    }

    #[test]
    fn csv_header_shape() {
        let p = frictionless_scalar();
        let sol = solve_penalized(&p, 3.0, &GridSpec::uniform(0.0, 1.0, 4)).unwrap();
        let csv = sol.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,A_11,B_11,C_11");
        assert_eq!(lines.count(), 5);
    }
}
