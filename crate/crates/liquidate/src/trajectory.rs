//! Closed-loop synthesis: feedback control, fundamental matrix, state
//! simulation, cost evaluation, and the liquidation-decay checks.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::SolveError;
use crate::model::{def_blocks, BlockSym, ModelParams};
use crate::ode::{solve_path, OdeOptions};
use crate::riccati::{GridSpec, PenaltyLevel, RiccatiSolution};

/// Sampled closed-loop paths of position, impact state, trading rate and
/// accumulated running cost.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub x_path: Vec<DVector<f64>>,
    pub y_path: Vec<DVector<f64>>,
    pub xi_path: Vec<DVector<f64>>,
    /// Accumulated integral of `xi' L xi + 2 Y' xi + X' S X` from the
    /// start of the grid, normalized so that adding the terminal penalty
    /// reproduces the quadratic value `z' P z`.
    pub running_cost: Vec<f64>,
}

/// Optimal trading rate `xi = Lambda^{-1}(D x - E y)`, the blockwise form
/// of `-Lambda^{-1} [-I, gamma] Q [x; y]`.
pub fn feedback(
    q_t: &BlockSym,
    x: &DVector<f64>,
    y: &DVector<f64>,
    params: &ModelParams,
) -> DVector<f64> {
    let (d_blk, e_blk, _) = def_blocks(q_t, &params.gamma);
    params.lambda_inv() * (d_blk * x - e_blk * y)
}

/// Fundamental matrix of the closed-loop position dynamics:
/// `dPhi/ds = -Lambda^{-1}(D + E gamma) Phi`, `Phi(t0, t0) = I`, together
/// with its inverse path from the transposed-flow equation.
pub fn fundamental(
    params: &ModelParams,
    solution: &RiccatiSolution,
    t0: f64,
    grid: &GridSpec,
) -> Result<(Vec<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>), SolveError> {
    assert!((grid.t_start - t0).abs() < 1e-12);
    let d = params.d;
    let lam_inv = params.lambda_inv();
    let gamma = params.gamma_matrix();
    let t_points = grid.points(&params.breakpoints());

    let gain = |t: f64| -> Result<DMatrix<f64>, SolveError> {
        let (dd, ee, _) = solution.def_at(t)?;
        Ok(&lam_inv * (dd + ee * &gamma))
    };

    let (phi_path, _) = solve_path(
        |t, phi| -gain(t).expect("solution covers the grid") * phi,
        &t_points,
        DMatrix::identity(d, d),
        &OdeOptions::default(),
    )?;
    let (inv_path, _) = solve_path(
        |t, psi| psi * gain(t).expect("solution covers the grid"),
        &t_points,
        DMatrix::identity(d, d),
        &OdeOptions::default(),
    )?;
    Ok((t_points, phi_path, inv_path))
}

/// Forward integration of the state under an arbitrary trading rate
/// `xi(s, x, y)`, with the running cost accumulated as an extra component.
pub fn simulate_with_rate<F>(
    params: &ModelParams,
    mut rate: F,
    t0: f64,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    grid: &GridSpec,
) -> Result<Trajectory, SolveError>
where
    F: FnMut(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    assert!((grid.t_start - t0).abs() < 1e-12);
    let d = params.d;
    let gamma = params.gamma_matrix();
    let t_points = grid.points(&params.breakpoints());

    // state layout: [x; y; cost]
    let mut state0 = DMatrix::zeros(2 * d + 1, 1);
    state0.view_mut((0, 0), (d, 1)).copy_from(x0);
    state0.view_mut((d, 0), (d, 1)).copy_from(y0);

    let mut drift = |t: f64, z: &DMatrix<f64>| -> DMatrix<f64> {
        let x = DVector::from_column_slice(&z.as_slice()[0..d]);
        let y = DVector::from_column_slice(&z.as_slice()[d..2 * d]);
        let xi = rate(t, &x, &y);
        let rho = params.rho_matrix(t);
        let sigma = params.sigma_matrix(t);
        // normalized so the total matches the quadratic form z' P z
        let cost_rate =
            xi.dot(&(&params.lambda * &xi)) + 2.0 * y.dot(&xi) + x.dot(&(&sigma * &x));
        let mut out = DMatrix::zeros(2 * d + 1, 1);
        out.view_mut((0, 0), (d, 1)).copy_from(&(-&xi));
        out.view_mut((d, 0), (d, 1))
            .copy_from(&(-&rho * &y + &gamma * &xi));
        out[(2 * d, 0)] = cost_rate;
        out
    };

    let (path, _) = solve_path(&mut drift, &t_points, state0, &OdeOptions::default())?;
    drop(drift); // release the borrow of `rate`
    let mut traj = Trajectory {
        grid: t_points.clone(),
        x_path: Vec::with_capacity(path.len()),
        y_path: Vec::with_capacity(path.len()),
        xi_path: Vec::with_capacity(path.len()),
        running_cost: Vec::with_capacity(path.len()),
    };
    for (t, z) in t_points.iter().zip(&path) {
        let x = DVector::from_column_slice(&z.as_slice()[0..d]);
        let y = DVector::from_column_slice(&z.as_slice()[d..2 * d]);
        let xi = rate(*t, &x, &y);
        traj.x_path.push(x);
        traj.y_path.push(y);
        traj.xi_path.push(xi);
        traj.running_cost.push(z[(2 * d, 0)]);
    }
    Ok(traj)
}

/// Closed-loop simulation under the optimal feedback through `Q(t)`.
pub fn simulate(
    params: &ModelParams,
    solution: &RiccatiSolution,
    t0: f64,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    grid: &GridSpec,
) -> Result<Trajectory, SolveError> {
    assert!(
        grid.t_end <= solution.t_end() + 1e-12,
        "simulation grid must stay within the solution range"
    );
    simulate_with_rate(
        params,
        |t, x, y| {
            let q = solution.eval(t).expect("solution covers the grid");
            feedback(&q, x, y, params)
        },
        t0,
        x0,
        y0,
        grid,
    )
}

/// Total objective of a completed trajectory: accumulated running cost,
/// plus the terminal penalty `n |X(T)|^2 + 2 Y(T)' X(T)` when a
/// penalization level is supplied.
pub fn cost(traj: &Trajectory, terminal_penalty_n: Option<f64>) -> f64 {
    let run = *traj.running_cost.last().unwrap();
    match terminal_penalty_n {
        None => run,
        Some(n) => {
            let x = traj.x_path.last().unwrap();
            let y = traj.y_path.last().unwrap();
            run + n * x.dot(x) + 2.0 * y.dot(x)
        }
    }
}

/// Linear-quadratic value `V = [x' y'] P [x; y]`.
pub fn value(p_t: &BlockSym, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    p_t.quadratic_form(x, y)
}

#[derive(Debug, Clone, Serialize)]
pub struct LiquidationReport {
    /// Per ladder entry: (n, n |X(T)|^2, Y(T)' X(T)).
    pub entries: Vec<(f64, f64, f64)>,
    pub penalty_decreasing: bool,
    pub final_penalty: f64,
    pub final_cross_term: f64,
}

/// Simulate each ladder solution to its end and record the terminal
/// penalty residuals; both sequences must decay toward zero.
pub fn check_liquidation(
    params: &ModelParams,
    ladder: &[RiccatiSolution],
    t0: f64,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    steps: usize,
) -> Result<LiquidationReport, SolveError> {
    let mut entries = Vec::new();
    for sol in ladder {
        let n = match sol.level {
            PenaltyLevel::Finite(n) => n,
            PenaltyLevel::Limit => continue,
        };
        let grid = GridSpec::new(t0, sol.t_end(), steps, 8.0);
        let traj = simulate(params, sol, t0, x0, y0, &grid)?;
        let x_t = traj.x_path.last().unwrap();
        let y_t = traj.y_path.last().unwrap();
        entries.push((n, n * x_t.dot(x_t), y_t.dot(x_t)));
    }
    let penalty_decreasing = entries.windows(2).all(|w| w[1].1 < w[0].1 + 1e-15);
    let last = entries.last().copied().unwrap_or((0.0, 0.0, 0.0));
    Ok(LiquidationReport {
        entries,
        penalty_decreasing,
        final_penalty: last.1,
        final_cross_term: last.2.abs(),
    })
}

impl Trajectory {
    /// Columnar export: t, X_1..X_d, Y_1..Y_d, xi_1..xi_d, running_cost.
    pub fn to_csv(&self) -> String {
        let d = self.x_path[0].len();
        let mut header = vec!["t".to_string()];
        for i in 1..=d {
            header.push(format!("X_{i}"));
        }
        for i in 1..=d {
            header.push(format!("Y_{i}"));
        }
        for i in 1..=d {
            header.push(format!("xi_{i}"));
        }
        header.push("running_cost".to_string());
        let mut out = header.join(",");
        out.push('\n');
        for (k, t) in self.grid.iter().enumerate() {
            let mut row = vec![crate::riccati::format_sig(*t)];
            for v in self.x_path[k].iter() {
                row.push(crate::riccati::format_sig(*v));
            }
            for v in self.y_path[k].iter() {
                row.push(crate::riccati::format_sig(*v));
            }
            for v in self.xi_path[k].iter() {
                row.push(crate::riccati::format_sig(*v));
            }
            row.push(crate::riccati::format_sig(self.running_cost[k]));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Schedule;
    use crate::riccati::solve_penalized;

    fn frictionless_scalar() -> ModelParams {
        ModelParams {
            d: 1,
            lambda: DMatrix::from_element(1, 1, 1.0),
            gamma: DVector::from_element(1, 1.0),
            rho: Schedule::constant(DVector::zeros(1)),
            sigma: Schedule::constant(DMatrix::zeros(1, 1)),
            horizon: 1.0,
        }
    }

    fn fig1_params(k: f64) -> ModelParams {
        ModelParams {
            d: 2,
            lambda: DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0])),
            gamma: DVector::from_element(2, 1.0),
            rho: Schedule::constant(DVector::from_element(2, 1.0)),
            sigma: Schedule::constant(DMatrix::from_row_slice(2, 2, &[1.0, k, k, 1.0])),
            horizon: 1.0,
        }
    }

    #[test]
    fn feedback_zero_state() {
        let p = frictionless_scalar();
        let q = crate::riccati::terminal_condition(3.0, &p).unwrap();
        let xi = feedback(&q, &DVector::zeros(1), &DVector::zeros(1), &p);
        assert_eq!(xi[0], 0.0);
    }

    #[test]
    fn feedback_scalar_closed_form() {
        // sigma=rho=0, y=0: xi = x / ((T-t) + lambda/(n-gamma)).
        let p = frictionless_scalar();
        let n = 3.0;
        let sol = solve_penalized(&p, n, &GridSpec::uniform(0.0, 1.0, 200)).unwrap();
        for t in [0.0, 0.25, 0.5, 0.75] {
            let q = sol.eval(t).unwrap();
            let xi = feedback(&q, &DVector::from_element(1, 2.0), &DVector::zeros(1), &p);
            let expect = 2.0 / ((1.0 - t) + 1.0 / (n - 1.0));
            assert!((xi[0] - expect).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn fundamental_initial_condition_and_closed_form() {
        let p = frictionless_scalar();
        let n = 3.0;
        let sol = solve_penalized(&p, n, &GridSpec::uniform(0.0, 1.0, 400)).unwrap();
        let (grid, phi, phi_inv) =
            fundamental(&p, &sol, 0.0, &GridSpec::uniform(0.0, 1.0, 100)).unwrap();
        assert_eq!(phi[0], DMatrix::identity(1, 1));
        let c = 1.0 / (n - 1.0);
        for (k, s) in grid.iter().enumerate() {
            let expect = ((1.0 - s) + c) / (1.0 + c);
            assert!((phi[k][(0, 0)] - expect).abs() < 1e-6, "s={s}");
            assert!((phi[k][(0, 0)] * phi_inv[k][(0, 0)] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_initial_state_zero_trajectory() {
        let p = frictionless_scalar();
        let sol = solve_penalized(&p, 3.0, &GridSpec::uniform(0.0, 1.0, 100)).unwrap();
        let traj = simulate(
            &p,
            &sol,
            0.0,
            &DVector::zeros(1),
            &DVector::zeros(1),
            &GridSpec::uniform(0.0, 1.0, 50),
        )
        .unwrap();
        assert!(traj.x_path.iter().all(|x| x.norm() < 1e-12));
        assert!(cost(&traj, Some(3.0)).abs() < 1e-12);
    }

    #[test]
    fn twap_limit_scalar() {
        // n large: X(s) -> x0 (T - s)/T on [0, T - delta].
        let p = frictionless_scalar();
        let sol = solve_penalized(&p, 2048.0, &GridSpec::new(0.0, 1.0, 800, 16.0)).unwrap();
        let traj = simulate(
            &p,
            &sol,
            0.0,
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            &GridSpec::uniform(0.0, 0.95, 100),
        )
        .unwrap();
        for (s, x) in traj.grid.iter().zip(&traj.x_path) {
            assert!((x[0] - (1.0 - s)).abs() < 1e-3, "s={s}, x={}", x[0]);
        }
    }

    #[test]
    fn y_identity_along_trajectory() {
        // Y(s) + gamma X(s) - int e^{-int rho} gamma rho X du
        //   = e^{-int rho}(y0 + gamma x0).
        let p = fig1_params(0.0);
        let sol = solve_penalized(&p, 64.0, &GridSpec::new(0.0, 1.0, 400, 8.0)).unwrap();
        let x0 = DVector::from_element(2, 1.0);
        let y0 = DVector::from_vec(vec![0.2, -0.1]);
        let traj = simulate(&p, &sol, 0.0, &x0, &y0, &GridSpec::uniform(0.0, 1.0, 200)).unwrap();
        // rho = I here, so e^{-int rho} = e^{-(s - t0)} and the integral
        // can be accumulated with the trapezoid rule on the fine grid.
        let mut integral = DVector::zeros(2);
        let mut prev_t = traj.grid[0];
        let mut prev_f: DVector<f64> = traj.x_path[0].clone();
        for (k, s) in traj.grid.iter().enumerate() {
            if k > 0 {
                let f: DVector<f64> = traj.x_path[k].clone();
                let h = s - prev_t;
                // integrand carries e^{+u}; multiply by e^{-s} at the end
                let fu_prev = prev_f.map(|v| v) * prev_t.exp();
                let fu = f.map(|v| v) * s.exp();
                integral += (fu_prev + fu) * (0.5 * h);
                prev_t = *s;
                prev_f = f;
            }
            let lhs = &traj.y_path[k] + &traj.x_path[k] - &integral * (-s).exp();
            let rhs = (&y0 + &x0) * (-s).exp();
            assert!((lhs - rhs).norm() < 5e-4, "s={s}");
        }
    }

    #[test]
    fn cost_matches_value_function() {
        let p = fig1_params(0.0);
        let n = 256.0;
        let sol = solve_penalized(&p, n, &GridSpec::new(0.0, 1.0, 1500, 8.0)).unwrap();
        let x0 = DVector::from_element(2, 1.0);
        let y0 = DVector::zeros(2);
        let traj =
            simulate(&p, &sol, 0.0, &x0, &y0, &GridSpec::new(0.0, 1.0, 1500, 8.0)).unwrap();
        let c = cost(&traj, Some(n));
        let p0 = crate::model::p_from_q(&sol.eval(0.0).unwrap(), &p.gamma);
        let v = value(&p0, &x0, &y0);
        assert!((c - v).abs() / v.abs() < 2e-3, "cost {c} vs value {v}");
    }

    #[test]
    fn terminal_value_matrix() {
        // P(T) = [[nI, I],[I, 0]]: value = n|x|^2 + 2 y'x.
        let p = frictionless_scalar();
        let q_t = crate::riccati::terminal_condition(5.0, &p).unwrap();
        let p_t = crate::model::p_from_q(&q_t, &p.gamma);
        let x = DVector::from_element(1, 2.0);
        let y = DVector::from_element(1, 3.0);
        assert!((value(&p_t, &x, &y) - (5.0 * 4.0 + 2.0 * 6.0)).abs() < 1e-12);
    }

    #[test]
    fn liquidation_decay_scalar_closed_form() {
        // X(T) = x0 (lambda/(n-gamma)) / ((T-t0) + lambda/(n-gamma)).
        let p = frictionless_scalar();
        let mut sols = Vec::new();
        for n in [8.0, 16.0, 32.0, 64.0] {
            sols.push(solve_penalized(&p, n, &GridSpec::new(0.0, 1.0, 400, 8.0)).unwrap());
        }
        let report = check_liquidation(
            &p,
            &sols,
            0.0,
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            400,
        )
        .unwrap();
        assert!(report.penalty_decreasing);
        for (n, pen, _) in &report.entries {
            let c = 1.0 / (n - 1.0);
            let x_t = c / (1.0 + c);
            assert!((pen - n * x_t * x_t).abs() < 1e-4, "n={n}");
        }
    }

    #[test]
    fn asset_relabeling_equivariance() {
        let p = fig1_params(0.3);
        let mut p_swapped = p.clone();
        p_swapped.lambda = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 10.0]));
        let grid = GridSpec::new(0.0, 1.0, 300, 8.0);
        let sol = solve_penalized(&p, 64.0, &grid).unwrap();
        let sol_swapped = solve_penalized(&p_swapped, 64.0, &grid).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let y0 = DVector::from_vec(vec![0.1, -0.3]);
        let x0s = DVector::from_vec(vec![2.0, 1.0]);
        let y0s = DVector::from_vec(vec![-0.3, 0.1]);
        let sim_grid = GridSpec::uniform(0.0, 1.0, 100);
        let t1 = simulate(&p, &sol, 0.0, &x0, &y0, &sim_grid).unwrap();
        let t2 = simulate(&p_swapped, &sol_swapped, 0.0, &x0s, &y0s, &sim_grid).unwrap();
        for k in 0..t1.grid.len() {
            assert!((t1.x_path[k][0] - t2.x_path[k][1]).abs() < 1e-7);
            assert!((t1.x_path[k][1] - t2.x_path[k][0]).abs() < 1e-7);
            assert!((t1.xi_path[k][0] - t2.xi_path[k][1]).abs() < 1e-7);
        }
    }

    #[test]
    fn trajectory_csv_shape() {
        let p = frictionless_scalar();
        let sol = solve_penalized(&p, 3.0, &GridSpec::uniform(0.0, 1.0, 20)).unwrap();
        let traj = simulate(
            &p,
            &sol,
            0.0,
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            &GridSpec::uniform(0.0, 1.0, 10),
        )
        .unwrap();
        let csv = traj.to_csv();
        assert!(csv.starts_with("t,X_1,Y_1,xi_1,running_cost\n"));
        assert_eq!(csv.lines().count(), 12);
    }
}
