//! Randomized invariants: closed-form agreement across the scalar
//! parameter space, quadratic scaling of the objective, and the
//! comparison principle under the hypothesis-preserving generator.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use liquidate::comparison::{check_comparison, random_ordered_pair, ComparisonOutcome};
use liquidate::model::{def_blocks, ModelParams, Schedule};
use liquidate::riccati::{solve_penalized, GridSpec};
use liquidate::trajectory::{cost, simulate};

fn scalar_params(lambda: f64, gamma: f64) -> ModelParams {
    ModelParams {
        d: 1,
        lambda: DMatrix::from_element(1, 1, lambda),
        gamma: DVector::from_element(1, gamma),
        rho: Schedule::constant(DVector::zeros(1)),
        sigma: Schedule::constant(DMatrix::zeros(1, 1)),
        horizon: 1.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn scalar_closed_form_holds_across_parameters(
        lambda in 0.5f64..2.0,
        gamma in 0.5f64..2.0,
        excess in 1.0f64..20.0,
    ) {
        // sigma = rho = 0: D(t) = 1 / ((T - t)/lambda + 1/(n - gamma))
        let n = gamma + excess;
        let p = scalar_params(lambda, gamma);
        let sol = solve_penalized(&p, n, &GridSpec::uniform(0.0, 1.0, 200)).unwrap();
        for t in [0.0, 0.3, 0.7, 1.0] {
            let q = sol.eval(t).unwrap();
            let (d_blk, _, _) = def_blocks(&q, &p.gamma);
            let exact = 1.0 / ((1.0 - t) / lambda + 1.0 / (n - gamma));
            prop_assert!(
                (d_blk[(0, 0)] - exact).abs() < 1e-6 * exact,
                "t={t}: {} vs {exact}", d_blk[(0, 0)]
            );
        }
    }

    #[test]
    fn objective_scales_quadratically_in_initial_state(
        scale in 0.25f64..4.0,
        x0 in 0.5f64..2.0,
        y0 in -0.5f64..0.5,
    ) {
        let p = scalar_params(1.0, 1.0);
        let n = 16.0;
        let grid = GridSpec::new(0.0, 1.0, 300, 8.0);
        let sol = solve_penalized(&p, n, &grid).unwrap();
        let run = |c: f64| {
            let traj = simulate(
                &p, &sol, 0.0,
                &DVector::from_element(1, c * x0),
                &DVector::from_element(1, c * y0),
                &grid,
            ).unwrap();
            cost(&traj, Some(n))
        };
        let base = run(1.0);
        let scaled = run(scale);
        prop_assert!(
            (scaled - scale * scale * base).abs() < 1e-7 * (1.0 + scaled.abs()),
            "cost({scale} z) = {scaled}, expected {}", scale * scale * base
        );
    }

    #[test]
    fn comparison_principle_under_generator(seed in 0u64..10_000, d in 1usize..4) {
        let (i1, i2) = random_ordered_pair(seed, d, 1.0);
        let rep = check_comparison(&i1, &i2, &GridSpec::uniform(0.0, 1.0, 60), 1e-8).unwrap();
        prop_assert_eq!(rep.outcome, ComparisonOutcome::Pass);
    }
}
