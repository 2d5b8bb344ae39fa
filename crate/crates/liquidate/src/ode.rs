//! Embedded Dormand-Prince 4(5) stepper over matrix-valued states.
//!
//! Used for the backward Riccati integration, the comparison-harness
//! solves and the forward state simulation. The state is a `DMatrix`;
//! vectors travel as `d x 1` matrices.

use nalgebra::DMatrix;

use crate::error::SolveError;

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrate `dy/dt = f(t, y)` through the output times `t_points`
/// (strictly monotone, increasing or decreasing), returning the state at
/// each point. The first returned state is `y0` itself. Each segment
/// between consecutive output points is resolved adaptively; the stepper
/// lands exactly on every output point, so schedule breakpoints included
/// in `t_points` never straddle a step.
pub fn solve_path<F>(
    mut f: F,
    t_points: &[f64],
    y0: DMatrix<f64>,
    opts: &OdeOptions,
) -> Result<(Vec<DMatrix<f64>>, OdeStats), SolveError>
where
    F: FnMut(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    assert!(t_points.len() >= 2, "need at least two output times");
    let dir = (t_points[1] - t_points[0]).signum();
    assert!(
        t_points.windows(2).all(|w| (w[1] - w[0]) * dir > 0.0),
        "output times must be strictly monotone"
    );

    let mut out = Vec::with_capacity(t_points.len());
    let mut stats = OdeStats::default();
    let mut y = y0;
    out.push(y.clone());

    let span = (t_points[t_points.len() - 1] - t_points[0]).abs();
    let mut h = dir * (span / 100.0).max(1e-12);

    for w in t_points.windows(2) {
        let (seg_start, seg_end) = (w[0], w[1]);
        let mut t = seg_start;
        // A fresh segment never needs a step larger than its own width.
        if h.abs() > (seg_end - seg_start).abs() {
            h = seg_end - seg_start;
        }
        while (seg_end - t) * dir > 1e-15 * (1.0 + t.abs()) {
            if (t + h - seg_end) * dir > 0.0 {
                h = seg_end - t;
            }
            if h.abs() < 1e-14 * (1.0 + t.abs()) {
                return Err(SolveError::StepUnderflow { t });
            }
            if stats.accepted + stats.rejected > opts.max_steps {
                return Err(SolveError::StepUnderflow { t });
            }

            let mut k: Vec<DMatrix<f64>> = Vec::with_capacity(7);
            k.push(f(t, &y));
            for i in 1..7 {
                let mut yi = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let aij = A[i][j];
                    if aij != 0.0 {
                        yi += kj * (h * aij);
                    }
                }
                k.push(f(t + C[i] * h, &yi));
            }
            let mut y5 = y.clone();
            let mut err = DMatrix::zeros(y.nrows(), y.ncols());
            for (i, ki) in k.iter().enumerate() {
                if B5[i] != 0.0 {
                    y5 += ki * (h * B5[i]);
                }
                let db = B5[i] - B4[i];
                if db != 0.0 {
                    err += ki * (h * db);
                }
            }
            let scale = opts.atol + opts.rtol * y.norm().max(y5.norm());
            let err_ratio = err.norm() / scale;

            if err_ratio <= 1.0 {
                t += h;
                y = y5;
                stats.accepted += 1;
                let grow = if err_ratio > 0.0 {
                    (0.9 * err_ratio.powf(-0.2)).min(5.0)
                } else {
                    5.0
                };
                h *= grow;
            } else {
                stats.rejected += 1;
                h *= (0.9 * err_ratio.powf(-0.2)).max(0.2);
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}
