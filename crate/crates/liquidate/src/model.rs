//! Model parameters and the block algebra shared by every solver.
//!
//! The state of the liquidation problem is a pair `(x, y)` of remaining
//! position and persistent price deviation. Costs are governed by the
//! instantaneous impact matrix `lambda`, the persistent impact `gamma`
//! (diagonal), the resilience schedule `rho(t)` (diagonal) and the risk
//! weight schedule `sigma(t)` (symmetric PSD).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Relative tolerance used when validating positive semi-definiteness of
/// user-supplied risk schedules.
pub fn psd_tol(frobenius: f64) -> f64 {
    1e-10 * (1.0 + frobenius)
}

/// A piecewise-constant schedule on `[0, T]`.
///
/// Each piece starts at `t_start` and is valid until the next breakpoint
/// (or `T` for the last one). Pieces must be sorted, the first must start
/// at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule<V> {
    pub pieces: Vec<(f64, V)>,
}

impl<V: Clone> Schedule<V> {
    pub fn constant(value: V) -> Self {
        Schedule {
            pieces: vec![(0.0, value)],
        }
    }

    /// Value in force at time `t`.
    pub fn at(&self, t: f64) -> &V {
        let mut current = &self.pieces[0].1;
        for (start, v) in &self.pieces {
            if *start <= t + 1e-15 {
                current = v;
            } else {
                break;
            }
        }
        current
    }

    /// Interior breakpoints (everything after the initial piece).
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().skip(1).map(|(t, _)| *t)
    }
}

/// Diagonal schedule entries are stored as vectors of the diagonal.
pub type DiagSchedule = Schedule<DVector<f64>>;
/// Symmetric matrix schedule (risk weights).
pub type MatSchedule = Schedule<DMatrix<f64>>;

/// All problem data: dimensions, impact matrices, coefficient schedules
/// and the trading horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    /// Instantaneous impact, symmetric positive definite.
    pub lambda: DMatrix<f64>,
    /// Persistent impact, diagonal with positive entries.
    pub gamma: DVector<f64>,
    /// Resilience schedule, diagonal nonnegative.
    pub rho: DiagSchedule,
    /// Risk weight schedule, symmetric PSD.
    pub sigma: MatSchedule,
    /// Horizon T.
    pub horizon: f64,
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().copied().collect()
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of the symmetrized matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Frobenius norm, the default matrix norm throughout.
pub fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

impl ModelParams {
    /// Every violated invariant, with the offending field named.
    /// Valid parameters return an empty list.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let d = self.d;
        if d == 0 {
            violations.push("d must be positive".to_string());
            return violations;
        }
        if self.lambda.nrows() != d || self.lambda.ncols() != d {
            violations.push(format!("lambda must be {d}x{d}"));
        } else {
            if frob(&(self.lambda.transpose() - &self.lambda)) > psd_tol(frob(&self.lambda)) {
                violations.push("lambda not symmetric".to_string());
            }
            if min_eigenvalue(&self.lambda) <= 0.0 {
                violations.push("lambda not positive definite".to_string());
            }
        }
        if self.gamma.len() != d {
            violations.push(format!("gamma must have length {d}"));
        } else if self.gamma.iter().any(|&g| g <= 0.0) {
            violations.push("gamma entry not > 0".to_string());
        }
        if self.horizon <= 0.0 {
            violations.push("horizon T must be positive".to_string());
        }
        self.check_schedule_layout(&mut violations);
        for (i, (_, r)) in self.rho.pieces.iter().enumerate() {
            if r.len() != d {
                violations.push(format!("rho piece {i} must have length {d}"));
            } else if r.iter().any(|&x| x < 0.0) {
                violations.push(format!("rho piece {i} has a negative entry"));
            }
        }
        for (i, (_, s)) in self.sigma.pieces.iter().enumerate() {
            if s.nrows() != d || s.ncols() != d {
                violations.push(format!("sigma piece {i} must be {d}x{d}"));
            } else {
                if frob(&(s.transpose() - s)) > psd_tol(frob(s)) {
                    violations.push(format!("sigma piece {i} not symmetric"));
                }
                if min_eigenvalue(s) < -psd_tol(frob(s)) {
                    violations.push(format!("sigma piece {i} not positive semidefinite"));
                }
            }
        }
        violations
    }

    fn check_schedule_layout(&self, violations: &mut Vec<String>) {
        for (name, starts) in [
            (
                "rho",
                self.rho.pieces.iter().map(|(t, _)| *t).collect::<Vec<_>>(),
            ),
            (
                "sigma",
                self.sigma.pieces.iter().map(|(t, _)| *t).collect::<Vec<_>>(),
            ),
        ] {
            if starts.is_empty() {
                violations.push(format!("{name} schedule is empty"));
                continue;
            }
            if starts[0] != 0.0 {
                violations.push(format!("{name} schedule must start at t = 0"));
            }
            if starts.windows(2).any(|w| w[0] >= w[1]) {
                violations.push(format!("{name} breakpoints must be strictly increasing"));
            }
            if starts.iter().any(|&t| t >= self.horizon) {
                violations.push(format!("{name} breakpoint at or past the horizon"));
            }
        }
    }

    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    pub fn lambda_min(&self) -> f64 {
        min_eigenvalue(&self.lambda)
    }

    pub fn lambda_max(&self) -> f64 {
        max_eigenvalue(&self.lambda)
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// sup over pieces of the largest diagonal entry of rho.
    pub fn rho_sup(&self) -> f64 {
        self.rho
            .pieces
            .iter()
            .flat_map(|(_, r)| r.iter().copied())
            .fold(0.0, f64::max)
    }

    /// sup over pieces of rho_i, for asset i.
    pub fn rho_sup_asset(&self, i: usize) -> f64 {
        self.rho
            .pieces
            .iter()
            .map(|(_, r)| r[i])
            .fold(0.0, f64::max)
    }

    /// sup over pieces of the Frobenius norm of sigma.
    pub fn sigma_sup(&self) -> f64 {
        self.sigma.pieces.iter().map(|(_, s)| frob(s)).fold(0.0, f64::max)
    }

    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.gamma)
    }

    pub fn gamma_inv_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.gamma.map(|g| 1.0 / g))
    }

    pub fn lambda_inv(&self) -> DMatrix<f64> {
        self.lambda
            .clone()
            .try_inverse()
            .expect("lambda is positive definite")
    }

    pub fn rho_matrix(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(self.rho.at(t))
    }

    pub fn sigma_matrix(&self, t: f64) -> DMatrix<f64> {
        self.sigma.at(t).clone()
    }

    /// All schedule breakpoints in (0, T), sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .rho
            .breakpoints()
            .chain(self.sigma.breakpoints())
            .collect();
        b.sort_by(|a, c| a.partial_cmp(c).unwrap());
        b.dedup_by(|a, c| (*a - *c).abs() < 1e-14);
        b
    }
}

/// A symmetric `2d x 2d` matrix stored by its `d x d` blocks,
/// assembled as `[[A, B], [B^T, C]]` with `A = A^T`, `C = C^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSym {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl BlockSym {
    pub fn zeros(d: usize) -> Self {
        BlockSym {
            a: DMatrix::zeros(d, d),
            b: DMatrix::zeros(d, d),
            c: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Assembled `2d x 2d` matrix.
    pub fn assemble(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(&self.a);
        m.view_mut((0, d), (d, d)).copy_from(&self.b);
        m.view_mut((d, 0), (d, d)).copy_from(&self.b.transpose());
        m.view_mut((d, d), (d, d)).copy_from(&self.c);
        m
    }

    /// Split a `2d x 2d` matrix into blocks, symmetrizing A and C and
    /// averaging the off-diagonal blocks.
    pub fn from_assembled(m: &DMatrix<f64>) -> Self {
        assert!(m.nrows() % 2 == 0 && m.nrows() == m.ncols());
        let d = m.nrows() / 2;
        let a = m.view((0, 0), (d, d)).into_owned();
        let b = m.view((0, d), (d, d)).into_owned();
        let bt = m.view((d, 0), (d, d)).into_owned();
        let c = m.view((d, d), (d, d)).into_owned();
        BlockSym {
            a: (&a + a.transpose()) * 0.5,
            b: (&b + bt.transpose()) * 0.5,
            c: (&c + c.transpose()) * 0.5,
        }
    }

    /// Defect from exact symmetry of the stored blocks.
    pub fn symmetry_defect(&self) -> f64 {
        frob(&(&self.a - self.a.transpose())).max(frob(&(&self.c - self.c.transpose())))
    }

    /// Quadratic form `[u^T v^T] Q [u; v]` computed blockwise.
    pub fn quadratic_form(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let au = &self.a * u;
        let bv = &self.b * v;
        let cv = &self.c * v;
        u.dot(&au) + 2.0 * u.dot(&bv) + v.dot(&cv)
    }

    pub fn norm(&self) -> f64 {
        frob(&self.assemble())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.assemble())
    }
}

impl std::ops::Add for &BlockSym {
    type Output = BlockSym;
    fn add(self, rhs: &BlockSym) -> BlockSym {
        BlockSym {
            a: &self.a + &rhs.a,
            b: &self.b + &rhs.b,
            c: &self.c + &rhs.c,
        }
    }
}

/// Derived blocks `D = A - gamma B^T`, `E = gamma C - B`, `F = D + E gamma`.
/// These drive the feedback gain and the closed-loop state dynamics.
pub fn def_blocks(q: &BlockSym, gamma: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = q.dim();
    assert_eq!(gamma.len(), d, "gamma dimension mismatch");
    let g = DMatrix::from_diagonal(gamma);
    let dd = &q.a - &g * q.b.transpose();
    let e = &g * &q.c - &q.b;
    let f = &dd + &e * &g;
    (dd, e, f)
}

/// Shift from the transformed variable back to the value-function matrix:
/// `P = Q - [[0,0],[0,gamma^{-1}]]`.
pub fn p_from_q(q: &BlockSym, gamma: &DVector<f64>) -> BlockSym {
    let ginv = DMatrix::from_diagonal(&gamma.map(|g| 1.0 / g));
    BlockSym {
        a: q.a.clone(),
        b: q.b.clone(),
        c: &q.c - ginv,
    }
}

/// Inverse of [`p_from_q`]: `Q = P + [[0,0],[0,gamma^{-1}]]`.
pub fn q_from_p(p: &BlockSym, gamma: &DVector<f64>) -> BlockSym {
    let ginv = DMatrix::from_diagonal(&gamma.map(|g| 1.0 / g));
    BlockSym {
        a: p.a.clone(),
        b: p.b.clone(),
        c: &p.c + ginv,
    }
}

/// Remaining position and persistent price deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVec {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl StateVec {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(
            x.iter().chain(y.iter()).all(|v| v.is_finite()),
            "state entries must be finite"
        );
        StateVec { x, y }
    }
}

// --- serialization of ModelParams ---------------------------------------

/// JSON-facing form of [`ModelParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParamsConfig {
    pub d: usize,
    /// Row-major d x d.
    pub lambda: Vec<f64>,
    /// Diagonal of gamma, length d.
    pub gamma: Vec<f64>,
    /// Pieces {t_start, value: diagonal of rho}.
    pub rho: Vec<SchedulePiece<Vec<f64>>>,
    /// Pieces {t_start, value: row-major d x d}.
    pub sigma: Vec<SchedulePiece<Vec<f64>>>,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchedulePiece<V> {
    pub t_start: f64,
    pub value: V,
}

impl ModelParamsConfig {
    pub fn into_params(self) -> Result<ModelParams, ModelError> {
        let d = self.d;
        if self.lambda.len() != d * d {
            return Err(ModelError::Invalid(vec![format!(
                "lambda must have {} entries (row-major {d}x{d})",
                d * d
            )]));
        }
        let lambda = DMatrix::from_row_slice(d, d, &self.lambda);
        let gamma = DVector::from_vec(self.gamma);
        let rho = Schedule {
            pieces: self
                .rho
                .into_iter()
                .map(|p| (p.t_start, DVector::from_vec(p.value)))
                .collect(),
        };
        let mut sigma_pieces = Vec::new();
        for p in self.sigma {
            if p.value.len() != d * d {
                return Err(ModelError::Invalid(vec![format!(
                    "sigma piece must have {} entries (row-major {d}x{d})",
                    d * d
                )]));
            }
            sigma_pieces.push((p.t_start, DMatrix::from_row_slice(d, d, &p.value)));
        }
        let params = ModelParams {
            d,
            lambda,
            gamma,
            rho,
            sigma: Schedule {
                pieces: sigma_pieces,
            },
            horizon: self.horizon,
        };
        params.ensure_valid()?;
        Ok(params)
    }

    pub fn from_params(p: &ModelParams) -> Self {
        ModelParamsConfig {
            d: p.d,
            lambda: p.lambda.transpose().as_slice().to_vec(),
            gamma: p.gamma.as_slice().to_vec(),
            rho: p
                .rho
                .pieces
                .iter()
                .map(|(t, v)| SchedulePiece {
                    t_start: *t,
                    value: v.as_slice().to_vec(),
                })
                .collect(),
            sigma: p
                .sigma
                .pieces
                .iter()
                .map(|(t, m)| SchedulePiece {
                    t_start: *t,
                    value: m.transpose().as_slice().to_vec(),
                })
                .collect(),
            horizon: p.horizon,
        }
    }
}

impl ModelParams {
    pub fn from_json(s: &str) -> Result<ModelParams, ModelError> {
        let cfg: ModelParamsConfig =
            serde_json::from_str(s).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.into_params()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelParamsConfig::from_params(self)).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params() -> ModelParams {
        ModelParams {
            d: 1,
            lambda: DMatrix::from_element(1, 1, 1.0),
            gamma: DVector::from_element(1, 1.0),
            rho: Schedule::constant(DVector::from_element(1, 1.0)),
            sigma: Schedule::constant(DMatrix::from_element(1, 1, 1.0)),
            horizon: 1.0,
        }
    }

    #[test]
    fn valid_scalar_params() {
        assert!(scalar_params().validate().is_empty());
    }

    #[test]
    fn indefinite_lambda_rejected() {
        let mut p = scalar_params();
        p.d = 2;
        p.lambda = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        p.gamma = DVector::from_element(2, 1.0);
        p.rho = Schedule::constant(DVector::from_element(2, 1.0));
        p.sigma = Schedule::constant(DMatrix::identity(2, 2));
        let v = p.validate();
        assert!(v.iter().any(|s| s.contains("lambda not positive definite")), "{v:?}");
    }

    #[test]
    fn zero_gamma_entry_rejected() {
        let mut p = scalar_params();
        p.d = 2;
        p.lambda = DMatrix::identity(2, 2);
        p.gamma = DVector::from_vec(vec![1.0, 0.0]);
        p.rho = Schedule::constant(DVector::from_element(2, 1.0));
        p.sigma = Schedule::constant(DMatrix::identity(2, 2));
        let v = p.validate();
        assert!(v.iter().any(|s| s.contains("gamma entry not > 0")), "{v:?}");
    }

    #[test]
    fn def_blocks_zero() {
        let q = BlockSym::zeros(2);
        let gamma = DVector::from_element(2, 1.0);
        let (d, e, f) = def_blocks(&q, &gamma);
        assert_eq!(d, DMatrix::zeros(2, 2));
        assert_eq!(e, DMatrix::zeros(2, 2));
        assert_eq!(f, DMatrix::zeros(2, 2));
    }

    #[test]
    fn def_blocks_terminal_condition_scalar() {
        // A=n, B=1, C=1/gamma with gamma=1: D=n-1, E=0, F=n-1.
        let n = 5.0;
        let q = BlockSym {
            a: DMatrix::from_element(1, 1, n),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
        };
        let gamma = DVector::from_element(1, 1.0);
        let (d, e, f) = def_blocks(&q, &gamma);
        assert_eq!(d[(0, 0)], n - 1.0);
        assert_eq!(e[(0, 0)], 0.0);
        assert_eq!(f[(0, 0)], n - 1.0);
    }

    #[test]
    fn def_blocks_scalar_arithmetic() {
        // A=2, B=1, C=1, gamma=2: D=0, E=1, F=2.
        let q = BlockSym {
            a: DMatrix::from_element(1, 1, 2.0),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
        };
        let gamma = DVector::from_element(1, 2.0);
        let (d, e, f) = def_blocks(&q, &gamma);
        assert_eq!(d[(0, 0)], 0.0);
        assert_eq!(e[(0, 0)], 1.0);
        assert_eq!(f[(0, 0)], 2.0);
    }

    #[test]
    fn pq_round_trip() {
        let p = BlockSym {
            a: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]),
            b: DMatrix::from_row_slice(2, 2, &[1.0, -0.2, 0.3, 0.7]),
            c: DMatrix::from_row_slice(2, 2, &[1.5, 0.1, 0.1, 0.9]),
        };
        let gamma = DVector::from_vec(vec![1.0, 2.0]);
        let back = p_from_q(&q_from_p(&p, &gamma), &gamma);
        assert!((&back.assemble() - p.assemble()).norm() < 1e-14);
    }

    #[test]
    fn p_from_q_scalar() {
        // d=1, gamma=2, Q.c=1 -> P.c = 0.5.
        let q = BlockSym {
            a: DMatrix::from_element(1, 1, 3.0),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
        };
        let gamma = DVector::from_element(1, 2.0);
        assert!((p_from_q(&q, &gamma).c[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn f_matches_assembled_quadratic_identity() {
        // F = [-I gamma] Q [-I; gamma] from the assembled matrix must agree
        // with D + E gamma from def_blocks.
        let q = BlockSym {
            a: DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]),
            b: DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.8]),
            c: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
        };
        let gamma = DVector::from_vec(vec![1.5, 0.5]);
        let g = DMatrix::from_diagonal(&gamma);
        let mut sel = DMatrix::zeros(4, 2);
        sel.view_mut((0, 0), (2, 2)).copy_from(&(-DMatrix::<f64>::identity(2, 2)));
        sel.view_mut((2, 0), (2, 2)).copy_from(&g);
        let direct = sel.transpose() * q.assemble() * &sel;
        let (_, _, f) = def_blocks(&q, &gamma);
        assert!((direct - f).norm() < 1e-13);
    }

    #[test]
    fn json_round_trip() {
        let p = scalar_params();
        let s = p.to_json();
        let back = ModelParams::from_json(&s).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn schedule_lookup() {
        let s = Schedule {
            pieces: vec![(0.0, 1.0), (0.5, 2.0)],
        };
        assert_eq!(*s.at(0.0), 1.0);
        assert_eq!(*s.at(0.49), 1.0);
        assert_eq!(*s.at(0.5), 2.0);
        assert_eq!(*s.at(1.0), 2.0);
    }
}
