//! Experiment orchestration: configuration ingestion, single solves,
//! parameter sweeps (plot data), and the verification-suite runner.
//!
//! All file output uses 12-significant-digit decimal formatting and fixed
//! iteration order, so identical specs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundReport};
use crate::comparison::{check_comparison, random_ordered_pair, ComparisonOutcome};
use crate::error::{ModelError, SolveError};
use crate::model::{p_from_q, ModelParams, ModelParamsConfig};
use crate::riccati::{format_sig, solve_limit, solve_penalized, GridSpec, RiccatiSolution};
use crate::trajectory::{check_liquidation, feedback, simulate, value, Trajectory};

/// Which model field a sweep mutates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Off-diagonal correlation of a 2x2 risk matrix:
    /// `Sigma = [[s1^2, k s1 s2], [k s1 s2, s2^2]]`.
    Correlation,
    /// Diagonal entry `lambda_11`.
    Lambda1,
    /// Persistent impact of asset 1.
    Gamma1,
    /// Resilience of asset 1 (every schedule piece).
    Rho1,
    /// Scalar persistent impact (d = 1 only).
    Gamma,
}

impl SweepVariable {
    pub fn label(&self) -> &'static str {
        match self {
            SweepVariable::Correlation => "k",
            SweepVariable::Lambda1 => "lambda1",
            SweepVariable::Gamma1 => "gamma1",
            SweepVariable::Rho1 => "rho1",
            SweepVariable::Gamma => "gamma",
        }
    }

    /// Base parameters with the sweep variable set to `v`.
    pub fn apply(&self, base: &ModelParams, v: f64) -> Result<ModelParams, ModelError> {
        let mut p = base.clone();
        match self {
            SweepVariable::Correlation => {
                if p.d != 2 {
                    return Err(ModelError::Config(
                        "correlation sweep requires d = 2".to_string(),
                    ));
                }
                for (_, s) in &mut p.sigma.pieces {
                    let s1 = s[(0, 0)].sqrt();
                    let s2 = s[(1, 1)].sqrt();
                    s[(0, 1)] = v * s1 * s2;
                    s[(1, 0)] = v * s1 * s2;
                }
            }
            SweepVariable::Lambda1 => p.lambda[(0, 0)] = v,
            SweepVariable::Gamma1 => p.gamma[0] = v,
            SweepVariable::Rho1 => {
                for (_, r) in &mut p.rho.pieces {
                    r[0] = v;
                }
            }
            SweepVariable::Gamma => {
                if p.d != 1 {
                    return Err(ModelError::Config("gamma sweep requires d = 1".to_string()));
                }
                p.gamma[0] = v;
            }
        }
        p.ensure_valid()?;
        Ok(p)
    }
}

/// A full sweep experiment: base model, sweep axis, initial state,
/// penalization ladder and grids.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub base: ModelParams,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    pub t0: f64,
    pub out_dir: PathBuf,
    pub ladder: Vec<f64>,
    pub steps: usize,
    pub refinement: f64,
    /// Distance below T at which limit quantities are reported.
    pub delta: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.base.ensure_valid()?;
        if self.values.is_empty() || self.values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Config(
                "sweep values must be finite and nonempty".to_string(),
            ));
        }
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::Config(
                "ladder must be nonempty and increasing".to_string(),
            ));
        }
        if !(0.0..self.base.horizon).contains(&self.t0) {
            return Err(ModelError::Config("t0 must lie in [0, T)".to_string()));
        }
        if self.delta <= 0.0 || self.delta >= self.base.horizon - self.t0 {
            return Err(ModelError::Config("delta must lie in (0, T - t0)".to_string()));
        }
        Ok(())
    }

    pub fn top_n(&self) -> f64 {
        *self.ladder.last().unwrap()
    }
}

// --- serde-facing experiment configuration -------------------------------

/// JSON form of a sweep/simulation configuration. Only `model` is needed
/// for `solve`/`verify`; the remaining fields default sensibly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelParamsConfig,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default)]
    pub sweep_variable: Option<SweepVariable>,
    #[serde(default)]
    pub sweep_values: Option<Vec<f64>>,
    #[serde(default)]
    pub ladder: Option<Vec<f64>>,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<ModelParams, ModelError> {
        self.model.clone().into_params()
    }

    /// Assemble a full spec, filling defaults: x0 = ones, y0 = zeros,
    /// t0 = 0, ladder = {16,...,2048}, delta = 0.05 T.
    pub fn into_spec(
        self,
        out_dir: PathBuf,
        steps: usize,
        refinement: f64,
    ) -> Result<ExperimentSpec, ModelError> {
        let params = self.model.into_params()?;
        let d = params.d;
        let vecd = |v: Option<Vec<f64>>, fill: f64| -> Result<DVector<f64>, ModelError> {
            match v {
                None => Ok(DVector::from_element(d, fill)),
                Some(v) if v.len() == d => Ok(DVector::from_vec(v)),
                Some(_) => Err(ModelError::Config(format!("state vectors must have length {d}"))),
            }
        };
        let spec = ExperimentSpec {
            x0: vecd(self.x0, 1.0)?,
            y0: vecd(self.y0, 0.0)?,
            t0: self.t0.unwrap_or(0.0),
            variable: self.sweep_variable.unwrap_or(SweepVariable::Correlation),
            values: self.sweep_values.unwrap_or_else(|| vec![0.0]),
            ladder: self
                .ladder
                .unwrap_or_else(|| (4..=11).map(|k| f64::powi(2.0, k)).collect()),
            delta: self.delta.unwrap_or(0.05 * params.horizon),
            steps,
            refinement,
            out_dir,
            base: params,
        };
        spec.validate()?;
        Ok(spec)
    }
}

// --- single solve --------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub n: f64,
    pub n0: f64,
    pub t0_threshold: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_symmetry_defect: f64,
    pub min_eigenvalue: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Solve one penalized equation and write `solution.csv` plus
/// `summary.json` into `out_dir`. Requires `n` above the a priori
/// threshold `n0` so every bound check downstream applies.
pub fn run_solve(
    params: &ModelParams,
    n: f64,
    grid: &GridSpec,
    out_dir: &Path,
) -> Result<SolveSummary, SolveError> {
    let n0 = bounds::n0(params);
    if n <= n0 {
        return Err(SolveError::PenalizationTooSmall {
            n,
            bound: n0,
            context: format!("penalization must exceed the a priori threshold n0 = {n0}"),
        });
    }
    let sol = solve_penalized(params, n, grid)?;
    let summary = SolveSummary {
        n,
        n0,
        t0_threshold: bounds::t0(params, n0),
        alpha: bounds::alpha(params),
        beta: bounds::beta(params),
        max_symmetry_defect: sol.diagnostics.max_symmetry_defect,
        min_eigenvalue: sol.diagnostics.min_eigenvalue,
        accepted_steps: sol.diagnostics.accepted_steps,
        rejected_steps: sol.diagnostics.rejected_steps,
    };
    fs::create_dir_all(out_dir).map_err(io_err)?;
    fs::write(out_dir.join("solution.csv"), sol.to_csv()).map_err(io_err)?;
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )
    .map_err(io_err)?;
    Ok(summary)
}

fn io_err(e: std::io::Error) -> SolveError {
    SolveError::Io(e.to_string())
}

// --- sweep ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// `V(t0, x0, y0)` under the top ladder rung.
    pub value_function: f64,
    pub initial_rates: Vec<f64>,
    /// `|X|` at the grid point nearest `T - delta`.
    pub x_near_end: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(f64, String)>,
    pub trajectory_files: Vec<String>,
}

/// One solve + simulate per sweep value, in a worker pool. Emits one
/// trajectory file per value (at the top ladder rung) and a summary table
/// sorted by sweep value. Per-value failures are recorded and the sweep
/// continues.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepOutcome, SolveError> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir).map_err(io_err)?;
    let n = spec.top_n();

    let mut tasks: Vec<f64> = spec.values.clone();
    tasks.sort_by(|a, b| a.partial_cmp(b).unwrap());

    type PerValue = Result<(SweepRow, String, Trajectory), String>;
    let results: Vec<(f64, PerValue)> = tasks
        .par_iter()
        .map(|&v| {
            let run = || -> Result<(SweepRow, String, Trajectory), String> {
                let params = spec.variable.apply(&spec.base, v).map_err(|e| e.to_string())?;
                let grid = GridSpec::new(0.0, params.horizon, spec.steps, spec.refinement);
                let sol = solve_penalized(&params, n, &grid).map_err(|e| e.to_string())?;
                let sim_grid = GridSpec::new(spec.t0, params.horizon, spec.steps, spec.refinement);
                let traj = simulate(&params, &sol, spec.t0, &spec.x0, &spec.y0, &sim_grid)
                    .map_err(|e| e.to_string())?;
                let q0 = sol.eval(spec.t0).map_err(|e| e.to_string())?;
                let p0 = p_from_q(&q0, &params.gamma);
                let vf = value(&p0, &spec.x0, &spec.y0);
                let xi0 = feedback(&q0, &spec.x0, &spec.y0, &params);
                let t_report = params.horizon - spec.delta;
                let k_near = traj
                    .grid
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        (*a - t_report).abs().partial_cmp(&(*b - t_report).abs()).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                let row = SweepRow {
                    value: v,
                    value_function: vf,
                    initial_rates: xi0.iter().copied().collect(),
                    x_near_end: traj.x_path[k_near].iter().copied().collect(),
                };
                let fname = format!("traj_{}_{}_n{}.csv", spec.variable.label(), fmt_value(v), n);
                Ok((row, fname, traj))
            };
            (v, run())
        })
        .collect();

    let mut outcome = SweepOutcome {
        rows: Vec::new(),
        failures: Vec::new(),
        trajectory_files: Vec::new(),
    };
    for (v, r) in results {
        match r {
            Ok((row, fname, traj)) => {
                fs::write(spec.out_dir.join(&fname), traj.to_csv()).map_err(io_err)?;
                outcome.rows.push(row);
                outcome.trajectory_files.push(fname);
            }
            Err(msg) => outcome.failures.push((v, msg)),
        }
    }

    let mut summary = String::from("value,value_function");
    let d = spec.base.d;
    for i in 1..=d {
        summary.push_str(&format!(",xi0_{i}"));
    }
    for i in 1..=d {
        summary.push_str(&format!(",x_near_end_{i}"));
    }
    summary.push('\n');
    for row in &outcome.rows {
        let mut cells = vec![format_sig(row.value), format_sig(row.value_function)];
        cells.extend(row.initial_rates.iter().map(|v| format_sig(*v)));
        cells.extend(row.x_near_end.iter().map(|v| format_sig(*v)));
        summary.push_str(&cells.join(","));
        summary.push('\n');
    }
    fs::write(spec.out_dir.join("summary.csv"), summary).map_err(io_err)?;
    Ok(outcome)
}

fn fmt_value(v: f64) -> String {
    // filename-safe sweep value: -0.5 -> m0p5
    let s = format!("{v}").replace('-', "m").replace('.', "p");
    s
}

// --- verification suite --------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct FamilyResult {
    pub family: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub families: Vec<FamilyResult>,
    pub all_pass: bool,
}

/// Run every invariant family on one parameter set: envelope containment,
/// weighted-F sandwich, ladder monotonicity + convergence, liquidation
/// decay, and the comparison-principle campaign.
pub fn run_verify(
    params: &ModelParams,
    ladder: &[f64],
    grid: &GridSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<VerifyReport, SolveError> {
    params.ensure_valid()?;
    let n0 = bounds::n0(params);
    // bound checks need n above the threshold
    let mut n_check = 64.0;
    while n_check <= n0 {
        n_check *= 2.0;
    }
    let mut families = Vec::new();

    let sol = solve_penalized(params, n_check, grid)?;

    let env_report = bounds::check_envelope(&sol, 1e-7);
    families.push(family_from_bound("envelope", &env_report));

    let wf_report = bounds::check_weighted_f(&sol, 1e-7);
    families.push(family_from_bound("weighted_f", &wf_report));

    // Convergence of consecutive doubling rungs is first order in n, so an
    // absolute tolerance is out of reach for any affordable ladder; the
    // checkable form is the geometric decay of the rung differences
    // (ratio approaching 1/2 per doubling) plus PSD monotonicity. The
    // asymptotic rate needs n well above lambda_max / (T - t_max), hence
    // the mid-horizon cutoff.
    let t_max = 0.5 * params.horizon;
    match solve_limit(params, t_max, ladder, 0.0, grid) {
        Ok(lim) => {
            let hist = &lim.diagnostics.ladder_history;
            let ratios: Vec<f64> = hist.windows(2).map(|w| w[1].1 / w[0].1).collect();
            let rate_ok = ratios.last().is_some_and(|r| *r < 0.8);
            let pass = rate_ok && lim.diagnostics.ladder_monotonicity_margin >= 0.0;
            families.push(FamilyResult {
                family: "ladder".to_string(),
                pass,
                detail: format!(
                    "rung-difference ratios={:.3?} monotonicity_margin={:.3e}",
                    ratios, lim.diagnostics.ladder_monotonicity_margin
                ),
            });
        }
        Err(e) => families.push(FamilyResult {
            family: "ladder".to_string(),
            pass: false,
            detail: e.to_string(),
        }),
    }

    let ladder_sols: Vec<RiccatiSolution> = ladder
        .par_iter()
        .map(|&n| solve_penalized(params, n, grid))
        .collect::<Result<_, _>>()?;
    let x0 = DVector::from_element(params.d, 1.0);
    let y0 = DVector::zeros(params.d);
    let liq = check_liquidation(params, &ladder_sols, 0.0, &x0, &y0, grid.base_steps.min(800))?;
    // the residuals decay like 1/n, so require a decade of decay across
    // the ladder rather than an absolute (parameter-dependent) threshold
    let first = liq.entries.first().copied().unwrap_or((0.0, 0.0, 0.0));
    let liq_pass = liq.penalty_decreasing
        && liq.final_penalty < 0.1 * first.1
        && liq.final_cross_term < 0.1 * first.2.abs() + 1e-9;
    families.push(FamilyResult {
        family: "liquidation".to_string(),
        pass: liq_pass,
        detail: format!(
            "decreasing={} final_penalty={:.3e} final_cross={:.3e}",
            liq.penalty_decreasing, liq.final_penalty, liq.final_cross_term
        ),
    });

    let mut comp_worst = f64::INFINITY;
    let mut comp_pass = true;
    for d in 1..=3usize {
        for s in 0..30u64 {
            let (i1, i2) = random_ordered_pair(seed.wrapping_add(1000 * d as u64 + s), d, 1.0);
            let report = check_comparison(&i1, &i2, &GridSpec::uniform(0.0, 1.0, 100), 1e-8)?;
            match report.outcome {
                ComparisonOutcome::Pass => comp_worst = comp_worst.min(report.worst_margin),
                _ => comp_pass = false,
            }
        }
    }
    families.push(FamilyResult {
        family: "comparison".to_string(),
        pass: comp_pass,
        detail: format!("worst_margin={comp_worst:.3e}"),
    });

    let all_pass = families.iter().all(|f| f.pass);
    let report = VerifyReport { families, all_pass };
    fs::create_dir_all(out_dir).map_err(io_err)?;
    fs::write(
        out_dir.join("verify.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .map_err(io_err)?;
    Ok(report)
}

fn family_from_bound(name: &str, report: &BoundReport) -> FamilyResult {
    FamilyResult {
        family: name.to_string(),
        pass: report.verdict,
        detail: format!(
            "worst_margin={:.3e} at t={:.4}",
            report.worst_margin, report.worst_t
        ),
    }
}

// --- built-in figure specs -----------------------------------------------

fn fig1_model(k: f64) -> ModelParams {
    use crate::model::Schedule;
    ModelParams {
        d: 2,
        lambda: DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0])),
        gamma: DVector::from_element(2, 1.0),
        rho: Schedule::constant(DVector::from_element(2, 1.0)),
        sigma: Schedule::constant(DMatrix::from_row_slice(2, 2, &[1.0, k, k, 1.0])),
        horizon: 1.0,
    }
}

fn scalar_model(lambda: f64, gamma: f64, sigma: f64, rho: f64) -> ModelParams {
    use crate::model::Schedule;
    ModelParams {
        d: 1,
        lambda: DMatrix::from_element(1, 1, lambda),
        gamma: DVector::from_element(1, gamma),
        rho: Schedule::constant(DVector::from_element(1, rho)),
        sigma: Schedule::constant(DMatrix::from_element(1, 1, sigma)),
        horizon: 1.0,
    }
}

/// The five built-in figure sweeps. Value lists are artifact choices:
/// {-0.5, 0, 0.5} for correlation and {0.5, 1, 2, 4} for the impact and
/// resilience axes.
pub fn figure_specs(out_root: &Path, steps: usize) -> Vec<(String, ExperimentSpec)> {
    let ladder: Vec<f64> = (4..=11).map(|k| f64::powi(2.0, k)).collect();
    let two = |base: ModelParams, variable, values: Vec<f64>, name: &str| {
        let d = base.d;
        (
            name.to_string(),
            ExperimentSpec {
                base,
                variable,
                values,
                x0: DVector::from_element(d, 1.0),
                y0: DVector::zeros(d),
                t0: 0.0,
                out_dir: out_root.join(name),
                ladder: ladder.clone(),
                steps,
                refinement: 8.0,
                delta: 0.05,
            },
        )
    };
    vec![
        // value function and initial rates against correlation
        two(fig1_model(0.0), SweepVariable::Correlation, vec![-0.5, 0.0, 0.5], "fig1"),
        // position paths against the instantaneous impact of asset 1
        two(fig1_model(0.0), SweepVariable::Lambda1, vec![0.5, 1.0, 2.0, 4.0], "fig2"),
        // initial rate against the persistent impact (single asset)
        two(
            scalar_model(0.1, 1.0, 0.0, 1.0),
            SweepVariable::Gamma,
            vec![0.5, 1.0, 2.0, 4.0],
            "fig3",
        ),
        // position paths against resilience (single asset)
        two(
            scalar_model(0.1, 1.0, 0.0, 1.0),
            SweepVariable::Rho1,
            vec![0.5, 1.0, 2.0, 4.0],
            "fig4",
        ),
        // strongly correlated assets: short positions can appear
        two(fig1_model(0.0), SweepVariable::Correlation, vec![-0.9, 0.0, 0.9], "fig5"),
    ]
}
