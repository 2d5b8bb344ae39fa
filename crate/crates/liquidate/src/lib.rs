//! Multi-asset optimal liquidation with instantaneous and persistent
//! price impact under time-varying resilience.
//!
//! The library solves the associated `2d x 2d` matrix Riccati equation
//! backward from a penalized terminal condition, extracts the hard
//! liquidation constraint as the limit of a penalization ladder,
//! synthesizes the optimal feedback strategy, and verifies a family of
//! closed-form a priori bounds plus a matrix comparison principle.
//!
//! ```
//! use liquidate::model::{ModelParams, Schedule};
//! use liquidate::riccati::{solve_penalized, GridSpec};
//! use nalgebra::{DMatrix, DVector};
//!
//! let params = ModelParams {
//!     d: 1,
//!     lambda: DMatrix::from_element(1, 1, 1.0),
//!     gamma: DVector::from_element(1, 1.0),
//!     rho: Schedule::constant(DVector::zeros(1)),
//!     sigma: Schedule::constant(DMatrix::zeros(1, 1)),
//!     horizon: 1.0,
//! };
//! let sol = solve_penalized(&params, 3.0, &GridSpec::uniform(0.0, 1.0, 200)).unwrap();
//! let q = sol.eval(0.5).unwrap();
//! assert!((q.a[(0, 0)] - 2.0).abs() < 1e-7);
//! ```

pub mod bounds;
pub mod comparison;
pub mod error;
pub mod experiment;
pub mod model;
pub mod ode;
pub mod riccati;
pub mod trajectory;

// Keep the guide's code snippets compiling.
macro_rules! doc_chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        #[cfg(doctest)]
        pub struct $name;
    };
}

doc_chapter!(GuideModel, "../../../book/src/model.md");
doc_chapter!(GuideRiccati, "../../../book/src/riccati.md");
doc_chapter!(GuideBounds, "../../../book/src/bounds.md");
doc_chapter!(GuideTrajectory, "../../../book/src/trajectory.md");
doc_chapter!(GuideCli, "../../../book/src/cli.md");
