//! Two-sample density ratio model (DRM) estimation with empirical likelihood.
//!
//! The target population G₁ is linked to a base population G₀ through an
//! exponential tilt, `dG₁(x) = exp{θᵀq(x)} dG₀(x)`, with a user-chosen basis
//! q(x) and an unknown θ. Pooling a large base sample with a small target
//! sample lets distribution and quantile estimates for G₁ borrow strength
//! from the base sample.
//!
//! ```
//! use drm_el::{fit_mele, estimators, BasisSpec, SolverOptions, TwoSampleData};
//!
//! let data = TwoSampleData::new(
//!     vec![0.1, 0.4, 0.9, 1.3, 1.8, 2.2, 2.9],
//!     vec![0.6, 1.5, 2.4, 3.1],
//! )?;
//! let spec = BasisSpec::linear();
//! let fit = fit_mele(&data, &spec, &SolverOptions::default())?;
//! let g1 = estimators::estimate_g1(&fit, &data)?;
//! let median = estimators::drm_quantile(&g1, 0.5)?;
//! assert!(g1.eval(median) >= 0.5);
//! # Ok::<(), drm_el::Error>(())
//! ```
//!
//! The guide under `book/` walks through the model, the estimators and the
//! simulation tools; its code snippets run as doctests of this crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod estimators;
pub mod fit;
pub mod nonparametric;
pub mod normal;
pub mod parametric;
pub mod pipeline;
pub mod sim;

pub use basis::{BasisKind, BasisSpec, Transform};
pub use error::{Error, Result};
pub use estimators::{Method, QuantileEstimate, WeightedCdf};
pub use fit::{dual_log_el, fit_mele, hessian, score, DrmFit, SolverOptions, TwoSampleData};
pub use parametric::{FamilyTag, ParametricFamily};
pub use sim::{Generator, RunOptions, Scenario, SimulationTable};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
