//! Lexicographic directional derivatives, nonsmooth forward sensitivities and
//! rank-based identifiability/observability probing for ODE models.
//!
//! The crate is layered bottom-up:
//!
//! * [`ld`]: LD-derivative arithmetic (`fsign`, `slmax`, `lshift`, elemental
//!   rules, L-derivative extraction, Taylor-like approximation).
//! * [`model`]: expression trees, model specifications, built-in models.
//! * [`sensint`]: RK4 integration of a model together with its sensitivity system.
//! * [`lserc`]: sensitivity rank matrices, probes, and the three-stage search.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod ld;
pub mod lserc;
pub mod model;
pub mod par;
pub mod sensint;

pub use error::{Error, Result};
pub use ld::{DirectionsMatrix, LDerivative, LdScalar, LdVector};
pub use lserc::{algorithm1, probe, AlgoConfig, AlgoReport, LSercMatrix, ProbeResult, Summary};
pub use model::{builtin, parse_model, ModelSpec};
pub use sensint::{integrate_reference, integrate_sensitivity, Grid, Mode, SensitivityTrajectory};
