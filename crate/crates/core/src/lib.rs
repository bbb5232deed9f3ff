//! Grouped panel regression with group-specific structural breaks.
//!
//! Units fall into a small number of latent groups; each group's
//! coefficient path is piecewise constant in time with its own break
//! dates. Groups and breaks are estimated jointly by alternating a
//! k-means style assignment step with an adaptive group fused lasso.

pub mod agfl;
pub mod design;
pub mod error;
pub mod gagfl;
pub mod gfe;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{
    BreakStructure, CoefRole, CoefficientPath, GroupAssignment, GroupRegimes, Mode, ModelSpec,
    Panel,
};
