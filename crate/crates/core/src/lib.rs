//! Variable selection in Gaussian linear regression by sequential multiple
//! Fisher tests.

pub mod api;
pub mod baselines;
pub mod calibrate;
pub mod design;
pub mod dists;
pub mod error;
pub mod harness;
pub mod lasso;
pub mod linalg;
pub mod ols;
pub mod ordering;
pub mod plan;
pub mod rng;
pub mod select_ordered;
pub mod select_twostep;
pub mod theory;

pub use error::{Error, Result};
