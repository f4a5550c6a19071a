//! Specification tests for parametric separable models.
//!
//! The testable implications of instrument exogeneity, regressor exogeneity
//! and homoskedasticity are conditional moment equalities. Each equality is
//! split into two inequalities and tested jointly over a grid of conditioning
//! values with a precision-corrected supremum statistic ([`clr`]). Classical
//! overidentification statistics ([`overid`]), a nonparametric control
//! function estimator of marginal treatment effects ([`mte`]) and a Monte
//! Carlo harness ([`sim`]) complete the toolkit.

pub mod clr;
pub mod config;
pub mod data;
pub mod error;
pub mod estimators;
pub mod iso;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod mte;
pub mod npreg;
pub mod overid;
pub mod rng;
pub mod sim;

pub use clr::{run_test, test_model, IdentifiedSet, TestConfig, TestReport};
pub use config::Config;
pub use data::{load_csv, Dataset};
pub use error::{Error, Result};
pub use model::{Assumption, Conditioning, ModelSpec};
pub use rng::RngSpec;
