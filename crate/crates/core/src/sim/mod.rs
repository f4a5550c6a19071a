//! Monte Carlo size and power studies.

pub mod dgp;
pub mod presets;
pub mod study;

pub use dgp::{generate, DgpFamily, DgpSpec};
pub use study::{power_curve, run_study, run_study_with, CellResult, CurveRow, Decider, StudyResult, TestMethod};
