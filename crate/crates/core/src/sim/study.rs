//! Replication engine: generate, test, count rejections.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate, DgpFamily, DgpSpec};
use crate::clr::{profile_boxcox_test, test_model, TestConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{box_cox, default_lambda_grid, InstrumentFn};
use crate::model::Conditioning;
use crate::overid::{self, OveridMethod};
use crate::rng::RngSpec;

pub const MIN_REPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    /// The conditional moment inequality test of the design's natural spec.
    Cmi,
    Sargan,
    HansenJ,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Cmi => "cmi",
            TestMethod::Sargan => "sargan",
            TestMethod::HansenJ => "hansen-j",
        }
    }
}

impl std::str::FromStr for TestMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmi" => Ok(TestMethod::Cmi),
            "sargan" => Ok(TestMethod::Sargan),
            "hansen" | "hansen-j" => Ok(TestMethod::HansenJ),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}` (cmi | sargan | hansen)"))),
        }
    }
}

/// Anything that turns a dataset into one reject/accept decision per level.
pub trait Decider: Sync {
    fn name(&self) -> String;
    fn decide(&self, spec: &DgpSpec, ds: &Dataset, alphas: &[f64], rng: RngSpec) -> Result<Vec<bool>>;
}

/// A [`TestMethod`] with the settings it runs under.
#[derive(Debug, Clone)]
pub struct MethodRunner {
    pub method: TestMethod,
    pub test: TestConfig,
    /// Degree of the polynomial instrument functions of the benchmarks.
    pub instrument_degree: usize,
}

/// Overidentification benchmarks of Box-Cox designs use the true `λ`.
fn overid_dataset(spec: &DgpSpec, ds: &Dataset) -> Result<Dataset> {
    let lambda = match spec.family {
        DgpFamily::BoxCoxIvNull { lambda } | DgpFamily::BoxCoxOlsNull { lambda } => lambda,
        DgpFamily::BoxCoxPower { .. } => 0.0,
        _ => return Ok(ds.clone()),
    };
    let x: Vec<f64> = ds.x_col(0).iter().map(|&v| box_cox(v, lambda)).collect();
    let z = if matches!(spec.family, DgpFamily::BoxCoxOlsNull { .. }) { x.clone() } else { ds.z_col(0) };
    Dataset::from_columns(ds.y().to_vec(), x, z)
}

impl Decider for MethodRunner {
    fn name(&self) -> String {
        self.method.name().to_string()
    }

    fn decide(&self, spec: &DgpSpec, ds: &Dataset, alphas: &[f64], rng: RngSpec) -> Result<Vec<bool>> {
        match self.method {
            TestMethod::Cmi => {
                let mut cfg = self.test.clone();
                cfg.alpha_levels = alphas.to_vec();
                cfg.rng = rng;
                if spec.tests_as_set() {
                    let r = profile_boxcox_test(ds, &default_lambda_grid(), Conditioning::OnZ, &cfg)?;
                    return Ok(r.levels.iter().map(|l| l.1).collect());
                }
                let r = test_model(ds, &spec.natural_spec(), &cfg)?.report;
                Ok(r.levels.iter().map(|l| l.reject).collect())
            }
            TestMethod::Sargan | TestMethod::HansenJ => {
                let m = if self.method == TestMethod::Sargan { OveridMethod::Sargan } else { OveridMethod::HansenJ };
                let data = overid_dataset(spec, ds)?;
                let r = overid::run(m, &data, &InstrumentFn::Polynomial(self.instrument_degree))?;
                Ok(alphas.iter().map(|&a| r.reject(a)).collect())
            }
        }
    }
}

/// Rejection counts for one `(design, method, α)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dgp: String,
    pub spec: DgpSpec,
    pub method: String,
    pub alpha: f64,
    pub reps: usize,
    pub failures: usize,
    pub rejections: usize,
    /// Rejections over completed replications.
    pub rate: f64,
    /// `sqrt(r(1 − r) / completed)`.
    pub mc_se: f64,
}

impl CellResult {
    pub fn completed(&self) -> usize {
        self.reps - self.failures
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub seconds: f64,
    pub seconds_per_replication: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub cells: Vec<CellResult>,
    pub reps: usize,
    pub alpha_levels: Vec<f64>,
    pub seed: RngSpec,
    /// First error message per failing `(design, method)`, for diagnosis.
    pub failure_examples: Vec<String>,
    /// Wall-clock statistics; not part of the result tables.
    pub runtime: Runtime,
}

impl StudyResult {
    pub fn cell(&self, spec: &DgpSpec, method: &str, alpha: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.spec == *spec && c.method == method && (c.alpha - alpha).abs() < 1e-12)
    }

    pub fn rate(&self, spec: &DgpSpec, method: &str, alpha: f64) -> Option<f64> {
        self.cell(spec, method, alpha).map(|c| c.rate)
    }

    /// One row per cell: `dgp,n,method,alpha,reps,failures,rejections,rate,mc_se`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dgp", "n", "method", "alpha", "reps", "failures", "rejections", "rate", "mc_se"])?;
        for c in &self.cells {
            w.write_record([
                c.dgp.clone(),
                c.spec.n.to_string(),
                c.method.clone(),
                c.alpha.to_string(),
                c.reps.to_string(),
                c.failures.to_string(),
                c.rejections.to_string(),
                c.rate.to_string(),
                c.mc_se.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Data for replication `rep` of design `d` come from `rng.derive(d).derive(rep)`;
/// the test inside it uses stream 1 of the same seed.
fn replication_rng(rng: RngSpec, design: usize, rep: usize) -> RngSpec {
    rng.derive(design as u64).derive(rep as u64)
}

/// [`run_study`] for arbitrary deciders and any positive number of
/// replications.
pub fn run_study_with(
    specs: &[DgpSpec],
    deciders: &[&dyn Decider],
    reps: usize,
    alpha_levels: &[f64],
    rng: RngSpec,
) -> Result<StudyResult> {
    if reps == 0 || specs.is_empty() || deciders.is_empty() || alpha_levels.is_empty() {
        return Err(Error::InvalidConfig("a study needs designs, methods, levels and at least one replication".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let start = Instant::now();
    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|d| (0..reps).map(move |r| (d, r))).collect();
    // outcomes[job][method] = decisions per level, or the error text.
    let outcomes: Vec<Vec<std::result::Result<Vec<bool>, String>>> = jobs
        .par_iter()
        .map(|&(d, r)| {
            let base = replication_rng(rng, d, r);
            match generate(&specs[d], base) {
                Ok(ds) => deciders
                    .iter()
                    .map(|m| m.decide(&specs[d], &ds, alpha_levels, base.with_stream(1)).map_err(|e| e.to_string()))
                    .collect(),
                Err(e) => vec![Err(e.to_string()); deciders.len()],
            }
        })
        .collect();
    let mut cells = Vec::new();
    let mut failure_examples = Vec::new();
    for (d, spec) in specs.iter().enumerate() {
        let rows = &outcomes[d * reps..(d + 1) * reps];
        for (m, decider) in deciders.iter().enumerate() {
            let failures = rows.iter().filter(|o| o[m].is_err()).count();
            if let Some(Err(e)) = rows.iter().map(|o| &o[m]).find(|o| o.is_err()) {
                failure_examples.push(format!("{} / {}: {e}", spec.label(), decider.name()));
            }
            let completed = reps - failures;
            for (a, &alpha) in alpha_levels.iter().enumerate() {
                let rejections = rows.iter().filter(|o| matches!(&o[m], Ok(v) if v[a])).count();
                let rate = if completed > 0 { rejections as f64 / completed as f64 } else { 0.0 };
                let mc_se = if completed > 0 { (rate * (1.0 - rate) / completed as f64).sqrt() } else { 0.0 };
                cells.push(CellResult {
                    dgp: spec.label(),
                    spec: *spec,
                    method: decider.name(),
                    alpha,
                    reps,
                    failures,
                    rejections,
                    rate,
                    mc_se,
                });
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(StudyResult {
        cells,
        reps,
        alpha_levels: alpha_levels.to_vec(),
        seed: rng,
        failure_examples,
        runtime: Runtime { seconds, seconds_per_replication: seconds / jobs.len() as f64 },
    })
}

/// Runs every method on `reps` datasets from each design. Results do not
/// depend on the number of worker threads.
pub fn run_study(specs: &[DgpSpec], methods: &[TestMethod], reps: usize, test: &TestConfig) -> Result<StudyResult> {
    if reps < MIN_REPS {
        return Err(Error::InvalidConfig(format!("{reps} replications; a study needs at least {MIN_REPS}")));
    }
    let runners: Vec<MethodRunner> =
        methods.iter().map(|&method| MethodRunner { method, test: test.clone(), instrument_degree: 3 }).collect();
    let deciders: Vec<&dyn Decider> = runners.iter().map(|r| r as &dyn Decider).collect();
    run_study_with(specs, &deciders, reps, &test.alpha_levels, test.rng)
}

/// One point of a power curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub method: String,
    pub alpha: f64,
    pub rate: f64,
    pub mc_se: f64,
}

/// Rejection rates of one design family across sample sizes.
pub fn power_curve(
    family: DgpFamily,
    n_list: &[usize],
    methods: &[TestMethod],
    reps: usize,
    test: &TestConfig,
) -> Result<Vec<CurveRow>> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("sample sizes must increase".into()));
    }
    let specs: Vec<DgpSpec> = n_list.iter().map(|&n| DgpSpec::new(family, n)).collect();
    let runners: Vec<MethodRunner> =
        methods.iter().map(|&method| MethodRunner { method, test: test.clone(), instrument_degree: 3 }).collect();
    let deciders: Vec<&dyn Decider> = runners.iter().map(|r| r as &dyn Decider).collect();
    let study = run_study_with(&specs, &deciders, reps, &test.alpha_levels, test.rng)?;
    Ok(study
        .cells
        .into_iter()
        .map(|c| CurveRow { n: c.spec.n, method: c.method, alpha: c.alpha, rate: c.rate, mc_se: c.mc_se })
        .collect())
}

pub fn write_curve_csv(rows: &[CurveRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "method", "alpha", "rate", "mc_se"])?;
    for r in rows {
        w.write_record([r.n.to_string(), r.method.clone(), r.alpha.to_string(), r.rate.to_string(), r.mc_se.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
