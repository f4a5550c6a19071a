//! Intersection-bounds test of `H₀: sup_v θ(v) ≤ 0` with a precision-corrected
//! statistic, simulated critical values and adaptive inequality selection.
//!
//! For every grid point `v` (a conditioning value paired with a moment) the
//! test estimates `θ̂(v)` and its standard error `ŝ(v)`, simulates the
//! standardized process `Z*(v)`, and rejects at level `α` when
//! `max_v {θ̂(v) − k_{1−α} ŝ(v)} > 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::{self, ConditioningGrid, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{self, FitSummary};
use crate::linalg;
use crate::model::{self, Conditioning, FunctionalForm, ModelSpec, ParametricModel};
use crate::moments::{self, MomentSystem};
use crate::npreg::{self, CondMeanFit, LinearRep, NpregMethod, SE_FLOOR};
use crate::rng::RngSpec;

/// Smallest accepted number of simulated draws.
pub const MIN_DRAWS: usize = 200;
pub const DEFAULT_DRAWS: usize = 1000;

/// Everything `run_test` needs besides the moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub grid_count: usize,
    pub centiles: (f64, f64),
    pub alpha_levels: Vec<f64>,
    pub npreg: NpregMethod,
    pub draws: usize,
    pub rng: RngSpec,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self::from(&Config::default())
    }
}

impl From<&Config> for TestConfig {
    fn from(cfg: &Config) -> Self {
        Self {
            grid_count: cfg.grid.count,
            centiles: (cfg.grid.centiles[0], cfg.grid.centiles[1]),
            alpha_levels: cfg.test.alpha_levels.clone(),
            npreg: cfg.npreg.method(),
            draws: cfg.sim.multiplier_draws,
            rng: RngSpec::new(cfg.rng.seed),
        }
    }
}

/// `γ′ₙ = 1 − 0.1 / log n`.
pub fn gamma_prime(n: usize) -> f64 {
    1.0 - 0.1 / (n as f64).ln()
}

/// One element of `𝒱`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub coordinate: usize,
    pub moment: usize,
    pub v: f64,
    pub theta: f64,
    pub s: f64,
    /// Member of the selected set `V̂ₙ`.
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub alpha: f64,
    /// `k_{1−α}` simulated over `V̂ₙ`.
    pub k_crit: f64,
    /// The same quantile over all of `𝒱`.
    pub k_crit_full: f64,
    /// `θ̂_{1−α} = max_v {θ̂(v) − k_{1−α} ŝ(v)}`.
    pub theta_corrected: f64,
    /// Index into `grid` attaining `theta_corrected` (lowest on ties).
    pub argmax: usize,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: String,
    /// Basis order, bandwidth or cell count per (coordinate, moment) block.
    pub smoother: Vec<String>,
    pub draws: usize,
    pub seed: u64,
    pub stream: u64,
    pub n: usize,
    pub gamma_prime: f64,
    pub kappa: f64,
    pub requested_grid: usize,
    pub effective_grid: Vec<usize>,
    pub dropped_points: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub levels: Vec<LevelResult>,
    pub moment_labels: Vec<String>,
    pub coordinate_names: Vec<String>,
    /// `|V̂ₙ|` per moment.
    pub selected_set_size: Vec<usize>,
    pub grid: Vec<GridPoint>,
    pub diagnostics: Diagnostics,
}

impl TestReport {
    pub fn level(&self, alpha: f64) -> Option<&LevelResult> {
        self.levels.iter().find(|l| (l.alpha - alpha).abs() < 1e-12)
    }

    pub fn reject_at(&self, alpha: f64) -> Option<bool> {
        self.level(alpha).map(|l| l.reject)
    }

    pub fn theta_max(&self) -> f64 {
        self.grid.iter().map(|p| p.theta).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks the report-level invariants: reject iff `θ̂_{1−α} > 0`;
    /// as `α` decreases `k` does not fall and `θ̂_{1−α}` does not rise;
    /// `k(V̂ₙ) ≤ k(𝒱)`.
    pub fn invariants_hold(&self) -> bool {
        let mut by_alpha: Vec<&LevelResult> = self.levels.iter().collect();
        by_alpha.sort_by(|a, b| b.alpha.total_cmp(&a.alpha));
        self.levels.iter().all(|l| l.reject == (l.theta_corrected > 0.0) && l.k_crit <= l.k_crit_full)
            && by_alpha.windows(2).all(|w| {
                w[0].k_crit <= w[1].k_crit
                    && w[0].theta_corrected >= w[1].theta_corrected
                    && (!w[1].reject || w[0].reject)
            })
    }
}

/// Conditioning grids for every coordinate of `ms`: the configured quantile
/// grid, or the distinct values when estimating cell means.
pub fn grids_for(ms: &MomentSystem, cfg: &TestConfig) -> Result<Vec<ConditioningGrid>> {
    ms.conditioning
        .iter()
        .map(|c| match cfg.npreg {
            NpregMethod::CellMeans => {
                let mut points = data::sorted_copy(&c.values);
                points.dedup();
                if points.len() > npreg::MAX_CELLS {
                    return Err(Error::TooManyCells { cells: points.len(), limit: npreg::MAX_CELLS });
                }
                Ok(ConditioningGrid { requested: points.len(), points })
            }
            _ => data::conditioning_grid(&c.values, cfg.centiles.0, cfg.centiles.1, cfg.grid_count),
        })
        .collect()
}

fn fit_block(w: &[f64], z: &[f64], grid: &[f64], method: NpregMethod) -> Result<CondMeanFit> {
    match method {
        NpregMethod::Series { order } => {
            let order = order.unwrap_or_else(|| npreg::default_series_order(w.len()));
            let range = (grid[0], grid[grid.len() - 1]);
            npreg::fit_series(w, z, order, (range.1 > range.0).then_some(range))
        }
        NpregMethod::LocalLinear { bandwidth, kernel } => npreg::fit_local_linear(w, z, bandwidth, kernel),
        NpregMethod::CellMeans => npreg::fit_cell_means(w, z),
    }
}

/// How draws of the standardized process are produced.
enum Simulator {
    /// `Z* = A g` with `g ~ N(0, I)`: joint Gaussian series coefficients.
    Coefficients(DMatrix<f64>),
    /// `Z*(v) = Σ ℓᵢ(v) êᵢ ξᵢ / ŝ(v)` with Gaussian multipliers `ξ`.
    Multiplier { reps: Vec<LinearRep>, s: Vec<f64>, n: usize },
}

impl Simulator {
    fn draw(&self, rng: RngSpec, r: usize) -> Vec<f64> {
        let mut rng = rng.derive(r as u64).rng();
        match self {
            Simulator::Coefficients(a) => {
                let g = DVector::from_fn(a.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                (a * g).iter().copied().collect()
            }
            Simulator::Multiplier { reps, s, n } => {
                let xi: Vec<f64> = (0..*n).map(|_| rng.sample(StandardNormal)).collect();
                reps.iter().zip(s).map(|(rep, s)| rep.apply(&xi) / s).collect()
            }
        }
    }
}

struct Block {
    coordinate: usize,
    moment: usize,
    fit: CondMeanFit,
    /// Indices into the point list.
    points: Vec<usize>,
}

fn series_simulator(blocks: &[Block], grid: &[GridPoint], n: usize) -> DMatrix<f64> {
    let widths: Vec<usize> = blocks
        .iter()
        .map(|b| match &b.fit {
            CondMeanFit::Series(f) => f.coef.len(),
            _ => unreachable!("series simulator on a non-series fit"),
        })
        .collect();
    let total: usize = widths.iter().sum();
    // Row i of `m` stacks (B'B)⁻¹ bᵢ êᵢ over blocks, so m'm is the joint
    // sandwich covariance of all coefficient vectors.
    let mut m = DMatrix::<f64>::zeros(n, total);
    let mut offset = 0;
    for (b, &k) in blocks.iter().zip(&widths) {
        if let CondMeanFit::Series(f) = &b.fit {
            for i in 0..n {
                let e = f.residuals[i];
                for c in 0..k {
                    m[(i, offset + c)] = f.influence[(i, c)] * e;
                }
            }
        }
        offset += k;
    }
    let cov = m.transpose() * &m;
    let root = linalg::psd_sqrt(&cov);
    let mut proj = DMatrix::<f64>::zeros(grid.len(), total);
    let mut offset = 0;
    for (b, &k) in blocks.iter().zip(&widths) {
        if let CondMeanFit::Series(f) = &b.fit {
            for &p in &b.points {
                let basis = f.basis(grid[p].v);
                for c in 0..k {
                    proj[(p, offset + c)] = basis[c] / grid[p].s;
                }
            }
        }
        offset += k;
    }
    proj * root
}

fn max_over(values: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Runs the test on an already-built moment system.
pub fn run_test(ms: &MomentSystem, grids: &[ConditioningGrid], cfg: &TestConfig) -> Result<TestReport> {
    if cfg.draws < MIN_DRAWS {
        return Err(Error::SimulationBudgetTooSmall { draws: cfg.draws, min: MIN_DRAWS });
    }
    if cfg.alpha_levels.is_empty() || cfg.alpha_levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidConfig("alpha levels must lie in (0, 1)".into()));
    }
    if grids.len() != ms.conditioning.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} grids for {} conditioning variables",
            grids.len(),
            ms.conditioning.len()
        )));
    }
    if ms.moments.is_empty() || grids.iter().any(|g| g.points.is_empty()) {
        return Err(Error::EmptyGrid);
    }
    let n = ms.n();
    let mut grid = Vec::new();
    let mut blocks = Vec::new();
    let mut warnings = Vec::new();
    let mut smoother = Vec::new();
    let mut dropped = 0;
    for (c, (cond, g)) in ms.conditioning.iter().zip(grids).enumerate() {
        for (j, m) in ms.moments.iter().enumerate() {
            let fit = fit_block(&m.values, &cond.values, &g.points, cfg.npreg)?;
            smoother.push(format!("{}:{}:{}", cond.name, m.label, fit.describe()));
            let mut points = Vec::new();
            for &v in &g.points {
                match fit.evaluate(v) {
                    Ok((theta, s)) => {
                        points.push(grid.len());
                        grid.push(GridPoint { coordinate: c, moment: j, v, theta, s, selected: false });
                    }
                    Err(Error::EmptyWindow { at }) => {
                        dropped += 1;
                        let msg = format!("empty kernel window at {} = {at}; point dropped", cond.name);
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                    Err(e) => return Err(e),
                }
            }
            blocks.push(Block { coordinate: c, moment: j, fit, points });
        }
    }
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().all(|p| p.s <= SE_FLOOR * (1.0 + p.theta.abs()) * (1.0 + 1e-9)) {
        return Err(Error::DegenerateVariance);
    }

    let simulator = match cfg.npreg {
        NpregMethod::Series { .. } => Simulator::Coefficients(series_simulator(&blocks, &grid, n)),
        _ => {
            let mut reps = vec![LinearRep::default(); grid.len()];
            for b in &blocks {
                for &p in &b.points {
                    reps[p] = b.fit.linear_rep(grid[p].v)?;
                }
            }
            Simulator::Multiplier { reps, s: grid.iter().map(|p| p.s).collect(), n }
        }
    };
    let draws: Vec<Vec<f64>> = (0..cfg.draws).into_par_iter().map(|r| simulator.draw(cfg.rng, r)).collect();

    let mut sup_full: Vec<f64> = draws.iter().map(|d| max_over(d, |_| true)).collect();
    sup_full.sort_by(f64::total_cmp);
    let gp = gamma_prime(n);
    let kappa = data::quantile_type7(&sup_full, gp).max(0.0);
    let threshold = grid.iter().map(|p| p.theta - kappa * p.s).fold(f64::NEG_INFINITY, f64::max);
    for p in grid.iter_mut() {
        p.selected = p.theta >= threshold - 2.0 * kappa * p.s;
    }
    let mut sup_sel: Vec<f64> = draws.iter().map(|d| max_over(d, |i| grid[i].selected)).collect();
    sup_sel.sort_by(f64::total_cmp);

    let levels = cfg
        .alpha_levels
        .iter()
        .map(|&alpha| {
            let k_crit = data::quantile_type7(&sup_sel, 1.0 - alpha);
            let k_crit_full = data::quantile_type7(&sup_full, 1.0 - alpha);
            let (argmax, theta_corrected) = grid.iter().map(|p| p.theta - k_crit * p.s).enumerate().fold(
                (0, f64::NEG_INFINITY),
                |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) },
            );
            LevelResult { alpha, k_crit, k_crit_full, theta_corrected, argmax, reject: theta_corrected > 0.0 }
        })
        .collect();

    let selected_set_size =
        (0..ms.moments.len()).map(|j| grid.iter().filter(|p| p.moment == j && p.selected).count()).collect();
    let effective_grid = (0..ms.conditioning.len())
        .map(|c| blocks.iter().filter(|b| b.coordinate == c && b.moment == 0).map(|b| b.points.len()).sum())
        .collect();
    Ok(TestReport {
        levels,
        moment_labels: ms.moments.iter().map(|m| m.label.clone()).collect(),
        coordinate_names: ms.conditioning.iter().map(|c| c.name.clone()).collect(),
        selected_set_size,
        grid,
        diagnostics: Diagnostics {
            method: cfg.npreg.name().to_string(),
            smoother,
            draws: cfg.draws,
            seed: cfg.rng.seed,
            stream: cfg.rng.stream,
            n,
            gamma_prime: gp,
            kappa,
            requested_grid: cfg.grid_count,
            effective_grid,
            dropped_points: dropped,
            warnings,
        },
    })
}

/// Grids from `cfg`, then [`run_test`].
pub fn run_test_auto(ms: &MomentSystem, cfg: &TestConfig) -> Result<TestReport> {
    let grids = grids_for(ms, cfg)?;
    run_test(ms, &grids, cfg)
}

/// A test together with the first-step fit it was built on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTestReport {
    pub first_step: FitSummary,
    pub moments: String,
    pub report: TestReport,
}

/// First step, moment system and test for a parametric specification.
pub fn test_model(ds: &Dataset, spec: &ModelSpec, cfg: &TestConfig) -> Result<ModelTestReport> {
    let fit = model::fit_first_step(ds, spec)?;
    let ms = moments::build_for_spec(ds, &fit, spec)?;
    let report = run_test_auto(&ms, cfg)?;
    Ok(ModelTestReport { first_step: fit.summary(), moments: ms.describe(), report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedSet {
    pub alpha: f64,
    pub theta_grid: Vec<Vec<f64>>,
    /// `θ̂_{1−α}` at every grid point.
    pub statistics: Vec<f64>,
    /// Indices of the non-rejected grid points.
    pub accepted: Vec<usize>,
    pub empty: bool,
}

impl IdentifiedSet {
    pub fn accepted_points(&self) -> impl Iterator<Item = &[f64]> {
        self.accepted.iter().map(|&i| self.theta_grid[i].as_slice())
    }
}

/// Tests `E[Y − m(X, θ) | ·] = 0` at every parameter point and keeps the
/// points that are not rejected at level `alpha`. Point `i` uses the random
/// stream derived from key `i`.
pub fn identified_set(
    ds: &Dataset,
    model: &dyn ParametricModel,
    theta_grid: &[Vec<f64>],
    on: Conditioning,
    alpha: f64,
    cfg: &TestConfig,
) -> Result<IdentifiedSet> {
    if theta_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut point_cfg = cfg.clone();
    point_cfg.alpha_levels = vec![alpha];
    let statistics = theta_grid
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let ms = moments::build_parametric_grid(ds, model, theta, on)?;
            let mut c = point_cfg.clone();
            c.rng = cfg.rng.derive(i as u64);
            Ok(run_test_auto(&ms, &c)?.levels[0].theta_corrected)
        })
        .collect::<Result<Vec<f64>>>()?;
    let accepted: Vec<usize> = (0..theta_grid.len()).filter(|&i| statistics[i] <= 0.0).collect();
    Ok(IdentifiedSet {
        alpha,
        theta_grid: theta_grid.to_vec(),
        statistics,
        empty: accepted.is_empty(),
        accepted,
    })
}

/// [`identified_set`] for a spec whose form is `UserParametric`.
pub fn identified_set_for_spec(ds: &Dataset, spec: &ModelSpec, alpha: f64, cfg: &TestConfig) -> Result<IdentifiedSet> {
    spec.validate(ds)?;
    match &spec.form {
        FunctionalForm::UserParametric { model, theta_grid } => {
            identified_set(ds, model.as_ref(), theta_grid, spec.conditioning, alpha, cfg)
        }
        _ => Err(Error::InvalidSpec("identified-set search needs a user parametric form".into())),
    }
}

/// Result of testing the Box-Cox model over its whole `λ` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTest {
    /// Profile minimizer, where the search starts.
    pub lambda_hat: f64,
    /// `(λ, θ̂_{1−α})` at the largest level, in evaluation order.
    pub evaluated: Vec<(f64, f64)>,
    /// `(α, reject)`: rejection means every `λ` on the grid is rejected.
    pub levels: Vec<(f64, bool)>,
    /// First `λ` not rejected at the largest level.
    pub accepted_lambda: Option<f64>,
}

impl ProfileTest {
    pub fn reject_at(&self, alpha: f64) -> Option<bool> {
        self.levels.iter().find(|l| (l.0 - alpha).abs() < 1e-12).map(|l| l.1)
    }
}

/// Tests the Box-Cox model as a set: for each `λ` on the grid the
/// coefficients are re-estimated (IV on `(1, Z)` or least squares) and the
/// exogeneity moments are tested; the model is rejected at level `α` only
/// when every `λ` is. The point at grid index `i` uses the stream derived
/// from key `i`, and the search stops at the first `λ` accepted at the
/// largest level (smaller levels use larger critical values from the same
/// draws, so they accept it too).
pub fn profile_boxcox_test(ds: &Dataset, lambda_grid: &[f64], on: Conditioning, cfg: &TestConfig) -> Result<ProfileTest> {
    if cfg.alpha_levels.is_empty() {
        return Err(Error::InvalidConfig("no significance level".into()));
    }
    let start = estimators::fit_boxcox(ds, lambda_grid, on == Conditioning::OnZ)?.lambda;
    let mut order: Vec<usize> = (0..lambda_grid.len()).collect();
    order.sort_by(|&a, &b| (lambda_grid[a] - start).abs().total_cmp(&(lambda_grid[b] - start).abs()).then(a.cmp(&b)));
    let top = (0..cfg.alpha_levels.len())
        .max_by(|&a, &b| cfg.alpha_levels[a].total_cmp(&cfg.alpha_levels[b]))
        .expect("non-empty");
    let mut rejected_everywhere = vec![true; cfg.alpha_levels.len()];
    let mut evaluated = Vec::new();
    let mut accepted_lambda = None;
    let x = ds.x_col(0);
    for i in order {
        let lambda = lambda_grid[i];
        let xl: Vec<f64> = x.iter().map(|&v| estimators::box_cox(v, lambda)).collect();
        let z = if on == Conditioning::OnZ { ds.z_col(0) } else { xl.clone() };
        let transformed = Dataset::from_columns(ds.y().to_vec(), xl, z)?;
        let fit = match on {
            Conditioning::OnZ => estimators::fit_iv(&transformed, true)?,
            Conditioning::OnX => estimators::fit_ols(&transformed, true)?,
        };
        let ms = moments::exogeneity_from_residuals(ds, &fit.residuals, on)?;
        let mut c = cfg.clone();
        c.rng = cfg.rng.derive(i as u64);
        let report = run_test_auto(&ms, &c)?;
        for (flag, level) in rejected_everywhere.iter_mut().zip(&report.levels) {
            *flag &= level.reject;
        }
        evaluated.push((lambda, report.levels[top].theta_corrected));
        if !report.levels[top].reject {
            accepted_lambda = Some(lambda);
            break;
        }
    }
    Ok(ProfileTest {
        lambda_hat: start,
        evaluated,
        levels: cfg.alpha_levels.iter().copied().zip(rejected_everywhere).collect(),
        accepted_lambda,
    })
}
