//! First-step parametric estimators: OLS, just-identified IV, two-step GMM and
//! Box-Cox profile least squares.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// First-stage F below which a relevance warning is attached to the fit.
pub const RELEVANCE_F_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    Ols,
    Iv,
    Gmm2Step,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMethod::Ols => "ols",
            FitMethod::Iv => "iv",
            FitMethod::Gmm2Step => "gmm2step",
        })
    }
}

/// Reporting view shared by all first-step fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub method: String,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub notes: Vec<(String, String)>,
}

/// Anything that leaves behind a residual vector `Û`.
pub trait ResidualFit {
    fn residuals(&self) -> &[f64];
    fn summary(&self) -> FitSummary;
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub method: FitMethod,
    pub intercept: bool,
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    /// Heteroskedasticity-robust (sandwich) covariance.
    pub vcov: DMatrix<f64>,
    /// Classical covariance assuming `E[U² | Z] = σ²`.
    pub vcov_homoskedastic: DMatrix<f64>,
    pub residuals: Vec<f64>,
    /// `E_n[Û²]`.
    pub sigma2_hat: f64,
    /// First-step (2SLS) coefficients of a two-step GMM fit.
    pub first_step_beta: Option<DVector<f64>>,
    /// First-stage F statistic per regressor (IV and GMM only).
    pub first_stage_f: Vec<f64>,
    pub warnings: Vec<String>,
}

impl LinearFit {
    pub fn std_errors(&self, robust: bool) -> Vec<f64> {
        let v = if robust { &self.vcov } else { &self.vcov_homoskedastic };
        (0..v.nrows()).map(|i| v[(i, i)].max(0.0).sqrt()).collect()
    }
}

impl ResidualFit for LinearFit {
    fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    fn summary(&self) -> FitSummary {
        let mut notes = vec![("sigma2_hat".to_string(), self.sigma2_hat.to_string())];
        for (name, f) in self.names.iter().skip(usize::from(self.intercept)).zip(&self.first_stage_f) {
            notes.push((format!("first_stage_f[{name}]"), f.to_string()));
        }
        notes.extend(self.warnings.iter().map(|w| ("warning".to_string(), w.clone())));
        FitSummary {
            method: self.method.to_string(),
            names: self.names.clone(),
            coefficients: self.beta.iter().copied().collect(),
            std_errors: self.std_errors(true),
            notes,
        }
    }
}

/// Maps an instrument row `z` to the instrument functions `h(z)`.
#[derive(Clone)]
pub enum InstrumentFn {
    /// The instrument columns themselves.
    Identity,
    /// `(z, z², …, z^degree)` for every instrument column.
    Polynomial(usize),
    Custom(Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>),
}

impl fmt::Debug for InstrumentFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstrumentFn::Identity => f.write_str("Identity"),
            InstrumentFn::Polynomial(d) => write!(f, "Polynomial({d})"),
            InstrumentFn::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl InstrumentFn {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        match self {
            InstrumentFn::Identity => z.to_vec(),
            InstrumentFn::Polynomial(d) => {
                let mut out = Vec::with_capacity(z.len() * d);
                for &v in z {
                    let mut p = v;
                    for _ in 0..*d {
                        out.push(p);
                        p *= v;
                    }
                }
                out
            }
            InstrumentFn::Custom(f) => f(z),
        }
    }

    /// Instrument matrix `[1?, h(Z_i)']` with one row per observation.
    pub fn matrix(&self, z: &DMatrix<f64>, intercept: bool) -> Result<DMatrix<f64>> {
        let n = z.nrows();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let zi: Vec<f64> = z.row(i).iter().copied().collect();
                self.apply(&zi)
            })
            .collect();
        let q = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::DimensionMismatch("instrument function returned rows of different lengths".into()));
        }
        let off = usize::from(intercept);
        Ok(DMatrix::from_fn(n, q + off, |i, j| if j < off { 1.0 } else { rows[i][j - off] }))
    }
}

/// `[1, X]` or `X`.
pub fn design(block: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if !intercept {
        return block.clone();
    }
    let n = block.nrows();
    DMatrix::from_fn(n, block.ncols() + 1, |i, j| if j == 0 { 1.0 } else { block[(i, j - 1)] })
}

fn coef_names(ds: &Dataset, intercept: bool) -> Vec<String> {
    let mut names = Vec::new();
    if intercept {
        names.push("(intercept)".to_string());
    }
    names.extend(ds.names().x.iter().cloned());
    names
}

fn residuals_of(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (y - x * beta).iter().copied().collect()
}

fn mean_sq(v: &[f64]) -> f64 {
    v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64
}

/// Ordinary least squares with sandwich covariance.
pub fn fit_ols(ds: &Dataset, intercept: bool) -> Result<LinearFit> {
    let x = design(ds.x(), intercept);
    let y = DVector::from_column_slice(ds.y());
    let beta = linalg::lstsq(&x, &y, "OLS design")?;
    let residuals = residuals_of(&x, &y, &beta);
    let gram_inv = linalg::gram_inverse(&x, "OLS design")?;
    let sigma2_hat = mean_sq(&residuals);
    Ok(LinearFit {
        method: FitMethod::Ols,
        intercept,
        names: coef_names(ds, intercept),
        vcov: linalg::sandwich(&gram_inv, &x, &residuals),
        vcov_homoskedastic: &gram_inv * sigma2_hat,
        beta,
        residuals,
        sigma2_hat,
        first_step_beta: None,
        first_stage_f: Vec::new(),
        warnings: Vec::new(),
    })
}

/// F statistic of the instruments in a regression of each regressor on `[1, Z]`.
fn first_stage_f(ds: &Dataset) -> Vec<f64> {
    let n = ds.n() as f64;
    let kz = ds.kz() as f64;
    let zd = design(ds.z(), true);
    (0..ds.kx())
        .map(|j| {
            let xj = DVector::from_vec(ds.x_col(j));
            let mean = xj.mean();
            let ssr_r: f64 = xj.iter().map(|v| (v - mean).powi(2)).sum();
            let ssr_u = match linalg::lstsq(&zd, &xj, "first stage") {
                Ok(g) => (&xj - &zd * g).norm_squared(),
                Err(_) => return f64::NAN,
            };
            if ssr_u <= f64::EPSILON * ssr_r {
                return f64::INFINITY;
            }
            ((ssr_r - ssr_u) / kz) / (ssr_u / (n - kz - 1.0))
        })
        .collect()
}

fn relevance_warnings(names: &[String], f: &[f64]) -> Vec<String> {
    names
        .iter()
        .zip(f)
        .filter(|(_, &f)| f < RELEVANCE_F_THRESHOLD)
        .map(|(name, f)| {
            let msg = format!("weak first stage for `{name}`: F = {f:.2} < {RELEVANCE_F_THRESHOLD}");
            log::warn!("{msg}");
            msg
        })
        .collect()
}

/// Just-identified IV: `β = E_n[Z X']⁻¹ E_n[Z Y]` with `Z = [1, Z]` when
/// `intercept` is set.
pub fn fit_iv(ds: &Dataset, intercept: bool) -> Result<LinearFit> {
    if ds.kz() != ds.kx() {
        return Err(Error::DimensionMismatch(format!(
            "just-identified IV needs k_z = k_x, got k_z = {} and k_x = {}",
            ds.kz(),
            ds.kx()
        )));
    }
    let x = design(ds.x(), intercept);
    let z = design(ds.z(), intercept);
    let y = DVector::from_column_slice(ds.y());
    let zx = z.transpose() * &x;
    linalg::check_rank(&zx, "E_n[ZX']")?;
    let lu = zx.clone().lu();
    let beta = lu
        .solve(&(z.transpose() * &y))
        .ok_or_else(|| Error::RankDeficient { context: "E_n[ZX']".into(), min_sv: 0.0 })?;
    let residuals = residuals_of(&x, &y, &beta);
    let zx_inv = linalg::inverse(&zx, "E_n[ZX']")?;
    let sigma2_hat = mean_sq(&residuals);
    let zz = z.transpose() * &z;
    let vcov_homoskedastic = &zx_inv * zz * zx_inv.transpose() * sigma2_hat;
    let f = first_stage_f(ds);
    let warnings = relevance_warnings(&ds.names().x, &f);
    Ok(LinearFit {
        method: FitMethod::Iv,
        intercept,
        names: coef_names(ds, intercept),
        vcov: linalg::sandwich(&zx_inv, &z, &residuals),
        vcov_homoskedastic,
        beta,
        residuals,
        sigma2_hat,
        first_step_beta: None,
        first_stage_f: f,
        warnings,
    })
}

/// Two-stage least squares coefficients with instrument matrix `h`.
pub(crate) fn tsls(x: &DMatrix<f64>, h: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let gram_inv = linalg::gram_inverse(h, "instrument matrix")?;
    let proj = h * (&gram_inv * (h.transpose() * x));
    linalg::lstsq(&proj, y, "projected design")
}

/// Two-step efficient GMM on `E[h(Z) U] = 0`. Step one uses the weight
/// `(E_n[hh'])⁻¹`; step two uses the inverse of `E_n[Û₁² hh']`.
pub fn fit_gmm2step(ds: &Dataset, instruments: &InstrumentFn, intercept: bool) -> Result<LinearFit> {
    let x = design(ds.x(), intercept);
    let h = instruments.matrix(ds.z(), intercept)?;
    if h.ncols() < x.ncols() {
        return Err(Error::InvalidSpec(format!(
            "{} instrument functions for {} coefficients",
            h.ncols(),
            x.ncols()
        )));
    }
    let n = ds.n() as f64;
    let y = DVector::from_column_slice(ds.y());
    let beta1 = tsls(&x, &h, &y)?;
    let u1 = residuals_of(&x, &y, &beta1);
    let s = linalg::sandwich(&DMatrix::identity(h.ncols(), h.ncols()), &h, &u1) / n;
    linalg::check_rank(&s, "GMM weight").map_err(|_| Error::SingularWeight)?;
    let w = s.clone().try_inverse().ok_or(Error::SingularWeight)?;
    let g = h.transpose() * &x / n;
    let hy = h.transpose() * &y / n;
    let a = g.transpose() * &w * &g;
    let a_inv = linalg::inverse(&a, "G'WG")?;
    let beta = &a_inv * (g.transpose() * &w * hy);
    let residuals = residuals_of(&x, &y, &beta);
    let sigma2_hat = mean_sq(&residuals);
    let hh_inv = linalg::gram_inverse(&h, "instrument matrix")? * n;
    let a_h = linalg::inverse(&(g.transpose() * &hh_inv * &g), "G'(H'H)⁻¹G")?;
    let f = first_stage_f(ds);
    let warnings = relevance_warnings(&ds.names().x, &f);
    Ok(LinearFit {
        method: FitMethod::Gmm2Step,
        intercept,
        names: coef_names(ds, intercept),
        vcov: a_inv / n,
        vcov_homoskedastic: a_h * (sigma2_hat / n),
        beta,
        residuals,
        sigma2_hat,
        first_step_beta: Some(beta1),
        first_stage_f: f,
        warnings,
    })
}

/// `x^{(λ)} = (x^λ − 1)/λ`, or `log x` at `λ = 0`.
pub fn box_cox(x: f64, lambda: f64) -> f64 {
    if lambda.abs() < 1e-12 {
        x.ln()
    } else {
        (x.powf(lambda) - 1.0) / lambda
    }
}

/// 81 points on `[-2, 2]` with step 0.05.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=80).map(|i| (i as f64 - 40.0) / 20.0).collect()
}

#[derive(Debug, Clone)]
pub struct BoxCoxFit {
    pub lambda: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub residuals: Vec<f64>,
    /// `(λ, criterion)` over the grid: SSE for least squares, the 2SLS
    /// objective `Û'P_H Û` for the instrumented fit.
    pub profile_sse_curve: Vec<(f64, f64)>,
    pub use_iv: bool,
    pub inner: LinearFit,
}

impl BoxCoxFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.beta0 + self.beta1 * box_cox(x, self.lambda)
    }
}

impl ResidualFit for BoxCoxFit {
    fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    fn summary(&self) -> FitSummary {
        let mut s = self.inner.summary();
        s.method = format!("box-cox/{}", if self.use_iv { "iv" } else { "ols" });
        s.names.push("lambda".into());
        s.coefficients.push(self.lambda);
        s.std_errors.push(f64::NAN);
        s
    }
}

fn transformed(ds: &Dataset, lambda: f64) -> Result<Dataset> {
    let x: Vec<f64> = ds.x_col(0).iter().map(|&v| box_cox(v, lambda)).collect();
    Dataset::new(
        ds.y().to_vec(),
        DMatrix::from_vec(ds.n(), 1, x),
        ds.z().clone(),
        ds.names().clone(),
    )
}

/// Box-Cox regression `Y = β₀ + β₁ X^{(λ)} + U` profiled over `lambda_grid`.
///
/// Without instruments each λ gets an OLS fit scored by its SSE. With
/// instruments λ is scored by the 2SLS objective using `(1, Z, Z²)`, and the
/// reported coefficients come from the just-identified IV fit with `(1, Z)` at
/// the selected λ. Ties go to the lowest grid index.
pub fn fit_boxcox(ds: &Dataset, lambda_grid: &[f64], use_iv: bool) -> Result<BoxCoxFit> {
    if ds.kx() != 1 {
        return Err(Error::DimensionMismatch("Box-Cox fit needs a scalar regressor".into()));
    }
    if lambda_grid.is_empty() || lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("lambda grid must be non-empty and strictly increasing".into()));
    }
    if let Some(i) = ds.x().iter().position(|&v| v <= 0.0) {
        return Err(Error::DomainError(format!("Box-Cox needs X > 0; row {} has {}", i + 1, ds.x()[i])));
    }
    let y = DVector::from_column_slice(ds.y());
    let h = if use_iv { Some(InstrumentFn::Polynomial(2).matrix(ds.z(), true)?) } else { None };
    let mut curve = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let t = transformed(ds, lambda)?;
        let x = design(t.x(), true);
        let crit = match &h {
            None => {
                let b = linalg::lstsq(&x, &y, "Box-Cox design")?;
                (&y - &x * b).norm_squared()
            }
            Some(h) => {
                let b = tsls(&x, h, &y)?;
                let u = &y - &x * b;
                let gram_inv = linalg::gram_inverse(h, "instrument matrix")?;
                let hu = h.transpose() * &u;
                (hu.transpose() * gram_inv * hu)[(0, 0)]
            }
        };
        curve.push((lambda, crit));
    }
    let (best, _) = curve
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bc), (i, &(_, c))| if c < bc { (i, c) } else { (bi, bc) });
    let lambda = curve[best].0;
    let t = transformed(ds, lambda)?;
    let inner = if use_iv {
        let zt = Dataset::new(t.y().to_vec(), t.x().clone(), DMatrix::from_fn(ds.n(), 1, |i, _| ds.z()[(i, 0)]), {
            let mut names = t.names().clone();
            names.z.truncate(1);
            names
        })?;
        fit_iv(&zt, true)?
    } else {
        fit_ols(&t, true)?
    };
    let (beta0, beta1) = (inner.beta[0], inner.beta[1]);
    let residuals = ds
        .y()
        .iter()
        .zip(ds.x().iter())
        .map(|(&yi, &xi)| yi - beta0 - beta1 * box_cox(xi, lambda))
        .collect();
    Ok(BoxCoxFit { lambda, beta0, beta1, residuals, profile_sse_curve: curve, use_iv, inner })
}
