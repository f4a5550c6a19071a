//! Sargan and Hansen J overidentification statistics for `E[h(Z) U] = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{self, design, InstrumentFn};
use crate::linalg;

/// Statistics below this are reported as an exactly just-identified fit.
pub const ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OveridMethod {
    Sargan,
    HansenJ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OveridReport {
    pub method: OveridMethod,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub beta: Vec<f64>,
}

impl OveridReport {
    pub fn reject(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// The default instrument functions `(Z, Z², Z³)`.
pub fn default_instruments() -> InstrumentFn {
    InstrumentFn::Polynomial(3)
}

/// Upper-tail chi-square probability; 1 when `dof = 0`.
pub fn chi2_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    dist.sf(stat.max(0.0))
}

fn report(method: OveridMethod, stat: f64, dof: usize, beta: &DVector<f64>) -> OveridReport {
    let stat = if stat.abs() < ZERO_TOL || dof == 0 { 0.0 } else { stat.max(0.0) };
    let p_value = if stat == 0.0 { 1.0 } else { chi2_sf(stat, dof) };
    OveridReport { method, statistic: stat, dof, p_value, beta: beta.iter().copied().collect() }
}

fn matrices(ds: &Dataset, instruments: &InstrumentFn) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let x = design(ds.x(), true);
    let h = instruments.matrix(ds.z(), true)?;
    if h.ncols() < x.ncols() {
        return Err(Error::InvalidSpec(format!(
            "{} instrument functions for {} coefficients",
            h.ncols(),
            x.ncols()
        )));
    }
    Ok((x, h, DVector::from_column_slice(ds.y())))
}

/// `n · û'P_H û / û'û` with two-stage least squares residuals `û`
/// (`n R²` of `û` on `H`, uncentered).
pub fn sargan(ds: &Dataset, instruments: &InstrumentFn) -> Result<OveridReport> {
    let (x, h, y) = matrices(ds, instruments)?;
    let beta = estimators::tsls(&x, &h, &y)?;
    let u = &y - &x * &beta;
    let gram_inv = linalg::gram_inverse(&h, "instrument matrix")?;
    let hu = h.transpose() * &u;
    let explained = (hu.transpose() * gram_inv * hu)[(0, 0)];
    let stat = ds.n() as f64 * explained / u.norm_squared();
    Ok(report(OveridMethod::Sargan, stat, h.ncols() - x.ncols(), &beta))
}

/// `J = n ḡ' S⁻¹ ḡ` at the two-step GMM estimate, with `S = E_n[û₁² hh']`
/// from the first-step residuals.
pub fn hansen_j(ds: &Dataset, instruments: &InstrumentFn) -> Result<OveridReport> {
    let (x, h, y) = matrices(ds, instruments)?;
    let fit = estimators::fit_gmm2step(ds, instruments, true)?;
    let n = ds.n() as f64;
    let beta1 = fit.first_step_beta.as_ref().expect("two-step fit keeps its first step");
    let u1: Vec<f64> = (&y - &x * beta1).iter().copied().collect();
    let s = linalg::sandwich(&DMatrix::identity(h.ncols(), h.ncols()), &h, &u1) / n;
    let w = s.try_inverse().ok_or(Error::SingularWeight)?;
    let g = h.transpose() * DVector::from_vec(fit.residuals.clone()) / n;
    let stat = n * (g.transpose() * w * &g)[(0, 0)];
    Ok(report(OveridMethod::HansenJ, stat, h.ncols() - x.ncols(), &fit.beta))
}

pub fn run(method: OveridMethod, ds: &Dataset, instruments: &InstrumentFn) -> Result<OveridReport> {
    match method {
        OveridMethod::Sargan => sargan(ds, instruments),
        OveridMethod::HansenJ => hansen_j(ds, instruments),
    }
}
