//! Nonparametric control-function estimation for a continuous treatment:
//! propensity function, plug-in control `V̂ = P̂(Z, X)`, conditional outcome
//! surfaces on `(X, V̂)`, marginal treatment effects and the average
//! structural function (point or bounds).

pub mod control;
pub mod diagnostics;
pub mod propensity;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use control::{fit_control_function, ControlConfig, ControlFunctionFit};
pub use diagnostics::{condition1_diagnostic, quantile_roundtrip_check, Condition1Config, Condition1Report, QuantileRule};
pub use propensity::{fit_propensity, uniformity_diagnostic, PropensityConfig, PropensityFit, PropensityMethod};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::design;
use crate::linalg;

/// Full support is declared when `[p̲ₓ, p̄ₓ] ⊇ [FULL_SUPPORT_LO, FULL_SUPPORT_HI]`.
pub const FULL_SUPPORT_LO: f64 = 0.02;
pub const FULL_SUPPORT_HI: f64 = 0.98;

/// `{0.01, 0.02, …, 0.99}`.
pub fn default_p_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// `MTE(p; x, x′) = Ê[Y | X = x, P = p] − Ê[Y | X = x′, P = p]`.
pub fn estimate_mte(cf: &ControlFunctionFit, p: f64, x: f64, x_prime: f64) -> Result<f64> {
    Ok(cf.cond_mean(x, p)? - cf.cond_mean(x_prime, p)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AsfEstimate {
    Point { value: f64, p_lo: f64, p_hi: f64 },
    Interval { lower: f64, upper: f64, p_lo: f64, p_hi: f64 },
}

impl AsfEstimate {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            AsfEstimate::Point { value, .. } => (value, value),
            AsfEstimate::Interval { lower, upper, .. } => (lower, upper),
        }
    }
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

/// The average structural function from a conditional-mean curve `m(p)`
/// known on `[p_lo, p_hi]`.
///
/// With full support the trapezoid rule runs over `p_grid` and the curve is
/// held flat beyond its first and last point, so the integral covers
/// `[0, 1]`. Otherwise the integral over `[p_lo, p_hi]` (endpoints plus the
/// grid points strictly inside) is completed with the outcome bounds:
/// `[I + Y_l (1 − p_hi + p_lo), I + Y_u (1 − p_hi + p_lo)]`.
pub fn asf_from_curve(
    m: impl Fn(f64) -> Result<f64>,
    p_lo: f64,
    p_hi: f64,
    p_grid: &[f64],
    outcome_bounds: Option<(f64, f64)>,
) -> Result<AsfEstimate> {
    if p_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if p_lo <= FULL_SUPPORT_LO && p_hi >= FULL_SUPPORT_HI {
        let pts = p_grid.iter().map(|&p| Ok((p, m(p)?))).collect::<Result<Vec<_>>>()?;
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        let value = trapezoid(&pts) + first.0 * first.1 + (1.0 - last.0) * last.1;
        return Ok(AsfEstimate::Point { value, p_lo, p_hi });
    }
    let (y_l, y_u) = outcome_bounds.ok_or(Error::MissingBounds { lo: p_lo, hi: p_hi })?;
    if !(y_l <= y_u) {
        return Err(Error::InvalidConfig(format!("outcome bounds [{y_l}, {y_u}] are reversed")));
    }
    let mut ps = vec![p_lo];
    ps.extend(p_grid.iter().copied().filter(|&p| p > p_lo && p < p_hi));
    if p_hi > p_lo {
        ps.push(p_hi);
    }
    let pts = ps.iter().map(|&p| Ok((p, m(p)?))).collect::<Result<Vec<_>>>()?;
    let inner = trapezoid(&pts);
    let missing = 1.0 - p_hi + p_lo;
    Ok(AsfEstimate::Interval { lower: inner + y_l * missing, upper: inner + y_u * missing, p_lo, p_hi })
}

/// `ASF(x) = ∫ E[Y | X = x, P = p] dp` over the estimated support of
/// `P(Z, X)` given `X = x`.
pub fn estimate_asf(
    cf: &ControlFunctionFit,
    pf: &PropensityFit,
    x: f64,
    p_grid: &[f64],
    outcome_bounds: Option<(f64, f64)>,
) -> Result<AsfEstimate> {
    let (p_lo, p_hi) = pf.support_p_given_x(x);
    asf_from_curve(|p| cf.cond_mean(x, p), p_lo, p_hi, p_grid, outcome_bounds)
}

/// Replaces `Y`, `X` and `Z` by their residuals from a linear regression on
/// `[1, controls]`, with each column's sample mean added back so levels stay
/// interpretable.
pub fn partial_out(ds: &Dataset, controls: &DMatrix<f64>) -> Result<Dataset> {
    if controls.nrows() != ds.n() {
        return Err(Error::DimensionMismatch(format!("{} control rows for {} data rows", controls.nrows(), ds.n())));
    }
    let c = design(controls, true);
    let resid = |col: Vec<f64>| -> Result<Vec<f64>> {
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let v = DVector::from_vec(col);
        let b = linalg::lstsq(&c, &v, "control covariates")?;
        Ok((&v - &c * b).iter().map(|e| e + mean).collect())
    };
    let y = resid(ds.y().to_vec())?;
    let x = DMatrix::from_columns(
        &(0..ds.kx()).map(|j| resid(ds.x_col(j)).map(DVector::from_vec)).collect::<Result<Vec<_>>>()?,
    );
    let z = DMatrix::from_columns(
        &(0..ds.kz()).map(|j| resid(ds.z_col(j)).map(DVector::from_vec)).collect::<Result<Vec<_>>>()?,
    );
    Dataset::new(y, x, z, ds.names().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_support_width_is_exact() {
        let est = asf_from_curve(|p| Ok(0.3 + 0.2 * p), 0.25, 0.75, &default_p_grid(), Some((0.0, 1.0))).unwrap();
        let (lo, hi) = est.bounds();
        assert!((hi - lo - 0.5).abs() < 1e-12);
        // Inner integral of 0.3 + 0.2p over [0.25, 0.75] is 0.15 + 0.05 = 0.2.
        assert!((lo - 0.2).abs() < 1e-12, "{lo}");
    }

    #[test]
    fn partial_support_needs_bounds() {
        assert!(matches!(
            asf_from_curve(|_| Ok(1.0), 0.1, 0.9, &default_p_grid(), None),
            Err(Error::MissingBounds { .. })
        ));
    }

    #[test]
    fn full_support_integrates_a_line_exactly() {
        let est = asf_from_curve(|p| Ok(2.0 + p), 0.0, 1.0, &default_p_grid(), None).unwrap();
        // Flat extension adds 0.01·2.01 + 0.01·2.99 to ∫_{0.01}^{0.99} = 2.45.
        match est {
            AsfEstimate::Point { value, .. } => assert!((value - 2.5).abs() < 1e-12, "{value}"),
            other => panic!("expected a point, got {other:?}"),
        }
    }

    #[test]
    fn partialling_out_removes_linear_controls() {
        let n = 40;
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let z: Vec<f64> = (0..n).map(|i| (i % 7) as f64 + 2.0 * c[i]).collect();
        let x: Vec<f64> = (0..n).map(|i| z[i] + (i % 3) as f64 - c[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i] + 5.0 * c[i]).collect();
        let ds = Dataset::from_columns(y, x, z).unwrap();
        let out = partial_out(&ds, &DMatrix::from_vec(n, 1, c.clone())).unwrap();
        for col in [out.y().to_vec(), out.x_col(0), out.z_col(0)] {
            let mean = col.iter().sum::<f64>() / n as f64;
            let dot: f64 = col.iter().zip(&c).map(|(a, b)| (a - mean) * b).sum();
            assert!(dot.abs() < 1e-9);
        }
    }
}
