//! Nonparametric conditional means `θ̂(v) = Ê[W | Z = v]` with pointwise
//! standard errors: polynomial series, local-linear kernel, and exact cell
//! means for discrete conditioning variables.
//!
//! Every estimator here is a linear smoother, `θ̂(v) = Σᵢ ℓᵢ(v) Wᵢ`, which is
//! what the multiplier simulation in [`crate::clr`] relies on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest number of distinct values accepted by [`fit_cell_means`].
pub const MAX_CELLS: usize = 50;

/// Standard-error floor relative to `1 + |θ̂(v)|`.
pub const SE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    Epanechnikov,
    Gaussian,
}

impl Kernel {
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// `scale · 1.06 · sd(z) · n^{-1/5}`.
    Auto { scale: f64 },
    Fixed(f64),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Auto { scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NpregMethod {
    Series { order: Option<usize> },
    LocalLinear { bandwidth: Bandwidth, kernel: Kernel },
    CellMeans,
}

impl Default for NpregMethod {
    fn default() -> Self {
        NpregMethod::Series { order: None }
    }
}

impl NpregMethod {
    pub fn name(&self) -> &'static str {
        match self {
            NpregMethod::Series { .. } => "series",
            NpregMethod::LocalLinear { .. } => "local-linear",
            NpregMethod::CellMeans => "cell-means",
        }
    }
}

/// `⌈2·n^{1/5}⌉`, capped at 12.
pub fn default_series_order(n: usize) -> usize {
    ((2.0 * (n as f64).powf(0.2)).ceil() as usize).clamp(1, 12)
}

/// Rule-of-thumb bandwidth `1.06 · sd(z) · n^{-1/5}`.
pub fn rule_of_thumb(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    1.06 * std_dev(z) * n.powf(-0.2)
}

pub(crate) fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

fn floor_se(theta: f64, s: f64) -> f64 {
    s.max(SE_FLOOR * (1.0 + theta.abs()))
}

/// A point estimate written as `Σ coef_k · ξ_{idx_k}` for multiplier draws `ξ`:
/// `coef_k = ℓ_k(v) · ê_k(v)`.
#[derive(Debug, Clone, Default)]
pub struct LinearRep {
    pub idx: Vec<usize>,
    pub coef: Vec<f64>,
}

impl LinearRep {
    pub fn apply(&self, xi: &[f64]) -> f64 {
        self.idx.iter().zip(&self.coef).map(|(&i, c)| c * xi[i]).sum()
    }
}

/// Polynomial series fit on `z` standardized to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct SeriesFit {
    pub order: usize,
    pub center: f64,
    pub half_range: f64,
    pub coef: DVector<f64>,
    /// Heteroskedasticity-robust covariance of `coef`.
    pub coef_cov: DMatrix<f64>,
    /// `B (B'B)⁻¹`, so that `coef = influence' W`.
    pub influence: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

impl SeriesFit {
    pub fn basis(&self, v: f64) -> DVector<f64> {
        let t = (v - self.center) / self.half_range;
        let mut b = DVector::zeros(self.order + 1);
        let mut p = 1.0;
        for k in 0..=self.order {
            b[k] = p;
            p *= t;
        }
        b
    }

    pub fn evaluate(&self, v: f64) -> (f64, f64) {
        let b = self.basis(v);
        let theta = b.dot(&self.coef);
        let var = (b.transpose() * &self.coef_cov * &b)[(0, 0)];
        (theta, floor_se(theta, var.max(0.0).sqrt()))
    }
}

/// Local-linear kernel fit; keeps the data so it can be evaluated anywhere.
#[derive(Debug, Clone)]
pub struct LocalLinearFit {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub bandwidth: f64,
    pub kernel: Kernel,
}

/// Equivalent-kernel weights of a local-linear fit at one point.
#[derive(Debug, Clone)]
pub(crate) struct LocalWeights {
    pub idx: Vec<usize>,
    pub ell: Vec<f64>,
    /// Weights producing the local slope.
    pub slope: Vec<f64>,
    pub dist: Vec<f64>,
}

pub(crate) fn local_linear_weights(z: &[f64], v: f64, h: f64, kernel: Kernel) -> Result<LocalWeights> {
    let mut idx = Vec::new();
    let mut k = Vec::new();
    let mut d = Vec::new();
    for (i, &zi) in z.iter().enumerate() {
        let di = zi - v;
        let ki = kernel.weight(di / h);
        if ki > 0.0 {
            idx.push(i);
            k.push(ki);
            d.push(di);
        }
    }
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (ki, di) in k.iter().zip(&d) {
        s0 += ki;
        s1 += ki * di;
        s2 += ki * di * di;
    }
    let det = s0 * s2 - s1 * s1;
    if idx.is_empty() || !(det > 1e-12 * s0 * s2.max(f64::MIN_POSITIVE)) {
        return Err(Error::EmptyWindow { at: v });
    }
    let ell = k.iter().zip(&d).map(|(ki, di)| ki * (s2 - di * s1) / det).collect();
    let slope = k.iter().zip(&d).map(|(ki, di)| ki * (s0 * di - s1) / det).collect();
    Ok(LocalWeights { idx, ell, slope, dist: d })
}

impl LocalLinearFit {
    fn weights(&self, v: f64) -> Result<LocalWeights> {
        local_linear_weights(&self.z, v, self.bandwidth, self.kernel)
    }

    fn local_line(&self, lw: &LocalWeights) -> (f64, f64) {
        let a = lw.idx.iter().zip(&lw.ell).map(|(&i, l)| l * self.w[i]).sum();
        let b = lw.idx.iter().zip(&lw.slope).map(|(&i, l)| l * self.w[i]).sum();
        (a, b)
    }

    pub fn evaluate(&self, v: f64) -> Result<(f64, f64)> {
        let lw = self.weights(v)?;
        let (a, b) = self.local_line(&lw);
        let var: f64 = lw
            .idx
            .iter()
            .zip(&lw.ell)
            .zip(&lw.dist)
            .map(|((&i, l), d)| {
                let e = self.w[i] - a - b * d;
                l * l * e * e
            })
            .sum();
        Ok((a, floor_se(a, var.sqrt())))
    }

    pub fn linear_rep(&self, v: f64) -> Result<LinearRep> {
        let lw = self.weights(v)?;
        let (a, b) = self.local_line(&lw);
        let coef = lw
            .idx
            .iter()
            .zip(&lw.ell)
            .zip(&lw.dist)
            .map(|((&i, l), d)| l * (self.w[i] - a - b * d))
            .collect();
        Ok(LinearRep { idx: lw.idx, coef })
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub value: f64,
    pub mean: f64,
    pub se: f64,
    pub members: Vec<usize>,
    /// `(Wᵢ − mean) / m` for each member.
    pub scaled_resid: Vec<f64>,
}

/// Within-cell means for a discrete conditioning variable.
#[derive(Debug, Clone)]
pub struct CellMeansFit {
    pub cells: Vec<Cell>,
}

impl CellMeansFit {
    fn cell(&self, v: f64) -> Result<&Cell> {
        self.cells
            .iter()
            .find(|c| c.value == v)
            .ok_or_else(|| Error::DomainError(format!("{v} is not a cell of the conditioning variable")))
    }

    pub fn evaluate(&self, v: f64) -> Result<(f64, f64)> {
        let c = self.cell(v)?;
        Ok((c.mean, floor_se(c.mean, c.se)))
    }

    pub fn values(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.value).collect()
    }
}

/// A fitted conditional-mean function `v ↦ (θ̂(v), ŝ(v))`.
#[derive(Debug, Clone)]
pub enum CondMeanFit {
    Series(SeriesFit),
    LocalLinear(LocalLinearFit),
    CellMeans(CellMeansFit),
}

impl CondMeanFit {
    pub fn evaluate(&self, v: f64) -> Result<(f64, f64)> {
        match self {
            CondMeanFit::Series(f) => Ok(f.evaluate(v)),
            CondMeanFit::LocalLinear(f) => f.evaluate(v),
            CondMeanFit::CellMeans(f) => f.evaluate(v),
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            CondMeanFit::Series(_) => "series",
            CondMeanFit::LocalLinear(_) => "local-linear",
            CondMeanFit::CellMeans(_) => "cell-means",
        }
    }

    /// Basis order or bandwidth, for reports.
    pub fn describe(&self) -> String {
        match self {
            CondMeanFit::Series(f) => format!("order={}", f.order),
            CondMeanFit::LocalLinear(f) => format!("bandwidth={}", f.bandwidth),
            CondMeanFit::CellMeans(f) => format!("cells={}", f.cells.len()),
        }
    }

    /// Coefficient covariance of the series representation, when there is one.
    pub fn coef_cov(&self) -> Option<&DMatrix<f64>> {
        match self {
            CondMeanFit::Series(f) => Some(&f.coef_cov),
            _ => None,
        }
    }

    /// Multiplier representation `Σ ℓᵢ(v) êᵢ ξᵢ` of `θ̂(v) − θ(v)`.
    pub fn linear_rep(&self, v: f64) -> Result<LinearRep> {
        match self {
            CondMeanFit::Series(f) => {
                let b = f.basis(v);
                let ell = &f.influence * b;
                Ok(LinearRep {
                    idx: (0..ell.len()).collect(),
                    coef: ell.iter().zip(&f.residuals).map(|(l, e)| l * e).collect(),
                })
            }
            CondMeanFit::LocalLinear(f) => f.linear_rep(v),
            CondMeanFit::CellMeans(f) => {
                let c = f.cell(v)?;
                Ok(LinearRep { idx: c.members.clone(), coef: c.scaled_resid.clone() })
            }
        }
    }
}

fn check_lengths(w: &[f64], z: &[f64]) -> Result<()> {
    if w.len() != z.len() {
        return Err(Error::DimensionMismatch(format!("w has {} rows, z has {}", w.len(), z.len())));
    }
    Ok(())
}

/// Series regression on `(1, t, …, t^order)` with `t` the affine map of
/// `range` onto `[-1, 1]` (data min/max when `range` is `None`).
pub fn fit_series(w: &[f64], z: &[f64], order: usize, range: Option<(f64, f64)>) -> Result<CondMeanFit> {
    check_lengths(w, z)?;
    let n = w.len();
    if order < 1 {
        return Err(Error::InvalidConfig("series order must be at least 1".into()));
    }
    if n <= order + 1 {
        return Err(Error::InsufficientData(format!("{n} rows for a series of order {order}")));
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    if !(hi > lo) {
        return Err(Error::DegenerateSupport(lo));
    }
    let center = 0.5 * (lo + hi);
    let half_range = 0.5 * (hi - lo);
    let k = order + 1;
    let design = DMatrix::from_fn(n, k, |i, j| ((z[i] - center) / half_range).powi(j as i32));
    let gram_inv = linalg::gram_inverse(&design, "series basis")?;
    let influence = &design * &gram_inv;
    let wv = DVector::from_column_slice(w);
    let coef = linalg::lstsq(&design, &wv, "series basis")?;
    let residuals: Vec<f64> = (&wv - &design * &coef).iter().copied().collect();
    let coef_cov = linalg::sandwich(&gram_inv, &design, &residuals);
    Ok(CondMeanFit::Series(SeriesFit { order, center, half_range, coef, coef_cov, influence, residuals }))
}

/// Local-linear regression with the given kernel. Bandwidth `Auto` uses the
/// rule of thumb times its scale.
pub fn fit_local_linear(w: &[f64], z: &[f64], bandwidth: Bandwidth, kernel: Kernel) -> Result<CondMeanFit> {
    check_lengths(w, z)?;
    if w.len() < 10 {
        return Err(Error::InsufficientData(format!("{} rows for local-linear regression", w.len())));
    }
    let h = match bandwidth {
        Bandwidth::Auto { scale } => scale * rule_of_thumb(z),
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {h}")));
    }
    Ok(CondMeanFit::LocalLinear(LocalLinearFit { z: z.to_vec(), w: w.to_vec(), bandwidth: h, kernel }))
}

/// Exact within-cell means; `ŝ` is the cell standard error `sqrt(Σ e²) / m`.
pub fn fit_cell_means(w: &[f64], z: &[f64]) -> Result<CondMeanFit> {
    check_lengths(w, z)?;
    let mut values: Vec<f64> = z.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() > MAX_CELLS {
        return Err(Error::TooManyCells { cells: values.len(), limit: MAX_CELLS });
    }
    let cells = values
        .into_iter()
        .map(|value| {
            let members: Vec<usize> = (0..z.len()).filter(|&i| z[i] == value).collect();
            let m = members.len() as f64;
            let mean = members.iter().map(|&i| w[i]).sum::<f64>() / m;
            let ss: f64 = members.iter().map(|&i| (w[i] - mean).powi(2)).sum();
            let scaled_resid = members.iter().map(|&i| (w[i] - mean) / m).collect();
            Cell { value, mean, se: ss.sqrt() / m, members, scaled_resid }
        })
        .collect();
    Ok(CondMeanFit::CellMeans(CellMeansFit { cells }))
}
