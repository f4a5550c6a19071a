//! Propensity function `P(z, x) = P(X ≤ x | Z = z)` and the plug-in control
//! `V̂ᵢ = P(Zᵢ, Xᵢ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::iso;
use crate::npreg::{self, Bandwidth, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PropensityMethod {
    LocalLinear { bandwidth: Bandwidth, kernel: Kernel },
    CellMeans,
}

impl Default for PropensityMethod {
    fn default() -> Self {
        PropensityMethod::LocalLinear { bandwidth: Bandwidth::default(), kernel: Kernel::Epanechnikov }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    pub method: PropensityMethod,
    /// Column of `Z` used as the scalar instrument.
    pub z_index: usize,
    /// Points of the `z` grid (centiles 0.01 to 0.99).
    pub z_grid_size: usize,
    /// Points of the `x` grid used by the monotonicity report.
    pub x_grid_size: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self { method: PropensityMethod::default(), z_index: 0, z_grid_size: 50, x_grid_size: 50 }
    }
}

/// `x ↦ P(z, x)` at one `z`: a right-continuous step function with jumps at
/// the distinct `X` values that receive weight.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCurve {
    pub xs: Vec<f64>,
    /// Raw smoother output at each jump, before any correction.
    pub raw: Vec<f64>,
    /// Isotonized and clipped to `[0, 1]`.
    pub fitted: Vec<f64>,
}

impl StepCurve {
    fn at(xs: &[f64], values: &[f64], x: f64) -> f64 {
        let k = xs.partition_point(|&v| v <= x);
        if k == 0 {
            0.0
        } else {
            values[k - 1]
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        Self::at(&self.xs, &self.fitted, x)
    }

    pub fn raw_value(&self, x: f64) -> f64 {
        Self::at(&self.xs, &self.raw, x)
    }

    /// `inf{x : P(z, x) ≥ u}` on the fitted curve; the largest jump when no
    /// value reaches `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.fitted.partition_point(|&p| p < u);
        self.xs[k.min(self.xs.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityRow {
    pub z: f64,
    /// Share of grid pairs `x < x′` with raw `P(z, x) > P(z, x′)`.
    pub violation_share: f64,
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    z: Vec<f64>,
    x: Vec<f64>,
    method: PropensityMethod,
    pub bandwidth: Option<f64>,
    pub v_hat: Vec<f64>,
    pub z_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    curves: Vec<StepCurve>,
    pub monotonicity_report: Vec<MonotonicityRow>,
}

fn smoother_weights(z: &[f64], at: f64, method: PropensityMethod, h: Option<f64>) -> Result<(Vec<usize>, Vec<f64>)> {
    match method {
        PropensityMethod::LocalLinear { kernel, .. } => {
            let lw = npreg::local_linear_weights(z, at, h.expect("bandwidth set for local-linear"), kernel)?;
            Ok((lw.idx, lw.ell))
        }
        PropensityMethod::CellMeans => {
            let idx: Vec<usize> = (0..z.len()).filter(|&i| z[i] == at).collect();
            if idx.is_empty() {
                return Err(Error::DomainError(format!("{at} is not a cell of the instrument")));
            }
            let w = 1.0 / idx.len() as f64;
            let ell = vec![w; idx.len()];
            Ok((idx, ell))
        }
    }
}

fn curve_from_weights(x: &[f64], idx: Vec<usize>, ell: Vec<f64>) -> StepCurve {
    let mut pairs: Vec<(f64, f64)> = idx.into_iter().map(|i| x[i]).zip(ell).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut xs = Vec::new();
    let mut raw: Vec<f64> = Vec::new();
    let mut acc = 0.0;
    for (xi, l) in pairs {
        acc += l;
        if xs.last() == Some(&xi) {
            *raw.last_mut().expect("paired with xs") = acc;
        } else {
            xs.push(xi);
            raw.push(acc);
        }
    }
    let fitted = iso::pava_unweighted(&raw).into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
    StepCurve { xs, raw, fitted }
}

impl PropensityFit {
    pub fn method(&self) -> PropensityMethod {
        self.method
    }

    /// The step curve `x ↦ P(z, ·)` at an arbitrary `z`.
    pub fn curve(&self, z: f64) -> Result<StepCurve> {
        let (idx, ell) = smoother_weights(&self.z, z, self.method, self.bandwidth)?;
        Ok(curve_from_weights(&self.x, idx, ell))
    }

    /// Isotonized, clipped `P̂(z, x)`.
    pub fn evaluate(&self, z: f64, x: f64) -> Result<f64> {
        Ok(self.curve(z)?.value(x))
    }

    /// Curves at the stored `z` grid.
    pub fn grid_curves(&self) -> &[StepCurve] {
        &self.curves
    }

    /// `[min_z P̂(z, x), max_z P̂(z, x)]` over the `z` grid.
    pub fn support_p_given_x(&self, x: f64) -> (f64, f64) {
        self.curves
            .iter()
            .map(|c| c.value(x))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)))
    }

    pub fn instrument(&self) -> &[f64] {
        &self.z
    }

    pub fn regressor(&self) -> &[f64] {
        &self.x
    }

    /// Largest raw violation share across the `z` grid.
    pub fn max_violation_share(&self) -> f64 {
        self.monotonicity_report.iter().map(|r| r.violation_share).fold(0.0, f64::max)
    }
}

fn violation_share(curve: &StepCurve, x_grid: &[f64]) -> f64 {
    let raw: Vec<f64> = x_grid.iter().map(|&x| curve.raw_value(x)).collect();
    let mut pairs = 0usize;
    let mut bad = 0usize;
    for a in 0..raw.len() {
        for b in a + 1..raw.len() {
            if x_grid[a] < x_grid[b] {
                pairs += 1;
                if raw[a] > raw[b] + 1e-12 {
                    bad += 1;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        bad as f64 / pairs as f64
    }
}

/// Regresses `1{X ≤ x}` on the scalar instrument for every `x` at once: for
/// a linear smoother with weights `ℓᵢ(z)`, `P̂(z, x) = Σ_{Xᵢ ≤ x} ℓᵢ(z)`.
/// The curve at each `z` is isotonized in `x` and clipped to `[0, 1]`.
pub fn fit_propensity(ds: &Dataset, cfg: &PropensityConfig) -> Result<PropensityFit> {
    if ds.kx() != 1 {
        return Err(Error::InvalidSpec("the propensity function needs a scalar regressor".into()));
    }
    if cfg.z_index >= ds.kz() {
        return Err(Error::InvalidSpec(format!("instrument column {} does not exist", cfg.z_index)));
    }
    let z = ds.z_col(cfg.z_index);
    let x = ds.x_col(0);
    let (bandwidth, z_grid) = match cfg.method {
        PropensityMethod::LocalLinear { bandwidth, .. } => {
            if z.len() < 10 {
                return Err(Error::InsufficientData(format!("{} rows for local-linear regression", z.len())));
            }
            let h = match bandwidth {
                Bandwidth::Auto { scale } => scale * npreg::rule_of_thumb(&z),
                Bandwidth::Fixed(h) => h,
            };
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {h}")));
            }
            (Some(h), data::conditioning_grid(&z, 0.01, 0.99, cfg.z_grid_size)?.points)
        }
        PropensityMethod::CellMeans => {
            let mut cells = data::sorted_copy(&z);
            cells.dedup();
            if cells.len() > npreg::MAX_CELLS {
                return Err(Error::TooManyCells { cells: cells.len(), limit: npreg::MAX_CELLS });
            }
            (None, cells)
        }
    };
    let x_grid = data::conditioning_grid(&x, 0.01, 0.99, cfg.x_grid_size)?.points;
    let mut fit = PropensityFit {
        z,
        x,
        method: cfg.method,
        bandwidth,
        v_hat: Vec::new(),
        z_grid,
        x_grid,
        curves: Vec::new(),
        monotonicity_report: Vec::new(),
    };
    fit.curves = fit.z_grid.par_iter().map(|&zg| fit.curve(zg)).collect::<Result<Vec<_>>>()?;
    fit.monotonicity_report = fit
        .z_grid
        .iter()
        .zip(&fit.curves)
        .map(|(&z, c)| MonotonicityRow { z, violation_share: violation_share(c, &fit.x_grid) })
        .collect();
    fit.v_hat = (0..fit.z.len())
        .into_par_iter()
        .map(|i| fit.evaluate(fit.z[i], fit.x[i]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(fit)
}

/// Kolmogorov–Smirnov distance of a sample to `U[0, 1]`.
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let s = data::sorted_copy(sample);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &u)| {
            let u = u.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - u).max(u - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let a = data::sorted_copy(a);
    let b = data::sorted_copy(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityBin {
    pub z_lo: f64,
    pub z_hi: f64,
    pub count: usize,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub overall_ks: f64,
    pub bins: Vec<UniformityBin>,
    pub max_bin_ks: f64,
}

/// KS distance of `sample` to `U[0, 1]`, overall and within `bins`
/// equal-count bins of `z`.
pub fn uniformity_by_bins(sample: &[f64], z: &[f64], bins: usize) -> UniformityReport {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    let bins = bins.max(1).min(z.len().max(1));
    let per = z.len().div_ceil(bins);
    let bins: Vec<UniformityBin> = order
        .chunks(per.max(1))
        .map(|chunk| {
            let vals: Vec<f64> = chunk.iter().map(|&i| sample[i]).collect();
            UniformityBin {
                z_lo: z[chunk[0]],
                z_hi: z[chunk[chunk.len() - 1]],
                count: chunk.len(),
                ks: ks_uniform(&vals),
            }
        })
        .collect();
    UniformityReport {
        overall_ks: ks_uniform(sample),
        max_bin_ks: bins.iter().map(|b| b.ks).fold(0.0, f64::max),
        bins,
    }
}

/// Uniformity of `V̂` overall and within five instrument bins.
pub fn uniformity_diagnostic(pf: &PropensityFit) -> UniformityReport {
    uniformity_by_bins(&pf.v_hat, &pf.z, 5)
}
