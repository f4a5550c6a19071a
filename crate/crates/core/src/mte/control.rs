//! Bivariate local-linear regressions of `Y` and `1{Y ≤ y}` on `(X, V̂)`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::propensity::PropensityFit;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::iso;
use crate::npreg::{self, Kernel};
use crate::rng::RngSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    /// Multiplier on the rule-of-thumb bandwidths `1.06 · sd · n^{-1/6}`.
    pub bandwidth_scale: f64,
    pub kernel: Kernel,
    /// Points of the outcome grid for the conditional distribution.
    pub y_grid_size: usize,
    /// Kish effective sample size required for a point to be on support.
    pub min_effective_n: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { bandwidth_scale: 1.0, kernel: Kernel::Epanechnikov, y_grid_size: 50, min_effective_n: 5.0 }
    }
}

/// Local-linear weights `ℓᵢ(x, p)` at one evaluation point.
#[derive(Debug, Clone)]
struct PointWeights {
    idx: Vec<usize>,
    ell: Vec<f64>,
    effective_n: f64,
}

#[derive(Debug, Clone)]
pub struct ControlFunctionFit {
    x: Vec<f64>,
    v: Vec<f64>,
    y: Vec<f64>,
    pub bandwidth_x: f64,
    pub bandwidth_p: f64,
    pub kernel: Kernel,
    pub min_effective_n: f64,
    /// Outcome grid of the conditional distribution.
    pub y_grid: Vec<f64>,
    /// Row order of `y` sorted ascending, for cumulative sums.
    y_rank: Vec<usize>,
}

/// `P̂(Y ≤ y | X = x, P = p)` on the outcome grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CondCdf {
    pub y_grid: Vec<f64>,
    pub raw: Vec<f64>,
    /// Isotonized in `y` and clipped to `[0, 1]`.
    pub fitted: Vec<f64>,
}

impl CondCdf {
    pub fn value(&self, y: f64) -> f64 {
        let k = self.y_grid.partition_point(|&g| g <= y);
        if k == 0 {
            0.0
        } else {
            self.fitted[k - 1]
        }
    }
}

impl ControlFunctionFit {
    fn weights(&self, x: f64, p: f64) -> Result<PointWeights> {
        let mut idx = Vec::new();
        let mut k = Vec::new();
        for i in 0..self.x.len() {
            let kx = self.kernel.weight((self.x[i] - x) / self.bandwidth_x);
            if kx == 0.0 {
                continue;
            }
            let kp = self.kernel.weight((self.v[i] - p) / self.bandwidth_p);
            if kp > 0.0 {
                idx.push(i);
                k.push(kx * kp);
            }
        }
        let s1: f64 = k.iter().sum();
        let s2: f64 = k.iter().map(|w| w * w).sum();
        let effective_n = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
        if effective_n < self.min_effective_n {
            return Err(Error::OffSupport { x, p });
        }
        let mut a = Matrix3::<f64>::zeros();
        for (&i, &w) in idx.iter().zip(&k) {
            let d = Vector3::new(1.0, self.x[i] - x, self.v[i] - p);
            a += d * d.transpose() * w;
        }
        let a_inv = a.try_inverse().ok_or(Error::OffSupport { x, p })?;
        let row = a_inv.row(0).into_owned();
        let ell = idx
            .iter()
            .zip(&k)
            .map(|(&i, &w)| w * (row[0] + row[1] * (self.x[i] - x) + row[2] * (self.v[i] - p)))
            .collect();
        Ok(PointWeights { idx, ell, effective_n })
    }

    /// Whether `(x, p)` has at least `min_effective_n` effective observations
    /// and a non-singular local design.
    pub fn on_support(&self, x: f64, p: f64) -> bool {
        self.weights(x, p).is_ok()
    }

    /// Kish effective sample size `(Σk)² / Σk²` of the kernel window.
    pub fn effective_n(&self, x: f64, p: f64) -> f64 {
        self.weights(x, p).map(|w| w.effective_n).unwrap_or(0.0)
    }

    /// `Ê[Y | X = x, P(Z, X) = p]`.
    pub fn cond_mean(&self, x: f64, p: f64) -> Result<f64> {
        let w = self.weights(x, p)?;
        Ok(w.idx.iter().zip(&w.ell).map(|(&i, l)| l * self.y[i]).sum())
    }

    /// `P̂(Y ≤ y | X = x, P(Z, X) = p)` over the whole outcome grid.
    pub fn cond_cdf_curve(&self, x: f64, p: f64) -> Result<CondCdf> {
        let w = self.weights(x, p)?;
        let mut ell_by_row = vec![0.0; self.y.len()];
        for (&i, &l) in w.idx.iter().zip(&w.ell) {
            ell_by_row[i] = l;
        }
        let mut raw = Vec::with_capacity(self.y_grid.len());
        let mut acc = 0.0;
        let mut r = 0;
        for &g in &self.y_grid {
            while r < self.y_rank.len() && self.y[self.y_rank[r]] <= g {
                acc += ell_by_row[self.y_rank[r]];
                r += 1;
            }
            raw.push(acc);
        }
        let fitted = iso::pava_unweighted(&raw).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(CondCdf { y_grid: self.y_grid.clone(), raw, fitted })
    }

    pub fn cond_cdf(&self, x: f64, p: f64, y: f64) -> Result<f64> {
        Ok(self.cond_cdf_curve(x, p)?.value(y))
    }

    /// On-support flags over `x_grid × p_grid`, row per `x`.
    pub fn support_mask(&self, x_grid: &[f64], p_grid: &[f64]) -> Vec<Vec<bool>> {
        x_grid.par_iter().map(|&x| p_grid.iter().map(|&p| self.on_support(x, p)).collect()).collect()
    }

    /// Randomized probability integral transform of every `Yᵢ` given
    /// `(Xᵢ, V̂ᵢ)`. Outcomes are discretized to the cells of the outcome grid
    /// and the transform is drawn uniformly across the cell's probability
    /// mass, which makes it exactly uniform when the conditional
    /// distribution is right. Rows off support are skipped.
    pub fn randomized_pit(&self, rng: RngSpec) -> Vec<f64> {
        let out: Vec<Option<f64>> = (0..self.y.len())
            .into_par_iter()
            .map(|i| {
                let cdf = self.cond_cdf_curve(self.x[i], self.v[i]).ok()?;
                let k = cdf.y_grid.partition_point(|&g| g < self.y[i]);
                let lo = if k == 0 { 0.0 } else { cdf.fitted[k - 1] };
                let hi = if k == cdf.y_grid.len() { 1.0 } else { cdf.fitted[k] };
                let w: f64 = rng.derive(i as u64).rng().random();
                Some(lo + w * (hi - lo))
            })
            .collect();
        out.into_iter().flatten().collect()
    }

    pub fn regressor(&self) -> &[f64] {
        &self.x
    }

    pub fn control(&self) -> &[f64] {
        &self.v
    }
}

/// `1.06 · sd · n^{-1/6}`, the two-dimensional rule of thumb.
pub fn bivariate_rule_of_thumb(v: &[f64]) -> f64 {
    1.06 * npreg::std_dev(v) * (v.len() as f64).powf(-1.0 / 6.0)
}

/// Control-function regressions on `(X, V̂)` with `V̂` from `pf`.
pub fn fit_control_function(ds: &Dataset, pf: &PropensityFit, cfg: &ControlConfig) -> Result<ControlFunctionFit> {
    if ds.kx() != 1 {
        return Err(Error::InvalidSpec("the control function needs a scalar regressor".into()));
    }
    if pf.v_hat.len() != ds.n() {
        return Err(Error::DimensionMismatch(format!("{} propensity values for {} rows", pf.v_hat.len(), ds.n())));
    }
    if !(cfg.bandwidth_scale > 0.0) || cfg.y_grid_size < 2 {
        return Err(Error::InvalidConfig("bandwidth_scale must be positive and y_grid_size at least 2".into()));
    }
    let x = ds.x_col(0);
    let v = pf.v_hat.clone();
    let y = ds.y().to_vec();
    let bandwidth_x = cfg.bandwidth_scale * bivariate_rule_of_thumb(&x);
    let bandwidth_p = cfg.bandwidth_scale * bivariate_rule_of_thumb(&v);
    if !(bandwidth_x > 0.0 && bandwidth_p > 0.0) {
        return Err(Error::DegenerateSupport(x[0]));
    }
    let sorted = data::sorted_copy(&y);
    let g = cfg.y_grid_size;
    let mut y_grid: Vec<f64> =
        (1..=g).map(|k| data::empirical_quantile(&sorted, k as f64 / (g + 1) as f64)).collect();
    y_grid.dedup();
    let mut y_rank: Vec<usize> = (0..y.len()).collect();
    y_rank.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    Ok(ControlFunctionFit {
        x,
        v,
        y,
        bandwidth_x,
        bandwidth_p,
        kernel: cfg.kernel,
        min_effective_n: cfg.min_effective_n,
        y_grid,
        y_rank,
    })
}
