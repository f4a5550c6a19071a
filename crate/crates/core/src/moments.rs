//! Signed moment functions `W_j` and the conditioning variables they are
//! tested against: every equality `E[W | Z] = 0` enters as the pair
//! `E[W | Z] ≤ 0`, `E[−W | Z] ≤ 0`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Assumption, Conditioning, FirstStep, ModelSpec, ParametricModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentBase {
    /// `Û`.
    Residual,
    /// `Û² − σ̂²`.
    CenteredSquare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moment {
    pub label: String,
    pub base: MomentBase,
    /// `+1` or `−1`.
    pub sign: f64,
    /// `W_j` evaluated on every row.
    pub values: Vec<f64>,
}

impl Moment {
    fn new(label: &str, base: MomentBase, sign: f64, base_values: &[f64]) -> Self {
        Self { label: label.to_string(), base, sign, values: base_values.iter().map(|v| sign * v).collect() }
    }

    pub fn eval(&self, row: usize) -> f64 {
        self.values[row]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVar {
    pub name: String,
    pub values: Vec<f64>,
}

/// The signed moments and conditioning columns that make up `𝒱`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub moments: Vec<Moment>,
    /// One entry per conditioning coordinate; each is tested on its own grid.
    pub conditioning: Vec<ConditioningVar>,
    pub sigma2_hat: Option<f64>,
}

impl MomentSystem {
    pub fn n(&self) -> usize {
        self.moments.first().map_or(0, |m| m.values.len())
    }

    /// Human-readable description of `𝒱`.
    pub fn describe(&self) -> String {
        let labels: Vec<&str> = self.moments.iter().map(|m| m.label.as_str()).collect();
        let cond: Vec<&str> = self.conditioning.iter().map(|c| c.name.as_str()).collect();
        format!("{{(v, j)}}: j in [{}], v on the grid of each of [{}]", labels.join(", "), cond.join(", "))
    }
}

fn conditioning_columns(ds: &Dataset, on: Conditioning) -> Vec<ConditioningVar> {
    match on {
        Conditioning::OnZ => (0..ds.kz())
            .map(|j| ConditioningVar { name: ds.names().z[j].clone(), values: ds.z_col(j) })
            .collect(),
        Conditioning::OnX => (0..ds.kx())
            .map(|j| ConditioningVar { name: ds.names().x[j].clone(), values: ds.x_col(j) })
            .collect(),
    }
}

fn check_len(ds: &Dataset, resid: &[f64]) -> Result<()> {
    if resid.len() != ds.n() {
        return Err(Error::DimensionMismatch(format!("{} residuals for {} rows", resid.len(), ds.n())));
    }
    Ok(())
}

/// `W₁ = Û`, `W₂ = −Û`.
pub fn build_exogeneity(ds: &Dataset, fit: &FirstStep, spec: &ModelSpec) -> Result<MomentSystem> {
    exogeneity_from_residuals(ds, fit.residuals(), spec.conditioning)
}

pub fn exogeneity_from_residuals(ds: &Dataset, resid: &[f64], on: Conditioning) -> Result<MomentSystem> {
    check_len(ds, resid)?;
    Ok(MomentSystem {
        moments: vec![
            Moment::new("u", MomentBase::Residual, 1.0, resid),
            Moment::new("-u", MomentBase::Residual, -1.0, resid),
        ],
        conditioning: conditioning_columns(ds, on),
        sigma2_hat: None,
    })
}

/// Exogeneity pair plus `W₃ = Û² − σ̂²`, `W₄ = −W₃` with `σ̂² = E_n[Û²]`.
pub fn build_homoskedasticity(ds: &Dataset, fit: &FirstStep, spec: &ModelSpec) -> Result<MomentSystem> {
    if !spec.tests(Assumption::Homoskedasticity) {
        return Err(Error::InvalidSpec("homoskedasticity is not among the tested assumptions".into()));
    }
    let mut ms = build_exogeneity(ds, fit, spec)?;
    let resid = fit.residuals();
    let sigma2 = resid.iter().map(|u| u * u).sum::<f64>() / resid.len() as f64;
    let centered: Vec<f64> = resid.iter().map(|u| u * u - sigma2).collect();
    ms.moments.push(Moment::new("u2-s2", MomentBase::CenteredSquare, 1.0, &centered));
    ms.moments.push(Moment::new("s2-u2", MomentBase::CenteredSquare, -1.0, &centered));
    ms.sigma2_hat = Some(sigma2);
    Ok(ms)
}

/// The moment system a spec calls for, given its first-step fit.
pub fn build_for_spec(ds: &Dataset, fit: &FirstStep, spec: &ModelSpec) -> Result<MomentSystem> {
    if spec.tests(Assumption::Homoskedasticity) {
        build_homoskedasticity(ds, fit, spec)
    } else {
        build_exogeneity(ds, fit, spec)
    }
}

/// `W₁ = Y − m(X, θ)`, `W₂ = −W₁` at a fixed parameter point.
pub fn build_parametric_grid(
    ds: &Dataset,
    model: &dyn ParametricModel,
    theta: &[f64],
    on: Conditioning,
) -> Result<MomentSystem> {
    if theta.len() != model.n_params() {
        return Err(Error::InvalidSpec(format!(
            "parameter point of length {} for a model with {} parameters",
            theta.len(),
            model.n_params()
        )));
    }
    let resid = (0..ds.n())
        .map(|i| {
            let xi: Vec<f64> = ds.x().row(i).iter().copied().collect();
            Ok(ds.y()[i] - model.evaluate(&xi, theta)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    exogeneity_from_residuals(ds, &resid, on)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators;
    use crate::model::{BoxCoxModel, LinearModel};

    fn small() -> Dataset {
        Dataset::from_columns(vec![1.0, 3.0, 2.0, 6.0], vec![0.0, 1.0, 2.0, 3.0], vec![0.5, 1.0, 2.5, 3.0]).unwrap()
    }

    #[test]
    fn pair_cancels_on_every_row() {
        let ds = small();
        let spec = ModelSpec::linear(Conditioning::OnZ, false);
        let fit = FirstStep::Linear(estimators::fit_iv(&ds, true).unwrap());
        let ms = build_exogeneity(&ds, &fit, &spec).unwrap();
        assert_eq!(ms.moments.len(), 2);
        for i in 0..ds.n() {
            assert_eq!(ms.moments[0].eval(i) + ms.moments[1].eval(i), 0.0);
        }
        let mean: f64 = ms.moments[0].values.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn centered_square_matches_hand_values() {
        // OLS on the 4-row set: slope 1.4, intercept 0.9, residuals
        // (0.1, 0.7, -1.7, 0.9); mean square 1.05.
        let ds = small();
        let spec = ModelSpec::linear(Conditioning::OnX, true);
        let fit = FirstStep::Linear(estimators::fit_ols(&ds, true).unwrap());
        let ms = build_homoskedasticity(&ds, &fit, &spec).unwrap();
        assert_eq!(ms.moments.len(), 4);
        let expected = [0.01 - 1.05, 0.49 - 1.05, 2.89 - 1.05, 0.81 - 1.05];
        for (w, e) in ms.moments[2].values.iter().zip(expected) {
            assert!((w - e).abs() < 1e-12, "{w} vs {e}");
        }
        assert!((ms.sigma2_hat.unwrap() - 1.05).abs() < 1e-12);
        assert!(ms.moments[2].values.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn homoskedasticity_needs_the_assumption() {
        let ds = small();
        let spec = ModelSpec::linear(Conditioning::OnX, false);
        let fit = FirstStep::Linear(estimators::fit_ols(&ds, true).unwrap());
        assert!(build_homoskedasticity(&ds, &fit, &spec).is_err());
    }

    #[test]
    fn linear_grid_point_reproduces_fitted_moments() {
        let ds = small();
        let spec = ModelSpec::linear(Conditioning::OnZ, false);
        let iv = estimators::fit_iv(&ds, true).unwrap();
        let theta: Vec<f64> = iv.beta.iter().copied().collect();
        let a = build_exogeneity(&ds, &FirstStep::Linear(iv), &spec).unwrap();
        let b = build_parametric_grid(&ds, &LinearModel { k: 1 }, &theta, Conditioning::OnZ).unwrap();
        for (ma, mb) in a.moments.iter().zip(&b.moments) {
            for (x, y) in ma.values.iter().zip(&mb.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn box_cox_truth_gives_zero_moments() {
        let x: Vec<f64> = (1..=20).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * (v - 1.0)).collect();
        let ds = Dataset::from_columns(y, x.clone(), x).unwrap();
        let ms = build_parametric_grid(&ds, &BoxCoxModel, &[0.0, 2.0, 1.0], Conditioning::OnX).unwrap();
        assert!(ms.moments[0].values.iter().all(|w| w.abs() < 1e-12));
    }

    #[test]
    fn far_point_mean_matches_direct_oracle() {
        let ds = small();
        let ms = build_parametric_grid(&ds, &LinearModel { k: 1 }, &[10.0, -1.0], Conditioning::OnZ).unwrap();
        let direct: f64 = (0..4).map(|i| ds.y()[i] - 10.0 + ds.x()[(i, 0)]).sum::<f64>() / 4.0;
        let mean = ms.moments[0].values.iter().sum::<f64>() / 4.0;
        assert!((mean - direct).abs() < 1e-12);
        assert!(mean.abs() > 0.5);
    }

    #[test]
    fn box_cox_domain_error_propagates() {
        let ds = Dataset::from_columns(vec![1.0, 2.0], vec![-1.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            build_parametric_grid(&ds, &BoxCoxModel, &[0.0, 1.0, 0.5], Conditioning::OnZ),
            Err(Error::DomainError(_))
        ));
    }
}
