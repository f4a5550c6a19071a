//! Model specifications: functional form, assumptions under test and the
//! conditioning variable.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{self, BoxCoxFit, FitSummary, LinearFit, ResidualFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assumption {
    Exogeneity,
    Homoskedasticity,
}

/// Which variable the moments are conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioning {
    /// Instruments; the first step is IV (or GMM when over-identified).
    OnZ,
    /// Regressors themselves; the first step is OLS.
    OnX,
}

/// A parametric regression function `m(x, θ)` supplied by the user.
pub trait ParametricModel: Send + Sync {
    fn name(&self) -> String;
    fn n_params(&self) -> usize;
    /// Evaluates `m` on one regressor row; fails outside its domain.
    fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<f64>;
}

/// `θ₀ + θ₁x₁ + … + θ_k x_k`.
#[derive(Debug, Clone, Copy)]
pub struct LinearModel {
    pub k: usize,
}

impl ParametricModel for LinearModel {
    fn name(&self) -> String {
        "linear".into()
    }
    fn n_params(&self) -> usize {
        self.k + 1
    }
    fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        Ok(theta[0] + x.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>())
    }
}

/// `θ₀ + θ₁ x^{(θ₂)}` for scalar `x > 0`.
#[derive(Debug, Clone, Copy)]
pub struct BoxCoxModel;

impl ParametricModel for BoxCoxModel {
    fn name(&self) -> String {
        "box-cox".into()
    }
    fn n_params(&self) -> usize {
        3
    }
    fn evaluate(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        if x[0] <= 0.0 {
            return Err(Error::DomainError(format!("Box-Cox model needs x > 0, got {}", x[0])));
        }
        Ok(theta[0] + theta[1] * estimators::box_cox(x[0], theta[2]))
    }
}

#[derive(Clone)]
pub enum FunctionalForm {
    Linear,
    BoxCox { lambda_grid: Vec<f64> },
    /// A user model checked at fixed parameter points; no estimation step.
    UserParametric { model: Arc<dyn ParametricModel>, theta_grid: Vec<Vec<f64>> },
}

impl fmt::Debug for FunctionalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalForm::Linear => f.write_str("Linear"),
            FunctionalForm::BoxCox { lambda_grid } => write!(f, "BoxCox({} lambdas)", lambda_grid.len()),
            FunctionalForm::UserParametric { model, theta_grid } => {
                write!(f, "UserParametric({}, {} points)", model.name(), theta_grid.len())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub form: FunctionalForm,
    pub intercept: bool,
    pub assumptions: Vec<Assumption>,
    pub conditioning: Conditioning,
}

impl ModelSpec {
    /// Linear model with an intercept, testing exogeneity and optionally
    /// homoskedasticity.
    pub fn linear(conditioning: Conditioning, homoskedasticity: bool) -> Self {
        let mut assumptions = vec![Assumption::Exogeneity];
        if homoskedasticity {
            assumptions.push(Assumption::Homoskedasticity);
        }
        Self { form: FunctionalForm::Linear, intercept: true, assumptions, conditioning }
    }

    pub fn box_cox(conditioning: Conditioning, lambda_grid: Vec<f64>) -> Self {
        Self {
            form: FunctionalForm::BoxCox { lambda_grid },
            intercept: true,
            assumptions: vec![Assumption::Exogeneity],
            conditioning,
        }
    }

    pub fn tests(&self, a: Assumption) -> bool {
        self.assumptions.contains(&a)
    }

    /// Homoskedasticity is always tested together with exogeneity.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.assumptions.is_empty() {
            return Err(Error::InvalidSpec("no assumption selected".into()));
        }
        if self.tests(Assumption::Homoskedasticity) && !self.tests(Assumption::Exogeneity) {
            return Err(Error::InvalidSpec("homoskedasticity is tested jointly with exogeneity".into()));
        }
        match &self.form {
            FunctionalForm::BoxCox { .. } if ds.kx() != 1 => {
                Err(Error::InvalidSpec("the Box-Cox form needs a scalar regressor".into()))
            }
            FunctionalForm::UserParametric { theta_grid, .. } if theta_grid.is_empty() => Err(Error::EmptyGrid),
            FunctionalForm::UserParametric { model, theta_grid } => {
                match theta_grid.iter().find(|t| t.len() != model.n_params()) {
                    Some(t) => Err(Error::InvalidSpec(format!(
                        "parameter point of length {} for a model with {} parameters",
                        t.len(),
                        model.n_params()
                    ))),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// The estimated first step whose residuals feed the moment system.
#[derive(Debug, Clone)]
pub enum FirstStep {
    Linear(LinearFit),
    BoxCox(BoxCoxFit),
}

impl FirstStep {
    pub fn residuals(&self) -> &[f64] {
        match self {
            FirstStep::Linear(f) => f.residuals(),
            FirstStep::BoxCox(f) => f.residuals(),
        }
    }

    pub fn summary(&self) -> FitSummary {
        match self {
            FirstStep::Linear(f) => f.summary(),
            FirstStep::BoxCox(f) => f.summary(),
        }
    }
}

/// Fits the first step implied by `spec`: OLS when conditioning on `X`;
/// just-identified IV, or two-step GMM with instruments `(1, Z)` when
/// `k_z > k_x`, when conditioning on `Z`.
pub fn fit_first_step(ds: &Dataset, spec: &ModelSpec) -> Result<FirstStep> {
    spec.validate(ds)?;
    match (&spec.form, spec.conditioning) {
        (FunctionalForm::Linear, Conditioning::OnX) => Ok(FirstStep::Linear(estimators::fit_ols(ds, spec.intercept)?)),
        (FunctionalForm::Linear, Conditioning::OnZ) if ds.kz() == ds.kx() => {
            Ok(FirstStep::Linear(estimators::fit_iv(ds, spec.intercept)?))
        }
        (FunctionalForm::Linear, Conditioning::OnZ) => Ok(FirstStep::Linear(estimators::fit_gmm2step(
            ds,
            &estimators::InstrumentFn::Identity,
            spec.intercept,
        )?)),
        (FunctionalForm::BoxCox { lambda_grid }, c) => {
            Ok(FirstStep::BoxCox(estimators::fit_boxcox(ds, lambda_grid, c == Conditioning::OnZ)?))
        }
        (FunctionalForm::UserParametric { .. }, _) => Err(Error::InvalidSpec(
            "user parametric forms are checked point by point through the identified-set search".into(),
        )),
    }
}
