//! Correlation sensitivity of the value function, closed-form auxiliary
//! functions at `Θ = I`, and parameter sweeps.
//!
//! The symmetrized value matrix `F = (A + Aᵀ)Θ/2` obeys
//! `F' = 2F² - δ(κF + FΓ) + δ(δ-1)/2 κΓ` with `Γ = Θ⁻¹κΘ`, and
//! `∫Tr F = ∫Tr(AΘ)`. At `Θ = I` it is diagonal with entries `Ψ(κ_i, τ)`.

mod auxiliary;
mod grid;
mod sensitivity;
mod sweeps;

use nalgebra::DMatrix;

use crate::linalg::diag;
use crate::model::{OUParams, Preferences};
use crate::riccati::{self, QuadraticOperator, RiccatiSolution, SolutionKind, StepControl};
use crate::Result;

pub use auxiliary::{
    lambda_closed_form, lambda_ode, lambda_rate, phi_diagonal, psi_closed_form, psi_integral, psi_rate, psi_shifted,
    PhiDiagonal,
};
pub use grid::{Axis, SensitivityGrid};
pub use sensitivity::{
    corr_sensitivity, gamma_first, gamma_mixed_second, matrix_calculus_checks, similarity_transform,
    CorrSensitivityReport, FdEstimate, IdentityCheck, MatrixCalculusReport, MixedDerivative, DEFAULT_STEP,
    IDENTITY_STEP, IDENTITY_TOLERANCE,
};
pub use sweeps::{d_curve_1d, value_vs_correlation, value_vs_kappa2_rho};

#[derive(Debug, Clone)]
pub struct FOperator {
    kappa: DMatrix<f64>,
    gamma: DMatrix<f64>,
    delta: f64,
    constant: DMatrix<f64>,
}

impl FOperator {
    pub fn new(corr: &DMatrix<f64>, kappa: &[f64], delta: f64) -> Result<Self> {
        let k = diag(kappa);
        let gamma = similarity_transform(corr, kappa)?;
        let constant = &k * &gamma * (delta * (delta - 1.0) / 2.0);
        Ok(Self {
            kappa: k,
            gamma,
            delta,
            constant,
        })
    }
}

impl QuadraticOperator for FOperator {
    fn kind(&self) -> SolutionKind {
        SolutionKind::FMatrix
    }

    fn dim(&self) -> usize {
        self.kappa.nrows()
    }

    fn initial(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn apply(&self, _tau: f64, f: &DMatrix<f64>) -> DMatrix<f64> {
        f * f * 2.0 - (&self.kappa * f + f * &self.gamma) * self.delta + &self.constant
    }

    fn trace_rate(&self, _tau: f64, f: &DMatrix<f64>) -> f64 {
        f.trace()
    }
}

/// Solves for `F` on the normalized model.
pub fn solve_f(params: &OUParams, prefs: &Preferences, horizon: f64, ctrl: &StepControl) -> Result<RiccatiSolution> {
    let (unit, _) = params.normalize()?;
    let op = FOperator::new(&unit.corr, &unit.kappa, prefs.delta())?;
    riccati::solve_default(&op, horizon, ctrl)
}

/// `(A + Aᵀ)Θ/2` for each stored value of an `A` solution.
pub fn f_from_a(a: &RiccatiSolution, corr: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    a.values().iter().map(|m| (m + m.transpose()) * corr * 0.5).collect()
}
