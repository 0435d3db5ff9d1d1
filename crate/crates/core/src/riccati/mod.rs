//! Matrix Riccati equations in inverse time `τ = T - t`.
//!
//! Every equation here has the form `M' = R(τ, M)` for a quadratic `R`.
//! [`solve`] integrates any such equation together with a scalar trace
//! integral, and `closed_form` holds the special cases that admit explicit
//! solutions.

mod closed_form;
mod solution;

use nalgebra::DMatrix;

use crate::linalg;
use crate::model::{OUParams, Preferences};
use crate::ode;
use crate::{Error, Result};

pub use closed_form::{
    d_common_kappa, d_scalar_closed_form, d_single_mr, d_uncorrelated, single_mr_branch, single_mr_singularity,
    SingleMrBranch,
};
pub use solution::RiccatiSolution;

/// Step control for every Riccati solve.
pub type StepControl = ode::Tolerance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    /// Value-function matrix.
    AMatrix,
    /// Feedback matrix of the position rule.
    DMatrix,
    /// Symmetrized value matrix times the correlation matrix.
    FMatrix,
    /// Moment-generating matrix under a given feedback.
    QMatrix,
}

impl SolutionKind {
    pub fn label(self) -> &'static str {
        match self {
            SolutionKind::AMatrix => "A",
            SolutionKind::DMatrix => "D",
            SolutionKind::FMatrix => "F",
            SolutionKind::QMatrix => "Q",
        }
    }
}

/// Right-hand side of a matrix Riccati equation.
pub trait QuadraticOperator: Sync {
    fn kind(&self) -> SolutionKind;
    fn dim(&self) -> usize;
    fn initial(&self) -> DMatrix<f64>;
    fn apply(&self, tau: f64, m: &DMatrix<f64>) -> DMatrix<f64>;
    /// Integrand of the accompanying trace integral.
    fn trace_rate(&self, tau: f64, m: &DMatrix<f64>) -> f64;
}

/// Operator of the value-function equation:
/// `SΘS/2 - (δ+1)/2 κS - (δ-1)/2 Sκ + δ(δ-1)/2 κΘ⁻¹κ` with `S = A + Aᵀ`.
#[derive(Debug, Clone)]
pub struct AOperator {
    corr: DMatrix<f64>,
    kappa: DMatrix<f64>,
    delta: f64,
    constant: DMatrix<f64>,
}

impl AOperator {
    pub fn new(corr: &DMatrix<f64>, kappa: &[f64], delta: f64) -> Result<Self> {
        check_square(corr, kappa.len())?;
        let corr_inv = linalg::spd_inverse(corr)?;
        let k = linalg::diag(kappa);
        let constant = &k * &corr_inv * &k * (delta * (delta - 1.0) / 2.0);
        Ok(Self {
            corr: corr.clone(),
            kappa: k,
            delta,
            constant,
        })
    }

    pub fn from_model(params: &OUParams, prefs: &Preferences) -> Result<Self> {
        Self::new(&params.corr, &params.kappa, prefs.delta())
    }
}

impl QuadraticOperator for AOperator {
    fn kind(&self) -> SolutionKind {
        SolutionKind::AMatrix
    }

    fn dim(&self) -> usize {
        self.corr.nrows()
    }

    fn initial(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn apply(&self, _tau: f64, a: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.delta;
        let s = a + a.transpose();
        &s * &self.corr * &s * 0.5 - &self.kappa * &s * ((d + 1.0) / 2.0) - &s * &self.kappa * ((d - 1.0) / 2.0)
            + &self.constant
    }

    fn trace_rate(&self, _tau: f64, a: &DMatrix<f64>) -> f64 {
        (a * &self.corr).trace()
    }
}

/// Operator of the feedback equation: `-DᵀΘD + δκΘ⁻¹κ`.
#[derive(Debug, Clone)]
pub struct DOperator {
    corr: DMatrix<f64>,
    constant: DMatrix<f64>,
    initial: DMatrix<f64>,
}

impl DOperator {
    pub fn new(corr: &DMatrix<f64>, kappa: &[f64], delta: f64) -> Result<Self> {
        check_square(corr, kappa.len())?;
        let corr_inv = linalg::spd_inverse(corr)?;
        let k = linalg::diag(kappa);
        let constant = &k * &corr_inv * &k * delta;
        let initial = &corr_inv * &k * delta;
        Ok(Self {
            corr: corr.clone(),
            constant,
            initial,
        })
    }

    pub fn from_model(params: &OUParams, prefs: &Preferences) -> Result<Self> {
        Self::new(&params.corr, &params.kappa, prefs.delta())
    }
}

impl QuadraticOperator for DOperator {
    fn kind(&self) -> SolutionKind {
        SolutionKind::DMatrix
    }

    fn dim(&self) -> usize {
        self.corr.nrows()
    }

    fn initial(&self) -> DMatrix<f64> {
        self.initial.clone()
    }

    fn apply(&self, _tau: f64, d: &DMatrix<f64>) -> DMatrix<f64> {
        &self.constant - d.transpose() * &self.corr * d
    }

    fn trace_rate(&self, _tau: f64, d: &DMatrix<f64>) -> f64 {
        (&self.corr * d).trace()
    }
}

fn check_square(corr: &DMatrix<f64>, n: usize) -> Result<()> {
    if corr.nrows() != n || corr.ncols() != n {
        return Err(Error::Dimension(format!(
            "correlation is {}x{}, rates have {n} entries",
            corr.nrows(),
            corr.ncols()
        )));
    }
    Ok(())
}

/// Evaluates the value-function operator at `a`.
pub fn ric_operator_a(a: &DMatrix<f64>, corr: &DMatrix<f64>, kappa: &[f64], delta: f64) -> Result<DMatrix<f64>> {
    Ok(AOperator::new(corr, kappa, delta)?.apply(0.0, a))
}

/// Evaluates the feedback operator at `d`.
pub fn ric_operator_d(d: &DMatrix<f64>, corr: &DMatrix<f64>, kappa: &[f64], delta: f64) -> Result<DMatrix<f64>> {
    Ok(DOperator::new(corr, kappa, delta)?.apply(0.0, d))
}

fn unpack(n: usize, y: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, &y[..n * n])
}

fn rhs<'a, O: QuadraticOperator + ?Sized>(op: &'a O) -> impl FnMut(f64, &[f64], &mut [f64]) + 'a {
    let n = op.dim();
    move |tau, y, dy| {
        let m = unpack(n, y);
        let dm = op.apply(tau, &m);
        dy[..n * n].copy_from_slice(dm.as_slice());
        dy[n * n] = op.trace_rate(tau, &m);
    }
}

/// Integrates `M' = op(τ, M)` from `M(0) = initial` to `τ = horizon`.
pub fn solve<O: QuadraticOperator + ?Sized>(
    op: &O,
    initial: &DMatrix<f64>,
    horizon: f64,
    ctrl: &StepControl,
) -> Result<RiccatiSolution> {
    let n = op.dim();
    if initial.nrows() != n || initial.ncols() != n {
        return Err(Error::Dimension("initial condition does not match the operator".into()));
    }
    let mut y0 = initial.as_slice().to_vec();
    y0.push(0.0);
    let traj = ode::integrate(rhs(op), &y0, horizon, ctrl)?;
    let values = traj.y.iter().map(|y| unpack(n, y)).collect();
    let derivatives = traj.dy.iter().map(|y| unpack(n, y)).collect();
    let trace_integral = traj.y.iter().map(|y| y[n * n]).collect();
    let trace_rate = traj.dy.iter().map(|y| y[n * n]).collect();
    Ok(RiccatiSolution::from_parts(
        op.kind(),
        traj.t,
        values,
        derivatives,
        trace_integral,
        trace_rate,
        traj.step_error,
    ))
}

/// Solves with the operator's own initial condition.
pub fn solve_default<O: QuadraticOperator + ?Sized>(
    op: &O,
    horizon: f64,
    ctrl: &StepControl,
) -> Result<RiccatiSolution> {
    solve(op, &op.initial(), horizon, ctrl)
}

pub fn solve_a(params: &OUParams, prefs: &Preferences, horizon: f64, ctrl: &StepControl) -> Result<RiccatiSolution> {
    solve_default(&AOperator::from_model(params, prefs)?, horizon, ctrl)
}

pub fn solve_d(params: &OUParams, prefs: &Preferences, horizon: f64, ctrl: &StepControl) -> Result<RiccatiSolution> {
    solve_default(&DOperator::from_model(params, prefs)?, horizon, ctrl)
}

/// Feedback `D = δΘ⁻¹κ - (A + Aᵀ)` on the grid of a value-function solution.
/// The result is exactly symmetric when `Θ⁻¹κ` is.
pub fn d_from_a(a: &RiccatiSolution, corr: &DMatrix<f64>, kappa: &[f64], delta: f64) -> Result<RiccatiSolution> {
    check_square(corr, kappa.len())?;
    if a.kind() != SolutionKind::AMatrix || a.dim() != kappa.len() {
        return Err(Error::InvalidInput(
            "feedback is built from a value-function solution of matching size".into(),
        ));
    }
    let offset = linalg::spd_inverse(corr)? * linalg::diag(kappa) * delta;
    Ok(a.map_affine(SolutionKind::DMatrix, &offset, |m| -(m + m.transpose()), corr))
}

/// For each accepted step, the max-norm gap between one full step and two
/// half steps started from the stored state.
pub fn step_halving_errors<O: QuadraticOperator + ?Sized>(op: &O, sol: &RiccatiSolution) -> Vec<f64> {
    let n = op.dim();
    let mut f = rhs(op);
    let pack = |k: usize| {
        let mut y = sol.values()[k].as_slice().to_vec();
        y.push(sol.trace_integral()[k]);
        let mut dy = sol.derivatives()[k].as_slice().to_vec();
        dy.push(sol.trace_rate()[k]);
        (y, dy)
    };
    let tau = sol.tau();
    let mut out = Vec::with_capacity(tau.len().saturating_sub(1));
    for k in 0..tau.len() - 1 {
        let h = tau[k + 1] - tau[k];
        let (y, dy) = pack(k);
        let (full, _, _) = ode::dp5_step(&mut f, tau[k], &y, &dy, h);
        let (mid, dmid, _) = ode::dp5_step(&mut f, tau[k], &y, &dy, h / 2.0);
        let (halves, _, _) = ode::dp5_step(&mut f, tau[k] + h / 2.0, &mid, &dmid, h / 2.0);
        let gap = full[..n * n]
            .iter()
            .zip(&halves[..n * n])
            .fold(0.0, |acc, (a, b)| f64::max(acc, (a - b).abs()));
        out.push(gap);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{corr2, max_abs_diff};

    fn one(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn a_operator_at_zero() {
        let corr = corr2(0.5);
        let z = DMatrix::zeros(2, 2);
        assert_eq!(ric_operator_a(&z, &corr, &[1.0, 0.5], 1.0).unwrap(), z);
        let k = linalg::diag(&[1.0, 0.5]);
        let expected = &k * linalg::spd_inverse(&corr).unwrap() * &k * (0.2 * (0.2 - 1.0) / 2.0);
        let got = ric_operator_a(&z, &corr, &[1.0, 0.5], 0.2).unwrap();
        assert!(max_abs_diff(&got, &expected) < 1e-15);
    }

    #[test]
    fn scalar_operators_vanish_at_hand_points() {
        let a = ric_operator_a(&one(1.0), &one(1.0), &[1.0], 4.0).unwrap();
        assert_eq!(a[(0, 0)], 0.0);
        let d = ric_operator_d(&one(2.0), &one(1.0), &[1.0], 4.0).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
        let d = ric_operator_d(&one(0.0), &one(1.0), &[1.5], 3.0).unwrap();
        assert_eq!(d[(0, 0)], 3.0 * 1.5 * 1.5);
    }

    #[test]
    fn d_operator_log_fixed_point() {
        let corr = corr2(-0.3);
        let op = DOperator::new(&corr, &[1.0, 0.25], 1.0).unwrap();
        assert!(linalg::max_abs(&op.apply(0.0, &op.initial())) < 1e-14);
    }

    #[test]
    fn log_utility_is_static() {
        let corr = one(1.0);
        let op = DOperator::new(&corr, &[1.0], 1.0).unwrap();
        let sol = solve_default(&op, 3.0, &StepControl::default()).unwrap();
        assert!(sol.values().iter().all(|m| m[(0, 0)] == 1.0));
        assert_eq!(sol.values()[0], one(1.0));
    }

    #[test]
    fn scalar_solve_matches_closed_form() {
        let op = DOperator::new(&one(1.0), &[1.0], 5.0).unwrap();
        let sol = solve_default(&op, 3.0, &StepControl::default()).unwrap();
        for (tau, m) in sol.tau().iter().zip(sol.values()) {
            assert!((m[(0, 0)] - d_scalar_closed_form(1.0, 5.0, *tau)).abs() < 1e-8);
        }
    }

    #[test]
    fn a_solution_starts_at_zero() {
        let op = AOperator::new(&corr2(0.4), &[1.0, 0.5], 0.2).unwrap();
        let sol = solve_default(&op, 3.0, &StepControl::default()).unwrap();
        assert_eq!(sol.values()[0], DMatrix::zeros(2, 2));
        assert_eq!(sol.trace_integral()[0], 0.0);
        assert_eq!(sol.tau()[0], 0.0);
        assert_eq!(*sol.tau().last().unwrap(), 3.0);
        assert!(sol.tau().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn step_halving_below_tolerance() {
        let op = DOperator::new(&corr2(0.5), &[1.0, 0.5], 0.2).unwrap();
        let ctrl = StepControl::default();
        let sol = solve_default(&op, 3.0, &ctrl).unwrap();
        let errs = step_halving_errors(&op, &sol);
        assert_eq!(errs.len(), sol.tau().len() - 1);
        assert!(
            errs.iter().all(|&e| e < ctrl.abs),
            "max {}",
            errs.iter().cloned().fold(0.0, f64::max)
        );
    }

    #[test]
    fn blowup_in_risk_seeking_branch() {
        // single mean-reverting asset with γ above 1/ζ
        let corr = corr2(0.9);
        let prefs = Preferences::new(0.5).unwrap();
        let op = DOperator::new(&corr, &[1.0, 0.0], prefs.delta()).unwrap();
        let tau_star = single_mr_singularity(1.0, &corr, prefs.gamma()).unwrap().unwrap();
        match solve_default(&op, 3.0, &StepControl::default()) {
            Err(Error::BlowUpDetected { tau }) => assert!((tau - tau_star).abs() < 1e-3),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
