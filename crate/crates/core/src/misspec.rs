//! Strategies built from estimated parameters and the moments of the wealth
//! they generate.
//!
//! Everything is expressed in the true model's unit-noise coordinates. A
//! strategy computed from estimates `(κ̂, σ̂, Θ̂)` acts there as the feedback
//! `D_eff = G [δΘ̂⁻¹κ̂ - (Â + Âᵀ)] G` with `G = σσ̂⁻¹`, so `β = -D_eff`. The
//! moments `P_ε = E[W_T^ε/ε]` then follow from a Riccati equation in `Q`
//! driven by `β(τ)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{Axis, SensitivityGrid};
use crate::control::{self, StrategyKind, StrategySpec};
use crate::linalg::{self, diag};
use crate::model::{OUParams, Preferences};
use crate::riccati::{self, AOperator, QuadraticOperator, RiccatiSolution, SolutionKind, StepControl};
use crate::{Error, Result};

/// Estimated rates, volatilities and correlations. Long-term means are taken
/// as known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedParams {
    pub kappa_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    #[serde(with = "corr_rows")]
    pub corr_hat: DMatrix<f64>,
}

mod corr_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        crate::linalg::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        crate::linalg::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl EstimatedParams {
    pub fn exact(params: &OUParams) -> Self {
        Self {
            kappa_hat: params.kappa.clone(),
            sigma_hat: params.sigma.clone(),
            corr_hat: params.corr.clone(),
        }
    }

    /// True parameters with each rate multiplied by the matching entry.
    pub fn kappa_scaled(params: &OUParams, multipliers: &[f64]) -> Result<Self> {
        if multipliers.len() != params.n {
            return Err(Error::Dimension("one multiplier per asset expected".into()));
        }
        let mut est = Self::exact(params);
        for (k, m) in est.kappa_hat.iter_mut().zip(multipliers) {
            *k *= m;
        }
        Ok(est)
    }

    /// The estimated model as a full parameter set sharing `theta`.
    pub fn as_model(&self, truth: &OUParams) -> Result<OUParams> {
        OUParams::new(
            self.kappa_hat.clone(),
            self.sigma_hat.clone(),
            truth.theta.clone(),
            self.corr_hat.clone(),
        )
    }

    pub fn validate(&self, truth: &OUParams) -> Result<()> {
        self.as_model(truth).map(|_| ())
    }
}

/// `G = σσ̂⁻¹` as a diagonal matrix.
fn vol_ratio(truth: &OUParams, est: &EstimatedParams) -> DMatrix<f64> {
    let g: Vec<f64> = truth.sigma.iter().zip(&est.sigma_hat).map(|(s, h)| s / h).collect();
    diag(&g)
}

/// Value-function matrix `Â` of the estimated model.
pub fn solve_estimated_a(
    truth: &OUParams,
    est: &EstimatedParams,
    prefs: &Preferences,
    horizon: f64,
    ctrl: &StepControl,
) -> Result<RiccatiSolution> {
    let model = est.as_model(truth)?;
    let op = AOperator::new(&model.corr, &model.kappa, prefs.delta())?;
    riccati::solve_default(&op, horizon, ctrl)
}

/// Effective feedback in true unit-noise coordinates built from `Â`.
fn effective_feedback(
    truth: &OUParams,
    est: &EstimatedParams,
    prefs: &Preferences,
    a_hat: &RiccatiSolution,
) -> Result<RiccatiSolution> {
    let g = vol_ratio(truth, est);
    let inv_hat = linalg::spd_inverse(&est.corr_hat)?;
    let offset = &g * &inv_hat * diag(&est.kappa_hat) * &g * prefs.delta();
    let linear = |m: &DMatrix<f64>| -(&g * (m + m.transpose()) * &g);
    Ok(a_hat.map_affine(SolutionKind::DMatrix, &offset, linear, &truth.corr))
}

/// The strategy a trader who believes `est` would run, seen in the true model.
pub fn misspecified_strategy(
    truth: &OUParams,
    est: &EstimatedParams,
    prefs: &Preferences,
    horizon: f64,
    ctrl: &StepControl,
) -> Result<StrategySpec> {
    let a_hat = solve_estimated_a(truth, est, prefs, horizon, ctrl)?;
    let feedback = effective_feedback(truth, est, prefs, &a_hat)?;
    let (_, record) = truth.normalize()?;
    StrategySpec::new(StrategyKind::Misspecified, Arc::new(feedback), record, horizon)
}

/// `β(τ) = G[-δΘ̂⁻¹κ̂ + (Â + Âᵀ)]G` with `Â` interpolated at `τ`.
pub fn beta_matrix(
    truth: &OUParams,
    est: &EstimatedParams,
    prefs: &Preferences,
    a_hat: &RiccatiSolution,
    tau: f64,
) -> Result<DMatrix<f64>> {
    let g = vol_ratio(truth, est);
    let inv_hat = linalg::spd_inverse(&est.corr_hat)?;
    let a = a_hat.interpolate(tau)?;
    let inner = -(&inv_hat * diag(&est.kappa_hat)) * prefs.delta() + &a + a.transpose();
    Ok(&g * inner * &g)
}

/// Moment operator
/// `SΘS/2 + (εβᵀΘ - κ)S + ε(ε-1)/2 βᵀΘβ - εβᵀκ`, `S = Q + Qᵀ`,
/// with `β(τ) = -D(τ)` read from a strategy's feedback.
pub struct QOperator<'a> {
    corr: DMatrix<f64>,
    kappa: DMatrix<f64>,
    epsilon: f64,
    feedback: &'a RiccatiSolution,
}

impl<'a> QOperator<'a> {
    pub fn new(epsilon: f64, unit: &OUParams, feedback: &'a RiccatiSolution) -> Result<Self> {
        if !unit.is_normalized() {
            return Err(Error::NotNormalized);
        }
        if feedback.dim() != unit.n {
            return Err(Error::Dimension("feedback and model sizes differ".into()));
        }
        Ok(Self {
            corr: unit.corr.clone(),
            kappa: unit.kappa_matrix(),
            epsilon,
            feedback,
        })
    }

    fn beta(&self, tau: f64) -> DMatrix<f64> {
        -self
            .feedback
            .interpolate(tau)
            .expect("stages stay inside the feedback grid")
    }
}

impl QuadraticOperator for QOperator<'_> {
    fn kind(&self) -> SolutionKind {
        SolutionKind::QMatrix
    }

    fn dim(&self) -> usize {
        self.corr.nrows()
    }

    fn initial(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn apply(&self, tau: f64, q: &DMatrix<f64>) -> DMatrix<f64> {
        let e = self.epsilon;
        let beta = self.beta(tau);
        let bt = beta.transpose();
        let s = q + q.transpose();
        let bt_corr = &bt * &self.corr;
        &s * &self.corr * &s * 0.5 + (&bt_corr * e - &self.kappa) * &s + &bt_corr * &beta * (e * (e - 1.0) / 2.0)
            - &bt * &self.kappa * e
    }

    fn trace_rate(&self, _tau: f64, q: &DMatrix<f64>) -> f64 {
        (&self.corr * q).trace()
    }
}

/// `Q` for any strategy on `[0, spec.horizon()]`.
pub fn solve_q_for(epsilon: f64, spec: &StrategySpec, truth: &OUParams, ctrl: &StepControl) -> Result<RiccatiSolution> {
    let (unit, _) = truth.normalize()?;
    let op = QOperator::new(epsilon, &unit, spec.feedback())?;
    riccati::solve_default(&op, spec.horizon(), ctrl)
}

/// `Q` for the strategy built from `est`.
pub fn solve_q(
    epsilon: f64,
    truth: &OUParams,
    est: &EstimatedParams,
    prefs: &Preferences,
    horizon: f64,
    ctrl: &StepControl,
) -> Result<RiccatiSolution> {
    let spec = misspecified_strategy(truth, est, prefs, horizon, ctrl)?;
    solve_q_for(epsilon, &spec, truth, ctrl)
}

/// `P_ε` split into its factors, the exponential ones kept as logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentReport {
    pub epsilon: f64,
    pub p_value: f64,
    /// `w^ε / ε`.
    pub wealth_factor: f64,
    pub log_trace_factor: f64,
    pub log_quadratic_factor: f64,
}

/// `P_ε(w, x, t) = (w^ε/ε) exp{∫₀^{T-t} Tr(ΘQ)} exp{x̃ᵀQ(T-t)x̃}`, `x̃ = σ⁻¹(x - θ)`.
pub fn p_epsilon(
    w: f64,
    x: &DVector<f64>,
    t: f64,
    epsilon: f64,
    q_solution: &RiccatiSolution,
    truth: &OUParams,
) -> Result<MomentReport> {
    if epsilon == 0.0 {
        return Err(Error::InvalidInput(
            "zero exponent has no power moment; use the log value".into(),
        ));
    }
    if !(w > 0.0) {
        return Err(Error::InvalidInput(format!("wealth must be positive, got {w}")));
    }
    if q_solution.kind() != SolutionKind::QMatrix {
        return Err(Error::InvalidInput("moments need a Q solution".into()));
    }
    let horizon = q_solution.horizon();
    let slack = 1e-12 * horizon.max(1.0);
    if !(t >= -slack && t <= horizon + slack) {
        return Err(Error::OutOfHorizon { t, horizon });
    }
    let tau = (horizon - t).max(0.0);
    let (_, record) = truth.normalize()?;
    let xn = record.state_to_unit(x);
    let q = q_solution.interpolate(tau)?;
    let wealth_factor = w.powf(epsilon) / epsilon;
    let log_trace_factor = q_solution.interpolate_trace(tau)?;
    let log_quadratic_factor = xn.dot(&(&q * &xn));
    Ok(MomentReport {
        epsilon,
        p_value: wealth_factor * (log_trace_factor + log_quadratic_factor).exp(),
        wealth_factor,
        log_trace_factor,
        log_quadratic_factor,
    })
}

/// Sharpe ratio `P₁ / √(2P₂ - P₁²)` of terminal wealth.
pub fn sharpe(
    w: f64,
    x: &DVector<f64>,
    t: f64,
    q1: &RiccatiSolution,
    q2: &RiccatiSolution,
    truth: &OUParams,
) -> Result<f64> {
    let p1 = p_epsilon(w, x, t, 1.0, q1, truth)?.p_value;
    let p2 = p_epsilon(w, x, t, 2.0, q2, truth)?.p_value;
    let var = 2.0 * p2 - p1 * p1;
    if !(var > 1e-12 * p1 * p1) {
        return Err(Error::NonPositiveVariance(var));
    }
    Ok(p1 / var.sqrt())
}

/// Outcome of a rate-misestimation sweep.
#[derive(Debug, Clone, Serialize)]
pub struct MisspecSweep {
    /// `P_γ(estimated) - J(true)` per cell.
    pub delta_value: SensitivityGrid,
    pub sharpe: SensitivityGrid,
    pub true_value: f64,
    /// Cells whose `P_γ` moment equation blew up before the horizon: the
    /// expected utility of the misspecified strategy is infinite there.
    pub diverged: Vec<(usize, usize)>,
}

impl MisspecSweep {
    /// `J(true) - P_γ(estimated)`, infinite for diverged cells and NaN for
    /// cells that could not be evaluated.
    pub fn loss(&self, i: usize, j: usize) -> f64 {
        if self.diverged.contains(&(i, j)) {
            f64::INFINITY
        } else {
            -self.delta_value.get(i, j)
        }
    }
}

struct CellOutcome {
    delta: std::result::Result<f64, String>,
    diverged: bool,
    sharpe: std::result::Result<f64, String>,
}

fn sweep_cell(
    truth: &OUParams,
    prefs: &Preferences,
    horizon: f64,
    x0: &DVector<f64>,
    multipliers: &[f64],
    true_value: f64,
    ctrl: &StepControl,
) -> CellOutcome {
    let spec = EstimatedParams::kappa_scaled(truth, multipliers)
        .and_then(|est| misspecified_strategy(truth, &est, prefs, horizon, ctrl));
    let spec = match spec {
        Ok(s) => s,
        Err(e) => {
            return CellOutcome {
                delta: Err(e.to_string()),
                diverged: false,
                sharpe: Err(e.to_string()),
            }
        }
    };
    let (delta, diverged) = match solve_q_for(prefs.gamma(), &spec, truth, ctrl) {
        Ok(q) => (
            p_epsilon(1.0, x0, 0.0, prefs.gamma(), &q, truth)
                .map(|r| r.p_value - true_value)
                .map_err(|e| e.to_string()),
            false,
        ),
        Err(Error::BlowUpDetected { tau }) => (
            Err(format!(
                "expected utility diverges: moment equation blew up at tau = {tau}"
            )),
            true,
        ),
        Err(e) => (Err(e.to_string()), false),
    };
    let sharpe = solve_q_for(1.0, &spec, truth, ctrl)
        .and_then(|q1| solve_q_for(2.0, &spec, truth, ctrl).and_then(|q2| sharpe(1.0, x0, 0.0, &q1, &q2, truth)))
        .map_err(|e| e.to_string());
    CellOutcome {
        delta,
        diverged,
        sharpe,
    }
}

/// Sweeps multipliers of the first two reversion rates. Cells whose solves
/// fail are stored as NaN with the failure as their reason.
pub fn misspec_sweep(
    truth: &OUParams,
    prefs: &Preferences,
    horizon: f64,
    x0: &DVector<f64>,
    axis1: &[f64],
    axis2: &[f64],
    ctrl: &StepControl,
) -> Result<MisspecSweep> {
    if truth.n < 2 {
        return Err(Error::Dimension("rate sweep needs at least two assets".into()));
    }
    if prefs.is_log() {
        return Err(Error::InvalidInput("rate sweep needs a nonzero risk aversion".into()));
    }
    if let Some(bad) = axis1.iter().chain(axis2).find(|m| !(**m > 0.0)) {
        return Err(Error::InvalidInput(format!("multipliers must be positive, got {bad}")));
    }
    let a = control::solve_value(truth, prefs, horizon, ctrl)?;
    let true_value = control::value_function(1.0, x0, 0.0, &a, prefs, truth)?.total();

    let cells: Vec<(usize, usize)> = (0..axis1.len())
        .flat_map(|i| (0..axis2.len()).map(move |j| (i, j)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(i, j)| {
            let mut m = vec![1.0; truth.n];
            m[0] = axis1[i];
            m[1] = axis2[j];
            sweep_cell(truth, prefs, horizon, x0, &m, true_value, ctrl)
        })
        .collect();

    let ax1 = Axis::new("kappa1_multiplier", axis1.to_vec());
    let ax2 = Axis::new("kappa2_multiplier", axis2.to_vec());
    let mut delta_value = SensitivityGrid::new(ax1.clone(), ax2.clone(), "delta_value");
    let mut sharpe_grid = SensitivityGrid::new(ax1, ax2, "sharpe");
    let mut diverged = Vec::new();
    for (&(i, j), outcome) in cells.iter().zip(outcomes) {
        if outcome.diverged {
            diverged.push((i, j));
        }
        delta_value.set_result(i, j, outcome.delta);
        sharpe_grid.set_result(i, j, outcome.sharpe);
    }
    for grid in [&mut delta_value, &mut sharpe_grid] {
        grid.metadata.insert("gamma".into(), prefs.gamma().to_string());
        grid.metadata.insert("horizon".into(), horizon.to_string());
        grid.metadata.insert("kappa".into(), format!("{:?}", truth.kappa));
        grid.metadata.insert("true_value".into(), true_value.to_string());
    }
    Ok(MisspecSweep {
        delta_value,
        sharpe: sharpe_grid,
        true_value,
        diverged,
    })
}
