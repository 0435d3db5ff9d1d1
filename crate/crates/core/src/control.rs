//! Position rules and value-function evaluation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::model::{NormalizationRecord, OUParams, Preferences};
use crate::riccati::{self, RiccatiSolution, SolutionKind, StepControl};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Optimal,
    Misspecified,
    Custom,
}

/// A linear feedback rule `α = -w D(T - t) x̃` in unit-noise coordinates,
/// together with the record that maps original-coordinate inputs there.
#[derive(Debug, Clone)]
pub struct StrategySpec {
    kind: StrategyKind,
    feedback: Arc<RiccatiSolution>,
    normalization: NormalizationRecord,
    horizon: f64,
}

impl StrategySpec {
    pub fn new(
        kind: StrategyKind,
        feedback: Arc<RiccatiSolution>,
        normalization: NormalizationRecord,
        horizon: f64,
    ) -> Result<Self> {
        if feedback.kind() != SolutionKind::DMatrix {
            return Err(Error::InvalidInput(format!(
                "strategy feedback must be a D solution, got {}",
                feedback.kind().label()
            )));
        }
        if !(horizon > 0.0) || horizon > feedback.horizon() * (1.0 + 1e-12) {
            return Err(Error::OutOfRange {
                tau: horizon,
                horizon: feedback.horizon(),
            });
        }
        if normalization.dim() != feedback.dim() {
            return Err(Error::Dimension("normalization and feedback sizes differ".into()));
        }
        Ok(Self {
            kind,
            feedback,
            normalization,
            horizon,
        })
    }

    /// The optimal rule for `params` and `prefs` on `[0, horizon]`.
    pub fn optimal(params: &OUParams, prefs: &Preferences, horizon: f64, ctrl: &StepControl) -> Result<Self> {
        let (unit, record) = params.normalize()?;
        let a = riccati::solve_a(&unit, prefs, horizon, ctrl)?;
        let d = riccati::d_from_a(&a, &unit.corr, &unit.kappa, prefs.delta())?;
        Self::new(StrategyKind::Optimal, Arc::new(d), record, horizon)
    }

    /// The rule that never holds a position.
    pub fn zero(normalization: NormalizationRecord, horizon: f64) -> Self {
        let n = normalization.dim();
        Self {
            kind: StrategyKind::Custom,
            feedback: Arc::new(RiccatiSolution::zero(SolutionKind::DMatrix, n, horizon)),
            normalization,
            horizon,
        }
    }

    /// Same rule with the feedback multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kind: StrategyKind::Custom,
            feedback: Arc::new(self.feedback.scaled(factor)),
            normalization: self.normalization.clone(),
            horizon: self.horizon,
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn feedback(&self) -> &RiccatiSolution {
        &self.feedback
    }

    pub fn normalization(&self) -> &NormalizationRecord {
        &self.normalization
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.feedback.dim()
    }

    /// `D(T - t)`.
    pub fn feedback_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        self.feedback.interpolate((self.horizon - t).max(0.0))
    }

    /// Position in unit-noise coordinates for a unit-noise state.
    pub fn position_normalized(&self, w: f64, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let d = self.feedback_at(t)?;
        if x.len() != d.nrows() {
            return Err(Error::Dimension("state size does not match strategy".into()));
        }
        Ok(d * x * (-w))
    }

    /// Position in original coordinates: `-w σ⁻¹ D(T-t) σ⁻¹ (x - θ)`.
    pub fn position(&self, w: f64, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if !(w > 0.0) {
            return Err(Error::InvalidInput(format!("wealth must be positive, got {w}")));
        }
        let xn = self.normalization.state_to_unit(x);
        let a = self.position_normalized(w, &xn, t)?;
        Ok(self.normalization.position_from_unit(&a))
    }
}

pub fn optimal_position(w: f64, x: &DVector<f64>, t: f64, spec: &StrategySpec) -> Result<DVector<f64>> {
    spec.position(w, x, t)
}

/// Value function split into its factors, kept in log form where they are
/// exponentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "utility", rename_all = "snake_case")]
pub enum ValueReport {
    /// `J = (w^γ/γ) · exp(log_time_value) · exp(log_intrinsic_value)`.
    Power {
        gamma: f64,
        wealth_utility: f64,
        log_time_value: f64,
        log_intrinsic_value: f64,
    },
    /// Expected log wealth `log w + time_value + intrinsic_value`.
    Log {
        log_wealth: f64,
        time_value: f64,
        intrinsic_value: f64,
    },
}

impl ValueReport {
    pub fn total(&self) -> f64 {
        match *self {
            ValueReport::Power {
                wealth_utility,
                log_time_value,
                log_intrinsic_value,
                ..
            } => wealth_utility * (log_time_value + log_intrinsic_value).exp(),
            ValueReport::Log {
                log_wealth,
                time_value,
                intrinsic_value,
            } => log_wealth + time_value + intrinsic_value,
        }
    }

    pub fn wealth_utility(&self) -> f64 {
        match *self {
            ValueReport::Power { wealth_utility, .. } => wealth_utility,
            ValueReport::Log { log_wealth, .. } => log_wealth,
        }
    }

    /// Multiplicative time factor for power utility, additive term for log.
    pub fn time_value(&self) -> f64 {
        match *self {
            ValueReport::Power { log_time_value, .. } => log_time_value.exp(),
            ValueReport::Log { time_value, .. } => time_value,
        }
    }

    /// Multiplicative state factor for power utility, additive term for log.
    pub fn intrinsic_value(&self) -> f64 {
        match *self {
            ValueReport::Power {
                log_intrinsic_value, ..
            } => log_intrinsic_value.exp(),
            ValueReport::Log { intrinsic_value, .. } => intrinsic_value,
        }
    }
}

fn check_time(t: f64, horizon: f64) -> Result<f64> {
    let slack = 1e-12 * horizon.max(1.0);
    if !(t >= -slack && t <= horizon + slack) {
        return Err(Error::OutOfHorizon { t, horizon });
    }
    Ok((horizon - t).max(0.0))
}

/// Expected log wealth pieces in unit-noise coordinates for log utility.
///
/// The drift of `log W` under `D = Θ⁻¹κ` is `½ xᵀκΘ⁻¹κx`; integrating the OU
/// second moments gives both pieces in closed form.
fn log_utility_terms(params: &OUParams, x: &DVector<f64>, tau: f64) -> Result<(f64, f64)> {
    let n = params.n;
    let inv = params.corr_inverse()?;
    let k = &params.kappa;
    let mut time = 0.0;
    let mut intrinsic = 0.0;
    for i in 0..n {
        for j in 0..n {
            let m = k[i] * inv[(i, j)] * k[j];
            if m == 0.0 {
                continue;
            }
            let s = k[i] + k[j];
            let g = -(-s * tau).exp_m1() / s;
            intrinsic += 0.5 * m * g * x[i] * x[j];
            time += 0.5 * m * params.corr[(i, j)] * (tau - g) / s;
        }
    }
    Ok((time, intrinsic))
}

/// `J(w, x, t)` for the problem whose value-function matrix is `a_solution`
/// (solved in unit-noise coordinates up to the horizon `T`). `x` is in the
/// original coordinates of `params`.
pub fn value_function(
    w: f64,
    x: &DVector<f64>,
    t: f64,
    a_solution: &RiccatiSolution,
    prefs: &Preferences,
    params: &OUParams,
) -> Result<ValueReport> {
    if !(w > 0.0) {
        return Err(Error::InvalidInput(format!("wealth must be positive, got {w}")));
    }
    if x.len() != params.n || a_solution.dim() != params.n {
        return Err(Error::Dimension("state, solution and model sizes differ".into()));
    }
    let tau = check_time(t, a_solution.horizon())?;
    let (unit, record) = params.normalize()?;
    let xn = record.state_to_unit(x);
    if prefs.is_log() {
        let (time_value, intrinsic_value) = log_utility_terms(&unit, &xn, tau)?;
        return Ok(ValueReport::Log {
            log_wealth: w.ln(),
            time_value,
            intrinsic_value,
        });
    }
    if a_solution.kind() != SolutionKind::AMatrix {
        return Err(Error::InvalidInput("value function needs an A solution".into()));
    }
    let delta = prefs.delta();
    let a = a_solution.interpolate(tau)?;
    let quad = xn.dot(&(&a * &xn));
    let gamma = prefs.gamma();
    Ok(ValueReport::Power {
        gamma,
        wealth_utility: w.powf(gamma) / gamma,
        log_time_value: a_solution.interpolate_trace(tau)? / delta,
        log_intrinsic_value: quad / delta,
    })
}

/// `J(w, θ, t)`: the value function with no open opportunity.
pub fn value_at_mean(
    w: f64,
    t: f64,
    a_solution: &RiccatiSolution,
    prefs: &Preferences,
    params: &OUParams,
) -> Result<f64> {
    let theta = DVector::from_column_slice(&params.theta);
    let report = value_function(w, &theta, t, a_solution, prefs, params)?;
    Ok(match report {
        ValueReport::Power {
            wealth_utility,
            log_time_value,
            ..
        } => wealth_utility * log_time_value.exp(),
        ValueReport::Log {
            log_wealth, time_value, ..
        } => log_wealth + time_value,
    })
}

/// Solves the value-function equation for `params` (after normalization).
pub fn solve_value(
    params: &OUParams,
    prefs: &Preferences,
    horizon: f64,
    ctrl: &StepControl,
) -> Result<RiccatiSolution> {
    let (unit, _) = params.normalize()?;
    riccati::solve_a(&unit, prefs, horizon, ctrl)
}
