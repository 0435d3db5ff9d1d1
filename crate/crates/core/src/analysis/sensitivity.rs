//! Finite-difference sensitivities of the value function to correlations at
//! `Θ = I`, and the matrix identities behind them.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::control;
use crate::linalg::{self, diag, pair_indicator};
use crate::model::{OUParams, Preferences};
use crate::riccati::StepControl;
use crate::{Error, Result};

/// Default correlation step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Relative rounding noise assumed for a single value evaluation.
const EVAL_NOISE: f64 = 64.0 * f64::EPSILON;

const MAX_HALVINGS: usize = 30;

/// Richardson-extrapolated difference quotient built from steps `h` and `h/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdEstimate {
    pub value: f64,
    /// `|fine - coarse| / 3` plus a rounding floor.
    pub error: f64,
    pub coarse: f64,
    pub fine: f64,
}

impl FdEstimate {
    /// Combines second-order quotients at `h` and `h/2`. `floor` bounds the
    /// rounding error of the fine quotient.
    fn richardson(coarse: f64, fine: f64, floor: f64) -> Self {
        Self {
            value: (4.0 * fine - coarse) / 3.0,
            error: (fine - coarse).abs() / 3.0 + floor,
            coarse,
            fine,
        }
    }

    /// True when the estimate cannot be told apart from zero at `k` error
    /// widths.
    pub fn consistent_with_zero(&self, k: f64) -> bool {
        self.value.abs() <= k * self.error
    }

    /// Sign of the estimate when it clears its own error, `0` otherwise.
    pub fn resolved_sign(&self) -> i32 {
        if self.value.abs() <= self.error {
            0
        } else if self.value > 0.0 {
            1
        } else {
            -1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixedDerivative {
    pub pair: (usize, usize),
    pub estimate: FdEstimate,
}

/// Derivatives of `J(1, θ, 0)` in one correlation at `Θ = I`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrSensitivityReport {
    pub pair: (usize, usize),
    pub value: f64,
    pub first_derivative: FdEstimate,
    pub second_derivative: FdEstimate,
    /// Second partials against every other pair.
    pub mixed_derivatives: Vec<MixedDerivative>,
    /// Step actually used after any shrinking.
    pub step: f64,
}

fn check_pair(n: usize, pair: (usize, usize)) -> Result<()> {
    if pair.0 == pair.1 || pair.0 >= n || pair.1 >= n {
        return Err(Error::InvalidInput(format!(
            "{pair:?} is not an off-diagonal pair for n = {n}"
        )));
    }
    Ok(())
}

fn ordered(pair: (usize, usize)) -> (usize, usize) {
    (pair.0.min(pair.1), pair.0.max(pair.1))
}

/// `J(1, θ, 0)` with the correlation entries shifted by the given amounts.
fn value_at(
    params: &OUParams,
    prefs: &Preferences,
    horizon: f64,
    shifts: &[((usize, usize), f64)],
    ctrl: &StepControl,
) -> Result<f64> {
    let mut corr = params.corr.clone();
    for &((i, j), s) in shifts {
        corr[(i, j)] += s;
        corr[(j, i)] += s;
    }
    let p = OUParams::new(params.kappa.clone(), params.sigma.clone(), params.theta.clone(), corr)?;
    let a = control::solve_value(&p, prefs, horizon, ctrl)?;
    control::value_at_mean(1.0, 0.0, &a, prefs, &p)
}

struct Evaluations {
    j0: f64,
    first: [f64; 2],
    second: [f64; 2],
    mixed: Vec<((usize, usize), [f64; 2])>,
}

fn evaluate(
    params: &OUParams,
    prefs: &Preferences,
    horizon: f64,
    pair: (usize, usize),
    others: &[(usize, usize)],
    h: f64,
    ctrl: &StepControl,
) -> Result<Evaluations> {
    let j = |shifts: &[((usize, usize), f64)]| value_at(params, prefs, horizon, shifts, ctrl);
    let j0 = j(&[])?;
    let mut first = [0.0; 2];
    let mut second = [0.0; 2];
    for (k, step) in [h, h / 2.0].into_iter().enumerate() {
        let up = j(&[(pair, step)])?;
        let down = j(&[(pair, -step)])?;
        first[k] = (up - down) / (2.0 * step);
        second[k] = (up - 2.0 * j0 + down) / (step * step);
    }
    let mut mixed = Vec::with_capacity(others.len());
    for &other in others {
        let mut q = [0.0; 2];
        for (k, step) in [h, h / 2.0].into_iter().enumerate() {
            let pp = j(&[(pair, step), (other, step)])?;
            let pm = j(&[(pair, step), (other, -step)])?;
            let mp = j(&[(pair, -step), (other, step)])?;
            let mm = j(&[(pair, -step), (other, -step)])?;
            q[k] = (pp - pm - mp + mm) / (4.0 * step * step);
        }
        mixed.push((other, q));
    }
    Ok(Evaluations {
        j0,
        first,
        second,
        mixed,
    })
}

/// Central differences of `J(1, θ, 0)` in `ρ_mn` at `Θ = I`, with Richardson
/// extrapolation between `h` and `h/2`. The step halves until every
/// perturbed matrix is positive definite.
pub fn corr_sensitivity(
    params: &OUParams,
    prefs: &Preferences,
    horizon: f64,
    pair: (usize, usize),
    h: f64,
    ctrl: &StepControl,
) -> Result<CorrSensitivityReport> {
    let n = params.n;
    check_pair(n, pair)?;
    if linalg::max_abs_diff(&params.corr, &DMatrix::identity(n, n)) != 0.0 {
        return Err(Error::InvalidInput(
            "correlation sensitivities are taken at the identity".into(),
        ));
    }
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidInput(format!("step must lie in (0, 1), got {h}")));
    }
    let pair = ordered(pair);
    let others: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&p| p != pair)
        .collect();

    let mut step = h;
    let mut halvings = 0;
    let evals = loop {
        match evaluate(params, prefs, horizon, pair, &others, step, ctrl) {
            Err(Error::NotPositiveDefinite(_)) if halvings < MAX_HALVINGS => {
                step /= 2.0;
                halvings += 1;
            }
            other => break other?,
        }
    };

    let fine = step / 2.0;
    let scale = evals.j0.abs();
    let first_floor = EVAL_NOISE * scale / fine;
    let second_floor = 4.0 * EVAL_NOISE * scale / (fine * fine);
    Ok(CorrSensitivityReport {
        pair,
        value: evals.j0,
        first_derivative: FdEstimate::richardson(evals.first[0], evals.first[1], first_floor),
        second_derivative: FdEstimate::richardson(evals.second[0], evals.second[1], second_floor),
        mixed_derivatives: evals
            .mixed
            .into_iter()
            .map(|(p, q)| MixedDerivative {
                pair: p,
                estimate: FdEstimate::richardson(q[0], q[1], second_floor),
            })
            .collect(),
        step,
    })
}

/// One identity checked entrywise against finite differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: &str, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixCalculusReport {
    pub checks: Vec<IdentityCheck>,
}

impl MatrixCalculusReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Step used for the identity checks.
pub const IDENTITY_STEP: f64 = 1e-4;
/// Entrywise tolerance of the identity checks.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

/// `Γ = Θ⁻¹κΘ`.
pub fn similarity_transform(corr: &DMatrix<f64>, kappa: &[f64]) -> Result<DMatrix<f64>> {
    Ok(linalg::spd_inverse(corr)? * diag(kappa) * corr)
}

/// Closed-form second derivative of `Γ` in two correlations at `Θ = I`:
/// `I^pq I^mn κ + I^mn I^pq κ - I^mn κ I^pq - I^pq κ I^mn`.
pub fn gamma_mixed_second(kappa: &[f64], mn: (usize, usize), pq: (usize, usize)) -> DMatrix<f64> {
    let n = kappa.len();
    let k = diag(kappa);
    let e = pair_indicator(n, mn);
    let f = pair_indicator(n, pq);
    &f * &e * &k + &e * &f * &k - &e * &k * &f - &f * &k * &e
}

/// First derivative of `Γ` in `ρ_mn` at `Θ = I`: `κI^mn - I^mn κ`.
pub fn gamma_first(kappa: &[f64], mn: (usize, usize)) -> DMatrix<f64> {
    let k = diag(kappa);
    let e = pair_indicator(kappa.len(), mn);
    &k * &e - &e * &k
}

/// Checks the derivative identities of `Θ⁻¹` and `Γ` at `Θ = I`. Failures
/// are reported in the result rather than returned as errors.
pub fn matrix_calculus_checks(kappa: &[f64], mn: (usize, usize), pq: (usize, usize)) -> Result<MatrixCalculusReport> {
    let n = kappa.len();
    check_pair(n, mn)?;
    check_pair(n, pq)?;
    let h = IDENTITY_STEP;
    let tol = IDENTITY_TOLERANCE;
    let id = DMatrix::<f64>::identity(n, n);
    let e = pair_indicator(n, mn);
    let f = pair_indicator(n, pq);
    let at = |a: f64, b: f64| -> Result<DMatrix<f64>> { Ok(&id + &e * a + &f * b) };
    let inv = |a: f64| linalg::spd_inverse(&at(a, 0.0)?);
    let gamma = |a: f64, b: f64| similarity_transform(&at(a, b)?, kappa);

    let mut checks = Vec::new();

    let fd = (inv(h)? - inv(-h)?) / (2.0 * h);
    let closed = -(&id * &e * &id);
    checks.push(IdentityCheck::new(
        "inverse_derivative",
        linalg::max_abs_diff(&fd, &closed),
        tol,
    ));

    let fd = (gamma(h, 0.0)? - gamma(-h, 0.0)?) / (2.0 * h);
    checks.push(IdentityCheck::new(
        "similarity_first_derivative",
        linalg::max_abs_diff(&fd, &gamma_first(kappa, mn)),
        tol,
    ));

    if mn != pq && ordered(mn) != ordered(pq) {
        let fd = (gamma(h, h)? - gamma(h, -h)? - gamma(-h, h)? + gamma(-h, -h)?) / (4.0 * h * h);
        let closed = gamma_mixed_second(kappa, mn, pq);
        checks.push(IdentityCheck::new(
            "similarity_mixed_second",
            linalg::max_abs_diff(&fd, &closed),
            tol,
        ));
        let diagonal = (0..n).fold(0.0f64, |m, i| m.max(closed[(i, i)].abs()));
        checks.push(IdentityCheck::new("similarity_mixed_zero_diagonal", diagonal, tol));
    }

    let fd = (gamma(h, 0.0)? - gamma(0.0, 0.0)? * 2.0 + gamma(-h, 0.0)?) / (h * h);
    let closed = gamma_mixed_second(kappa, mn, mn);
    checks.push(IdentityCheck::new(
        "similarity_second_derivative",
        linalg::max_abs_diff(&fd, &closed),
        tol,
    ));
    let (m, nn) = mn;
    let mut diag_gap = 0.0f64;
    for i in 0..n {
        let expected = if i == m {
            2.0 * (kappa[m] - kappa[nn])
        } else if i == nn {
            2.0 * (kappa[nn] - kappa[m])
        } else {
            0.0
        };
        diag_gap = diag_gap.max((fd[(i, i)] - expected).abs());
    }
    checks.push(IdentityCheck::new("similarity_second_diagonal", diag_gap, tol));

    Ok(MatrixCalculusReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctrl() -> StepControl {
        StepControl::default()
    }

    #[test]
    fn commutator_by_hand() {
        let g = gamma_first(&[1.0, 0.5], (0, 1));
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, -0.5, 0.0]);
        assert_eq!(g, expected);
        let p = gamma_mixed_second(&[1.0, 0.5], (0, 1), (0, 1));
        assert_eq!((p[(0, 0)], p[(1, 1)]), (1.0, -1.0));
    }

    #[test]
    fn identities_hold() {
        for (kappa, mn, pq) in [
            (vec![1.0, 0.5], (0, 1), (0, 1)),
            (vec![1.0, 0.5, 0.2], (0, 1), (1, 2)),
            (vec![1.0, 0.5, 0.2], (0, 2), (0, 1)),
            (vec![0.3, 2.0, 1.1, 0.7], (1, 3), (0, 2)),
        ] {
            let report = matrix_calculus_checks(&kappa, mn, pq).unwrap();
            assert!(report.all_passed(), "{report:?}");
        }
        let report = matrix_calculus_checks(&[1.0, 0.5, 0.2], (0, 1), (1, 2)).unwrap();
        assert_eq!(report.checks.len(), 6);
    }

    #[test]
    fn rejects_bad_pairs_and_off_identity_points() {
        assert!(matrix_calculus_checks(&[1.0, 0.5], (0, 0), (0, 1)).is_err());
        let p = OUParams::two_asset(1.0, 0.5, 0.1).unwrap();
        let prefs = Preferences::new(-4.0).unwrap();
        assert!(corr_sensitivity(&p, &prefs, 3.0, (0, 1), 1e-3, &ctrl()).is_err());
    }

    #[test]
    fn first_derivative_vanishes() {
        let p = OUParams::two_asset(1.0, 0.5, 0.0).unwrap();
        for gamma in [-4.0, 0.5] {
            let prefs = Preferences::new(gamma).unwrap();
            let r = corr_sensitivity(&p, &prefs, 3.0, (0, 1), DEFAULT_STEP, &ctrl()).unwrap();
            assert!(r.first_derivative.consistent_with_zero(5.0), "{r:?}");
            assert!(r.mixed_derivatives.is_empty());
        }
    }

    #[test]
    fn equal_rates_give_flat_second_derivative() {
        let p = OUParams::two_asset(0.8, 0.8, 0.0).unwrap();
        let prefs = Preferences::new(-4.0).unwrap();
        let r = corr_sensitivity(&p, &prefs, 3.0, (0, 1), DEFAULT_STEP, &ctrl()).unwrap();
        assert!(r.second_derivative.consistent_with_zero(5.0), "{r:?}");
    }

    #[test]
    fn mixed_partials_vanish_for_three_assets() {
        let p = OUParams::unit(vec![1.0, 0.5, 0.2], DMatrix::identity(3, 3)).unwrap();
        let prefs = Preferences::new(-4.0).unwrap();
        let r = corr_sensitivity(&p, &prefs, 3.0, (0, 1), DEFAULT_STEP, &ctrl()).unwrap();
        assert_eq!(r.mixed_derivatives.len(), 2);
        for m in &r.mixed_derivatives {
            assert!(m.estimate.consistent_with_zero(5.0), "{m:?}");
        }
    }

    #[test]
    fn step_shrinks_until_positive_definite() {
        let p = OUParams::two_asset(1.0, 0.5, 0.0).unwrap();
        let prefs = Preferences::new(-1.0).unwrap();
        let r = corr_sensitivity(&p, &prefs, 1.0, (0, 1), 0.9, &ctrl()).unwrap();
        assert_eq!(r.step, 0.9);
        // two shifted pairs sharing an index leave eigenvalue 1 - h√2
        let p3 = OUParams::unit(vec![1.0, 0.5, 0.2], DMatrix::identity(3, 3)).unwrap();
        let r = corr_sensitivity(&p3, &prefs, 1.0, (0, 1), 0.9, &ctrl()).unwrap();
        assert_eq!(r.step, 0.45);
    }
}
