//! Explicit feedback matrices for the cases that decouple.

use nalgebra::DMatrix;

use crate::linalg::{self, spd_inverse};
use crate::model::Preferences;
use crate::{Error, Result};

/// One-asset feedback `κ√δ (√δ + tanh κ√δτ) / (√δ tanh κ√δτ + 1)`.
pub fn d_scalar_closed_form(kappa: f64, delta: f64, tau: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    let s = delta.sqrt();
    let t = (kappa * s * tau).tanh();
    kappa * s * (s + t) / (s * t + 1.0)
}

/// Independent assets: the one-asset feedback on the diagonal.
pub fn d_uncorrelated(kappas: &[f64], delta: f64, tau: f64) -> DMatrix<f64> {
    let d: Vec<f64> = kappas.iter().map(|&k| d_scalar_closed_form(k, delta, tau)).collect();
    linalg::diag(&d)
}

/// Common reversion rate: the one-asset feedback times `Θ⁻¹`.
pub fn d_common_kappa(kappa: f64, corr: &DMatrix<f64>, delta: f64, tau: f64) -> Result<DMatrix<f64>> {
    Ok(spd_inverse(corr)? * d_scalar_closed_form(kappa, delta, tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingleMrBranch {
    Hyperbolic,
    Rational,
    Trigonometric,
}

struct SingleMr {
    delta: f64,
    zeta: f64,
    lambda: f64,
    branch: SingleMrBranch,
}

fn single_mr_setup(corr: &DMatrix<f64>, gamma: f64) -> Result<(SingleMr, DMatrix<f64>)> {
    let prefs = Preferences::new(gamma)?;
    let delta = prefs.delta();
    let inv = spd_inverse(corr)?;
    let zeta = inv[(0, 0)];
    let mu = delta * delta - delta * (delta - 1.0) * zeta;
    let branch = if mu.abs() <= 1e-12 * delta * delta {
        SingleMrBranch::Rational
    } else if mu > 0.0 {
        SingleMrBranch::Hyperbolic
    } else {
        SingleMrBranch::Trigonometric
    };
    Ok((
        SingleMr {
            delta,
            zeta,
            lambda: mu.abs().sqrt(),
            branch,
        },
        inv,
    ))
}

/// Which of the three solution families applies for asset 1 mean reverting
/// and the rest driftless.
pub fn single_mr_branch(corr: &DMatrix<f64>, gamma: f64) -> Result<SingleMrBranch> {
    Ok(single_mr_setup(corr, gamma)?.0.branch)
}

/// First `τ` at which the trigonometric branch diverges, if it applies.
pub fn single_mr_singularity(kappa: f64, corr: &DMatrix<f64>, gamma: f64) -> Result<Option<f64>> {
    let (s, _) = single_mr_setup(corr, gamma)?;
    if s.branch != SingleMrBranch::Trigonometric || kappa == 0.0 {
        return Ok(None);
    }
    let phase = std::f64::consts::PI - (s.lambda / s.delta).atan();
    Ok(Some(phase / (s.lambda * kappa)))
}

/// Feedback matrix for `κ = diag(κ, 0, …, 0)`. Only column 1 is nonzero; its
/// off-diagonal entries stay at `δκ(Θ⁻¹)_{j1}` and the diagonal entry follows
/// the branch selected by the sign of `δ² - δ(δ-1)ζ`, `ζ = (Θ⁻¹)₁₁`.
pub fn d_single_mr(kappa: f64, corr: &DMatrix<f64>, gamma: f64, tau: f64) -> Result<DMatrix<f64>> {
    let n = corr.nrows();
    let (s, inv) = single_mr_setup(corr, gamma)?;
    let mut out = DMatrix::zeros(n, n);
    if kappa == 0.0 {
        return Ok(out);
    }
    let (delta, lambda) = (s.delta, s.lambda);
    let x = lambda * kappa * tau;
    let core = match s.branch {
        SingleMrBranch::Hyperbolic => {
            let t = x.tanh();
            kappa * lambda * (delta + lambda * t) / (lambda + delta * t)
        }
        SingleMrBranch::Rational => kappa * delta / (1.0 + kappa * delta * tau),
        SingleMrBranch::Trigonometric => {
            let (sin, cos) = x.sin_cos();
            let den = lambda * cos + delta * sin;
            let tau_star = (std::f64::consts::PI - (lambda / delta).atan()) / (lambda * kappa);
            if tau >= tau_star {
                return Err(Error::TrigSingularity { tau: tau_star });
            }
            kappa * lambda * (delta * cos - lambda * sin) / den
        }
    };
    out[(0, 0)] = core + delta * kappa * (s.zeta - 1.0);
    for j in 1..n {
        out[(j, 0)] = delta * kappa * inv[(j, 0)];
    }
    Ok(out)
}
