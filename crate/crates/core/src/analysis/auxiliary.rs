//! Scalar functions that describe the value matrix and its second-order
//! correlation sensitivity at `Θ = I`.
//!
//! With `r = √δ`, `a = 2κrτ` and `ω = (1 - r)/(1 + r)`, the diagonal entries
//! of `F` are `Ψ(κ, τ)`. Exponentials are always evaluated with non-positive
//! arguments so long horizons do not overflow.

use crate::ode::{self, Tolerance};
use crate::Result;

fn omega(delta: f64) -> f64 {
    let r = delta.sqrt();
    (1.0 - r) / (1.0 + r)
}

fn check_delta(delta: f64) {
    assert!(
        delta > 0.0 && delta.is_finite(),
        "distortion rate must be positive, got {delta}"
    );
    // e^a + ω ≥ 1 + ω > 0 for τ ≥ 0
    debug_assert!(omega(delta) > -1.0);
}

/// `Ψ = κ√δ(√δ-1)/2 · (e^a - 1)/(e^a + ω)`, the stable solution of
/// `Ψ' = 2Ψ² - 2δκΨ + δ(δ-1)κ²/2`, `Ψ(0) = 0`.
pub fn psi_closed_form(kappa: f64, delta: f64, tau: f64) -> f64 {
    check_delta(delta);
    let r = delta.sqrt();
    let w = omega(delta);
    let a = 2.0 * kappa * r * tau;
    let ratio = if a < 1.0 {
        let m = a.exp_m1();
        m / (m + 1.0 + w)
    } else {
        let e = (-a).exp();
        (1.0 - e) / (1.0 + w * e)
    };
    kappa * r * (r - 1.0) / 2.0 * ratio
}

/// Right-hand side of the Ψ equation.
pub fn psi_rate(kappa: f64, delta: f64, psi: f64) -> f64 {
    2.0 * psi * psi - 2.0 * delta * kappa * psi + delta * (delta - 1.0) * kappa * kappa / 2.0
}

/// `∫₀^τ Ψ = (δ+√δ)/2 κτ - ½[ln(e^a + ω) - ln(1 + ω)]`.
pub fn psi_integral(kappa: f64, delta: f64, tau: f64) -> f64 {
    check_delta(delta);
    let r = delta.sqrt();
    let w = omega(delta);
    let a = 2.0 * kappa * r * tau;
    if a < 1.0 {
        (delta + r) / 2.0 * kappa * tau - 0.5 * (a.exp_m1() / (1.0 + w)).ln_1p()
    } else {
        // the linear terms combine to (δ - √δ)κτ/2 once a/2 is pulled out of the log
        (delta - r) / 2.0 * kappa * tau - 0.5 * ((w * (-a).exp()).ln_1p() - w.ln_1p())
    }
}

/// `κ(1-√δ)/2 · (e^a + 1)/(e^a + ω)`, which equals `Ψ + (1-δ)κ/2`.
pub fn psi_shifted(kappa: f64, delta: f64, tau: f64) -> f64 {
    check_delta(delta);
    let r = delta.sqrt();
    let w = omega(delta);
    let e = (-2.0 * kappa * r * tau).exp();
    kappa * (1.0 - r) / 2.0 * (1.0 + e) / (1.0 + w * e)
}

/// Off-diagonal coefficient `λ_ij(τ)`, the solution of
/// `λ' = λ(2Ψ_i + 2Ψ_j - δ(κ_i + κ_j)) - δ(κ_i - κ_j)(Ψ_i + (1-δ)κ_i/2)`,
/// `λ(0) = 0`.
pub fn lambda_closed_form(kappa_i: f64, kappa_j: f64, delta: f64, tau: f64) -> f64 {
    check_delta(delta);
    if kappa_i == kappa_j {
        return 0.0;
    }
    let r = delta.sqrt();
    let w = omega(delta);
    let s = r * tau;
    let ei = (-2.0 * kappa_i * s).exp();
    let ej = (-2.0 * kappa_j * s).exp();
    let both = (-(kappa_i + kappa_j) * s).exp();
    let bracket =
        (kappa_j - kappa_i) / (kappa_j + kappa_i) * (1.0 - both) * (1.0 + w * both) + (ei - both) + w * (both - ej);
    kappa_i * r * (1.0 - r) / 2.0 * bracket / ((1.0 + w * ei) * (1.0 + w * ej))
}

/// Right-hand side of the λ equation.
pub fn lambda_rate(kappa_i: f64, kappa_j: f64, delta: f64, tau: f64, lambda: f64) -> f64 {
    let pi = psi_closed_form(kappa_i, delta, tau);
    let pj = psi_closed_form(kappa_j, delta, tau);
    lambda * (2.0 * pi + 2.0 * pj - delta * (kappa_i + kappa_j))
        - delta * (kappa_i - kappa_j) * (pi + (1.0 - delta) * kappa_i / 2.0)
}

/// Integrates the λ equation directly.
pub fn lambda_ode(kappa_i: f64, kappa_j: f64, delta: f64, horizon: f64, tol: &Tolerance) -> Result<ode::Trajectory> {
    ode::integrate(
        |tau, y, dy| dy[0] = lambda_rate(kappa_i, kappa_j, delta, tau, y[0]),
        &[0.0],
        horizon,
        tol,
    )
}

/// The pair `(φ_ii, φ_jj)` on the solver grid and the running integral of
/// their sum.
#[derive(Debug, Clone)]
pub struct PhiDiagonal {
    pub tau: Vec<f64>,
    pub phi_ii: Vec<f64>,
    pub phi_jj: Vec<f64>,
    pub integral: Vec<f64>,
}

impl PhiDiagonal {
    /// `∫₀^T (φ_ii + φ_jj)`.
    pub fn total(&self) -> f64 {
        *self.integral.last().expect("trajectory has at least one point")
    }
}

fn phi_rate(ki: f64, kj: f64, delta: f64, tau: f64, phi: f64) -> f64 {
    phi * (4.0 * psi_closed_form(ki, delta, tau) - 2.0 * delta * ki)
        + 2.0 * delta * (ki - kj) * (lambda_closed_form(ki, kj, delta, tau) - psi_shifted(ki, delta, tau))
}

/// Solves `φ'_ii = φ_ii(4Ψ_i - 2δκ_i) + 2δ(κ_i - κ_j)[λ_ij - κ_i(1-√δ)/2 (e^a+1)/(e^a+ω)]`
/// and its mirror for `φ_jj`, both from zero, on `[0, horizon]`.
pub fn phi_diagonal(kappa_i: f64, kappa_j: f64, delta: f64, horizon: f64, tol: &Tolerance) -> Result<PhiDiagonal> {
    check_delta(delta);
    let traj = ode::integrate(
        |tau, y, dy| {
            dy[0] = phi_rate(kappa_i, kappa_j, delta, tau, y[0]);
            dy[1] = phi_rate(kappa_j, kappa_i, delta, tau, y[1]);
            dy[2] = y[0] + y[1];
        },
        &[0.0, 0.0, 0.0],
        horizon,
        tol,
    )?;
    Ok(PhiDiagonal {
        phi_ii: traj.y.iter().map(|y| y[0]).collect(),
        phi_jj: traj.y.iter().map(|y| y[1]).collect(),
        integral: traj.y.iter().map(|y| y[2]).collect(),
        tau: traj.t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson<F: Fn(f64) -> f64>(f: F, b: f64, n: usize) -> f64 {
        let h = b / n as f64;
        let mut s = f(0.0) + f(b);
        for k in 1..n {
            s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn psi_trivial_cases() {
        for tau in [0.0, 0.5, 3.0, 200.0] {
            assert_eq!(psi_closed_form(1.3, 1.0, tau), 0.0);
            assert_eq!(psi_integral(1.3, 1.0, tau), 0.0);
        }
        assert_eq!(psi_closed_form(1.0, 4.0, 0.0), 0.0);
        assert_eq!(psi_integral(1.0, 4.0, 0.0), 0.0);
    }

    #[test]
    fn psi_residual() {
        let h = 1e-4;
        for &(kappa, delta) in &[(1.0, 4.0), (0.5, 0.2), (2.0, 2.0)] {
            let psi = |t: f64| psi_closed_form(kappa, delta, t);
            for k in 0..=30 {
                let tau = 0.1 * k as f64 + if k == 0 { 2.0 * h } else { 0.0 };
                let d =
                    (psi(tau - 2.0 * h) - 8.0 * psi(tau - h) + 8.0 * psi(tau + h) - psi(tau + 2.0 * h)) / (12.0 * h);
                let res = d - psi_rate(kappa, delta, psi_closed_form(kappa, delta, tau));
                assert!(res.abs() < 1e-8, "κ={kappa} δ={delta} τ={tau}: {res}");
            }
        }
    }

    #[test]
    fn psi_integral_matches_quadrature() {
        for &(kappa, delta, tau) in &[(1.0, 4.0, 2.0), (0.3, 0.2, 3.0), (1.0, 2.0, 0.2), (2.0, 0.5, 5.0)] {
            let q = simpson(|u| psi_closed_form(kappa, delta, u), tau, 2000);
            assert!(
                (psi_integral(kappa, delta, tau) - q).abs() < 1e-10,
                "{kappa} {delta} {tau}"
            );
        }
    }

    #[test]
    fn psi_large_horizon_is_finite() {
        let v = psi_closed_form(3.0, 4.0, 1e4);
        assert!((v - 3.0 * (4.0 - 2.0) / 2.0).abs() < 1e-12);
        assert!(psi_integral(3.0, 4.0, 1e4).is_finite());
    }

    #[test]
    fn psi_property_identity() {
        for &(kappa, delta) in &[(1.0, 4.0), (0.5, 0.2), (2.0, 1.0), (0.7, 3.0)] {
            for k in 0..=30 {
                let tau = 0.1 * k as f64;
                let lhs = psi_closed_form(kappa, delta, tau) + (1.0 - delta) * kappa / 2.0;
                assert!((lhs - psi_shifted(kappa, delta, tau)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lambda_trivial_cases() {
        for tau in [0.0, 1.0, 3.0] {
            assert_eq!(lambda_closed_form(0.8, 0.8, 4.0, tau), 0.0);
            assert_eq!(lambda_closed_form(1.0, 0.5, 1.0, tau), 0.0);
        }
        assert_eq!(lambda_closed_form(1.0, 0.5, 4.0, 0.0), 0.0);
    }

    #[test]
    fn lambda_matches_its_equation() {
        let tol = Tolerance::default();
        for &ki in &[0.3, 1.0, 2.0] {
            for &kj in &[0.5, 1.0, 1.7] {
                for &delta in &[0.2, 1.0, 4.0] {
                    let traj = lambda_ode(ki, kj, delta, 3.0, &tol).unwrap();
                    for (t, y) in traj.t.iter().zip(&traj.y) {
                        let gap = (lambda_closed_form(ki, kj, delta, *t) - y[0]).abs();
                        assert!(gap < 1e-8, "κi={ki} κj={kj} δ={delta} τ={t}: {gap}");
                    }
                }
            }
        }
    }

    /// Second derivative of `∫₀^T Tr F` in `ρ_ij` at `Θ = I`. Differentiating
    /// `2F²` twice also leaves `4(∂F/∂ρ)²`, whose diagonal is `4λ_ij λ_ji`.
    fn exact_second_derivative(ki: f64, kj: f64, delta: f64, horizon: f64) -> f64 {
        let cross = |t: f64| 4.0 * lambda_closed_form(ki, kj, delta, t) * lambda_closed_form(kj, ki, delta, t);
        let traj = ode::integrate(
            |tau, y, dy| {
                dy[0] = phi_rate(ki, kj, delta, tau, y[0]) + cross(tau);
                dy[1] = phi_rate(kj, ki, delta, tau, y[1]) + cross(tau);
                dy[2] = y[0] + y[1];
            },
            &[0.0, 0.0, 0.0],
            horizon,
            &Tolerance::default(),
        )
        .unwrap();
        traj.y.last().unwrap()[2]
    }

    #[test]
    fn second_correlation_derivative_of_trace() {
        use crate::analysis::solve_f;
        use crate::model::{OUParams, Preferences};
        let tol = Tolerance::default();
        for &(ki, kj, gamma) in &[(1.0, 0.5, -4.0), (1.0, 0.5, 0.5), (0.4, 1.5, -1.0)] {
            let prefs = Preferences::new(gamma).unwrap();
            let trace = |rho: f64| {
                let p = OUParams::two_asset(ki, kj, rho).unwrap();
                *solve_f(&p, &prefs, 3.0, &tol).unwrap().trace_integral().last().unwrap()
            };
            let h = 1e-3;
            let fd = (trace(h) - 2.0 * trace(0.0) + trace(-h)) / (h * h);
            let exact = exact_second_derivative(ki, kj, prefs.delta(), 3.0);
            assert!(
                (fd - exact).abs() < 1e-5 * exact.abs(),
                "κ=({ki},{kj}) γ={gamma}: {fd} vs {exact}"
            );
            // the φ pair without the cross term keeps the same sign
            let phi = phi_diagonal(ki, kj, prefs.delta(), 3.0, &tol).unwrap().total();
            assert_eq!(phi.signum(), exact.signum());
        }
    }

    #[test]
    fn phi_sign_cases() {
        let tol = Tolerance::default();
        assert!(phi_diagonal(1.0, 0.5, 4.0, 3.0, &tol).unwrap().total() > 0.0);
        assert!(phi_diagonal(1.0, 0.5, 0.2, 3.0, &tol).unwrap().total() < 0.0);
        assert_eq!(phi_diagonal(1.0, 0.5, 1.0, 3.0, &tol).unwrap().total(), 0.0);
        assert_eq!(phi_diagonal(0.7, 0.7, 4.0, 3.0, &tol).unwrap().total(), 0.0);
    }
}
