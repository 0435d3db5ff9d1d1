//! Structural properties of the feedback across random models.

use mrtrader::linalg::{max_abs_diff, min_eigenvalue, spd_inverse};
use mrtrader::riccati;
use mrtrader::{OUParams, Preferences, StepControl};
use nalgebra::DMatrix;
use proptest::prelude::*;

const HORIZON: f64 = 2.0;

fn model(n: usize) -> impl Strategy<Value = (Vec<f64>, DMatrix<f64>, f64)> {
    let pairs = n * (n - 1) / 2;
    (
        prop::collection::vec(0.05f64..2.0, n),
        prop::collection::vec(-0.6f64..0.6, pairs),
        -6.0f64..0.5,
    )
        .prop_map(move |(kappa, offdiag, gamma)| {
            let mut corr = DMatrix::identity(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    corr[(i, j)] = offdiag[k];
                    corr[(j, i)] = offdiag[k];
                    k += 1;
                }
            }
            (kappa, corr, gamma)
        })
        .prop_filter("well conditioned", |(_, corr, _)| min_eigenvalue(corr) > 0.1)
}

fn any_model() -> impl Strategy<Value = (Vec<f64>, DMatrix<f64>, f64)> {
    (2usize..=4).prop_flat_map(model)
}

fn solve(kappa: &[f64], corr: &DMatrix<f64>, gamma: f64) -> Option<(OUParams, Preferences, riccati::RiccatiSolution)> {
    let p = OUParams::unit(kappa.to_vec(), corr.clone()).ok()?;
    let prefs = Preferences::new(gamma).ok()?;
    let d = riccati::solve_d(&p, &prefs, HORIZON, &StepControl::default()).ok()?;
    Some((p, prefs, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn feedback_agrees_with_value_matrix((kappa, corr, gamma) in any_model()) {
        let Some((p, prefs, d)) = solve(&kappa, &corr, gamma) else { return Ok(()) };
        let a = riccati::solve_a(&p, &prefs, HORIZON, &StepControl::default()).unwrap();
        let offset = spd_inverse(&corr).unwrap() * p.kappa_matrix() * prefs.delta();
        for (tau, m) in a.tau().iter().zip(a.values()) {
            let from_a = &offset - (m + m.transpose());
            prop_assert!(max_abs_diff(&from_a, &d.interpolate(*tau).unwrap()) < 1e-8);
        }
    }

    #[test]
    fn antisymmetric_part_is_constant((kappa, corr, gamma) in any_model()) {
        let Some((p, prefs, d)) = solve(&kappa, &corr, gamma) else { return Ok(()) };
        let inv = spd_inverse(&corr).unwrap();
        let n = p.n;
        let target = DMatrix::from_fn(n, n, |i, j| prefs.delta() * inv[(i, j)] * (kappa[j] - kappa[i]));
        for m in d.values() {
            prop_assert!(max_abs_diff(&(m - m.transpose()), &target) < 1e-8);
        }
    }

    #[test]
    fn common_rate_gives_symmetric_feedback(
        (_, corr, gamma) in any_model(),
        rate in 0.05f64..2.0,
    ) {
        let kappa = vec![rate; corr.nrows()];
        let Some((_, _, d)) = solve(&kappa, &corr, gamma) else { return Ok(()) };
        for m in d.values() {
            prop_assert!(max_abs_diff(m, &m.transpose()) < 1e-12);
        }
    }

    #[test]
    fn positions_are_linear_in_wealth((kappa, corr, gamma) in any_model(), w in 0.1f64..10.0) {
        use mrtrader::control::StrategySpec;
        use nalgebra::DVector;
        let Ok(p) = OUParams::unit(kappa.clone(), corr.clone()) else { return Ok(()) };
        let Ok(prefs) = Preferences::new(gamma) else { return Ok(()) };
        let Ok(spec) = StrategySpec::optimal(&p, &prefs, HORIZON, &StepControl::default()) else { return Ok(()) };
        let x = DVector::from_fn(p.n, |i, _| 0.3 - 0.2 * i as f64);
        let one = spec.position(1.0, &x, 0.5).unwrap();
        let scaled = spec.position(w, &x, 0.5).unwrap();
        prop_assert!((scaled - one * w).amax() < 1e-12 * w.max(1.0));
    }
}
