use nalgebra::DVector;
use rayon::prelude::*;

use super::grid::{Axis, SensitivityGrid};
use crate::control;
use crate::model::{OUParams, Preferences};
use crate::riccati::{d_scalar_closed_form, StepControl};
use crate::{Error, Result};

fn linspace(start: f64, end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..points)
            .map(|k| start + (end - start) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// `J(1, x₀, 0)` of a two-asset model over a grid of second reversion rates
/// and correlations. The remaining parameters come from `base`.
pub fn value_vs_kappa2_rho(
    base: &OUParams,
    prefs: &Preferences,
    horizon: f64,
    x0: &DVector<f64>,
    kappa2: &[f64],
    rho: &[f64],
    ctrl: &StepControl,
) -> Result<SensitivityGrid> {
    if base.n != 2 {
        return Err(Error::Dimension("the rate/correlation sweep is two-asset".into()));
    }
    if let Some(r) = rho.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(Error::InvalidInput(format!("correlation {r} outside (-1, 1)")));
    }
    let cells: Vec<(usize, usize)> = (0..kappa2.len())
        .flat_map(|i| (0..rho.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<std::result::Result<f64, String>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let cell = || -> Result<f64> {
                let p = base
                    .with_kappa(vec![base.kappa[0], kappa2[i]])?
                    .with_correlation((0, 1), rho[j])?;
                let a = control::solve_value(&p, prefs, horizon, ctrl)?;
                Ok(control::value_function(1.0, x0, 0.0, &a, prefs, &p)?.total())
            };
            cell().map_err(|e| e.to_string())
        })
        .collect();

    let mut grid = SensitivityGrid::new(
        Axis::new("kappa2", kappa2.to_vec()),
        Axis::new("rho", rho.to_vec()),
        "value",
    );
    for (&(i, j), v) in cells.iter().zip(values) {
        grid.set_result(i, j, v);
    }
    grid.metadata.insert("kappa1".into(), base.kappa[0].to_string());
    grid.metadata.insert("gamma".into(), prefs.gamma().to_string());
    grid.metadata.insert("horizon".into(), horizon.to_string());
    grid.metadata.insert("x0".into(), format!("{:?}", x0.as_slice()));
    Ok(grid)
}

/// `J(1, θ, 0)` as one correlation of `base` varies, for several risk
/// aversions. Cells whose correlation matrix is not positive definite, or
/// whose solve fails, are recorded as missing.
pub fn value_vs_correlation(
    base: &OUParams,
    pair: (usize, usize),
    rho: &[f64],
    gammas: &[f64],
    horizon: f64,
    ctrl: &StepControl,
) -> Result<SensitivityGrid> {
    let (m, n) = pair;
    if m == n || m >= base.n || n >= base.n {
        return Err(Error::Dimension(format!("pair {pair:?} invalid for {} assets", base.n)));
    }
    let prefs = gammas
        .iter()
        .map(|&g| Preferences::new(g))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..rho.len())
        .flat_map(|i| (0..gammas.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<std::result::Result<f64, String>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let cell = || -> Result<f64> {
                let p = base.with_correlation(pair, rho[i])?;
                let a = control::solve_value(&p, &prefs[j], horizon, ctrl)?;
                control::value_at_mean(1.0, 0.0, &a, &prefs[j], &p)
            };
            cell().map_err(|e| e.to_string())
        })
        .collect();

    let mut grid = SensitivityGrid::new(
        Axis::new("rho", rho.to_vec()),
        Axis::new("gamma", gammas.to_vec()),
        "value",
    );
    for (&(i, j), v) in cells.iter().zip(values) {
        grid.set_result(i, j, v);
    }
    grid.metadata.insert("pair".into(), format!("{m},{n}"));
    grid.metadata.insert("kappa".into(), format!("{:?}", base.kappa));
    grid.metadata.insert("horizon".into(), horizon.to_string());
    Ok(grid)
}

/// `D(T - t)` of the one-asset problem for each risk aversion on `points`
/// evenly spaced times in `[0, T]`.
pub fn d_curve_1d(kappa: f64, gammas: &[f64], horizon: f64, points: usize) -> Result<SensitivityGrid> {
    if !(kappa >= 0.0) {
        return Err(Error::NegativeKappa { index: 0, value: kappa });
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let prefs = gammas
        .iter()
        .map(|&g| Preferences::new(g))
        .collect::<Result<Vec<_>>>()?;
    let times = linspace(0.0, horizon, points);
    let mut grid = SensitivityGrid::new(Axis::new("gamma", gammas.to_vec()), Axis::new("t", times.clone()), "D");
    for (i, p) in prefs.iter().enumerate() {
        for (j, &t) in times.iter().enumerate() {
            grid.set(i, j, d_scalar_closed_form(kappa, p.delta(), (horizon - t).max(0.0)));
        }
    }
    grid.metadata.insert("kappa".into(), kappa.to_string());
    grid.metadata.insert("horizon".into(), horizon.to_string());
    Ok(grid)
}
