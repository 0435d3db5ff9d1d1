use std::collections::BTreeMap;

use mrtrader::analysis::{self, SensitivityGrid};
use mrtrader::control::{self, StrategySpec};
use mrtrader::misspec;
use mrtrader::riccati::{self, RiccatiSolution};
use mrtrader::stats::Estimate;
use mrtrader::verify::{self, VerifyOptions, VerifyReport};
use mrtrader::wealth::{self, Recording, SimulationConfig};
use mrtrader::{Preferences, StepControl};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::Loaded;
use crate::output::Sink;
use crate::{plot, CliError};

pub struct Context {
    pub loaded: Loaded,
    pub sink: Sink,
    pub plot: bool,
}

fn ctrl() -> StepControl {
    StepControl::default()
}

fn state_or(default: Vec<f64>, given: &Option<Vec<f64>>, n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let x = given.clone().unwrap_or(default);
    if x.len() != n {
        return Err(CliError::Invalid(format!(
            "{what} has {} entries, model has {n} assets",
            x.len()
        )));
    }
    Ok(x)
}

/// The strategy `positions` and `simulate` run: optimal, or built from the
/// configured estimate.
fn strategy(l: &Loaded) -> Result<(StrategySpec, &'static str), CliError> {
    let c = &l.config;
    Ok(match &c.estimate {
        None => (
            StrategySpec::optimal(&l.params, &l.prefs, c.horizon, &ctrl())?,
            "optimal",
        ),
        Some(e) => {
            let est = e.resolve(&l.params)?;
            (
                misspec::misspecified_strategy(&l.params, &est, &l.prefs, c.horizon, &ctrl())?,
                "misspecified",
            )
        }
    })
}

pub fn validate(l: &Loaded) -> String {
    let p = &l.params;
    let est = if l.config.estimate.is_some() {
        ", with estimate"
    } else {
        ""
    };
    format!(
        "valid: {} assets, gamma = {}, delta = {}, horizon = {}{est}",
        p.n,
        l.prefs.gamma(),
        l.prefs.delta(),
        l.config.horizon
    )
}

fn write_solution(ctx: &Context, name: &str, sol: &RiccatiSolution) -> Result<(), CliError> {
    let mut meta = BTreeMap::new();
    meta.insert("coordinates".into(), "unit noise, zero mean".into());
    meta.insert("kind".into(), sol.kind().label().into());
    ctx.sink
        .write_table(&format!("{name}.csv"), &meta, &sol.table_header(), sol.table_rows())?;
    Ok(())
}

pub fn solve(ctx: &Context) -> Result<String, CliError> {
    let l = &ctx.loaded;
    let (unit, _) = l.params.normalize()?;
    let a = riccati::solve_a(&unit, &l.prefs, l.config.horizon, &ctrl())?;
    let d = riccati::solve_d(&unit, &l.prefs, l.config.horizon, &ctrl())?;
    write_solution(ctx, "a_solution", &a)?;
    write_solution(ctx, "d_solution", &d)?;
    if ctx.plot {
        let n = unit.n;
        let series: Vec<plot::Series> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| plot::Series {
                label: format!("D_{}{}", i + 1, j + 1),
                points: d.tau().iter().zip(d.values()).map(|(t, m)| (*t, m[(i, j)])).collect(),
            })
            .collect();
        plot::lines(
            &ctx.sink.path("d_solution.svg"),
            "Feedback matrix D(tau)",
            "tau",
            "D",
            &series,
        )?;
    }
    Ok(format!(
        "solved A and D on {} and {} grid points",
        a.tau().len(),
        d.tau().len()
    ))
}

pub fn positions(ctx: &Context) -> Result<String, CliError> {
    let l = &ctx.loaded;
    let s = &l.config.positions;
    let p = &l.params;
    let default_state = p.theta.iter().zip(&p.sigma).map(|(t, s)| t + s).collect();
    let x = DVector::from_vec(state_or(default_state, &s.state, p.n, "positions.state")?);
    let times = s.times.clone().unwrap_or_else(|| {
        let k = s.points.max(2);
        (0..k).map(|i| l.config.horizon * i as f64 / (k - 1) as f64).collect()
    });
    let (spec, kind) = strategy(l)?;
    let mut rows = Vec::with_capacity(times.len());
    for &t in &times {
        let alpha = spec.position(s.wealth, &x, t)?;
        let mut row = vec![t];
        row.extend(alpha.iter());
        rows.push(row);
    }
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=p.n).map(|i| format!("alpha_{i}")));
    let mut meta = BTreeMap::new();
    meta.insert("strategy".into(), kind.into());
    meta.insert("wealth".into(), s.wealth.to_string());
    meta.insert("state".into(), format!("{:?}", x.as_slice()));
    ctx.sink.write_table("positions.csv", &meta, &columns, rows)?;
    Ok(format!("{} positions of the {kind} strategy", times.len()))
}

#[derive(Debug, Serialize)]
struct Comparison {
    epsilon: f64,
    monte_carlo: Estimate,
    analytic: Option<f64>,
    z_score: Option<f64>,
    note: Option<String>,
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    strategy: &'static str,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    excluded_paths: usize,
    mean_log_wealth: Estimate,
    utility: Comparison,
    moments: Vec<Comparison>,
    sharpe: Comparison,
}

fn compare(epsilon: f64, mc: Estimate, analytic: mrtrader::Result<f64>) -> Comparison {
    match analytic {
        Ok(v) => Comparison {
            epsilon,
            monte_carlo: mc,
            analytic: Some(v),
            z_score: Some(mc.z_score(v)),
            note: None,
        },
        Err(e) => Comparison {
            epsilon,
            monte_carlo: mc,
            analytic: None,
            z_score: None,
            note: Some(format!("{}: {e}", e.name())),
        },
    }
}

pub fn simulate(ctx: &Context) -> Result<String, CliError> {
    let l = &ctx.loaded;
    let c = &l.config;
    let s = &c.simulate;
    let p = &l.params;
    let x0 = state_or(l.theta(), &s.initial_state, p.n, "simulate.initial_state")?;
    let (spec, kind) = strategy(l)?;
    let mut cfg = SimulationConfig::new(c.horizon, s.n_paths, c.seed, x0.clone());
    if let Some(n) = s.n_steps {
        cfg = cfg.with_steps(n);
    }
    cfg.initial_wealth = s.initial_wealth;
    let ens = wealth::simulate(p, &spec, &cfg)?;

    let mut columns = vec!["path".to_string(), "log_wealth".to_string()];
    columns.extend((1..=p.n).map(|i| format!("x{i}")));
    let rows = ens.paths.iter().enumerate().map(|(k, path)| {
        let mut row = vec![path.index as f64, path.terminal_log_wealth()];
        row.extend(ens.terminal_state(k).iter());
        row
    });
    let mut meta = BTreeMap::new();
    meta.insert("strategy".into(), kind.into());
    meta.insert("n_steps".into(), cfg.n_steps.to_string());
    meta.insert("excluded_paths".into(), ens.excluded.len().to_string());
    ctx.sink.write_table("simulation.csv", &meta, &columns, rows)?;

    if s.record_paths > 0 {
        let rec = SimulationConfig {
            n_paths: s.record_paths.min(s.n_paths),
            recording: Recording::Full,
            ..cfg.clone()
        };
        let full = wealth::simulate(p, &spec, &rec)?;
        let times = full.times();
        let norm = &full.normalization;
        let mut columns = vec!["path".to_string(), "t".to_string(), "log_wealth".to_string()];
        columns.extend((1..=p.n).map(|i| format!("x{i}")));
        let rows = full.paths.iter().flat_map(|path| {
            times.iter().enumerate().map(move |(k, &t)| {
                let x = norm.state_from_unit(&DVector::from_column_slice(path.state(k, p.n)));
                let mut row = vec![path.index as f64, t, path.log_wealth[k]];
                row.extend(x.iter());
                row
            })
        });
        ctx.sink.write_table("paths.csv", &meta, &columns, rows)?;
    }

    let w = s.initial_wealth;
    let x = DVector::from_vec(x0);
    let moment = |eps: f64| -> mrtrader::Result<f64> {
        let q = misspec::solve_q_for(eps, &spec, p, &ctrl())?;
        Ok(misspec::p_epsilon(w, &x, 0.0, eps, &q, p)?.p_value)
    };
    let gamma = l.prefs.gamma();
    let analytic_utility = if l.prefs.is_log() || c.estimate.is_none() {
        control::solve_value(p, &l.prefs, c.horizon, &ctrl())
            .and_then(|a| control::value_function(w, &x, 0.0, &a, &l.prefs, p))
            .map(|r| r.total())
    } else {
        moment(gamma)
    };
    let analytic_sharpe = misspec::solve_q_for(1.0, &spec, p, &ctrl()).and_then(|q1| {
        let q2 = misspec::solve_q_for(2.0, &spec, p, &ctrl())?;
        misspec::sharpe(w, &x, 0.0, &q1, &q2, p)
    });
    let summary = SimulationSummary {
        strategy: kind,
        n_paths: ens.n_paths,
        n_steps: ens.n_steps,
        seed: ens.seed,
        excluded_paths: ens.excluded.len(),
        mean_log_wealth: ens.moment_estimate(0.0),
        utility: compare(gamma, ens.utility_estimate(&l.prefs), analytic_utility),
        moments: [1.0, 2.0]
            .iter()
            .map(|&e| compare(e, ens.moment_estimate(e), moment(e)))
            .collect(),
        sharpe: compare(1.0, ens.sharpe_estimate(), analytic_sharpe),
    };
    ctx.sink.write_json("simulation_summary.json", &summary)?;
    Ok(format!(
        "simulated {} paths of the {kind} strategy, expected utility {:.6e} ± {:.1e}",
        ens.paths.len(),
        summary.utility.monte_carlo.mean,
        summary.utility.monte_carlo.std_error
    ))
}

#[derive(Debug, Serialize)]
struct MisspecSummary {
    true_value: f64,
    diverged_cells: Vec<(f64, f64)>,
    missing_cells: usize,
}

pub fn misspec(ctx: &Context) -> Result<String, CliError> {
    let l = &ctx.loaded;
    let c = &l.config;
    let s = &c.misspec;
    let x0 = DVector::from_vec(state_or(
        l.theta(),
        &s.initial_state,
        l.params.n,
        "misspec.initial_state",
    )?);
    let sweep = misspec::misspec_sweep(&l.params, &l.prefs, c.horizon, &x0, &s.axis1, &s.axis2, &ctrl())?;
    ctx.sink.write_grids("misspec", &[&sweep.delta_value, &sweep.sharpe])?;
    let summary = MisspecSummary {
        true_value: sweep.true_value,
        diverged_cells: sweep.diverged.iter().map(|&(i, j)| (s.axis1[i], s.axis2[j])).collect(),
        missing_cells: sweep.delta_value.missing_count(),
    };
    ctx.sink.write_json("misspec_summary.json", &summary)?;
    if ctx.plot {
        plot::heatmap(
            &ctx.sink.path("misspec.svg"),
            "P_gamma(estimate) - J(true)",
            &sweep.delta_value,
        )?;
    }
    Ok(format!(
        "{}x{} misspecification grid, {} cells with divergent expected utility",
        s.axis1.len(),
        s.axis2.len(),
        sweep.diverged.len()
    ))
}

#[derive(Debug, Serialize)]
struct SensitivityEntry {
    gamma: f64,
    report: Option<analysis::CorrSensitivityReport>,
    note: Option<String>,
}

pub fn corr_sweep(ctx: &Context) -> Result<String, CliError> {
    let l = &ctx.loaded;
    let c = &l.config;
    let s = &c.corr_sweep;
    let gammas = s.gammas.clone().unwrap_or_else(|| vec![c.gamma]);
    let grid = analysis::value_vs_correlation(&l.params, s.pair, &s.rho, &gammas, c.horizon, &ctrl())?;
    ctx.sink.write_grids("corr_sweep", &[&grid])?;

    let identity = l.params.corr == nalgebra::DMatrix::identity(l.params.n, l.params.n);
    let entries = gammas
        .iter()
        .map(|&g| {
            if !identity {
                return Ok(SensitivityEntry {
                    gamma: g,
                    report: None,
                    note: Some("derivatives are taken at an identity correlation matrix only".into()),
                });
            }
            let prefs = Preferences::new(g)?;
            Ok(
                match analysis::corr_sensitivity(&l.params, &prefs, c.horizon, s.pair, s.step, &ctrl()) {
                    Ok(r) => SensitivityEntry {
                        gamma: g,
                        report: Some(r),
                        note: None,
                    },
                    Err(e) => SensitivityEntry {
                        gamma: g,
                        report: None,
                        note: Some(format!("{}: {e}", e.name())),
                    },
                },
            )
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    ctx.sink.write_json("corr_sensitivity.json", &entries)?;
    if ctx.plot {
        plot::grid_columns(
            &ctx.sink.path("corr_sweep.svg"),
            "J(1, theta, 0) against correlation",
            &grid,
        )?;
    }
    Ok(format!(
        "{} correlations x {} risk aversions",
        s.rho.len(),
        gammas.len()
    ))
}

/// The two figure grids for a loaded config.
pub fn kappa_grids(l: &Loaded) -> Result<(SensitivityGrid, SensitivityGrid), CliError> {
    let c = &l.config;
    let s = &c.kappa_sweep;
    let kappa = s.kappa.unwrap_or(l.params.kappa[0]);
    let curves = analysis::d_curve_1d(kappa, &s.gammas, c.horizon, s.points)?;
    let x0 = DVector::from_vec(state_or(
        l.theta(),
        &s.initial_state,
        l.params.n,
        "kappa_sweep.initial_state",
    )?);
    let values = analysis::value_vs_kappa2_rho(&l.params, &l.prefs, c.horizon, &x0, &s.kappa2, &s.rho, &ctrl())?;
    Ok((curves, values))
}

pub fn kappa_sweep(ctx: &Context) -> Result<String, CliError> {
    let (curves, values) = kappa_grids(&ctx.loaded)?;
    ctx.sink.write_grids("d_curve", &[&curves])?;
    ctx.sink.write_grids("value_kappa2_rho", &[&values])?;
    if ctx.plot {
        plot::grid_rows(&ctx.sink.path("d_curve.svg"), "Position multiplier D(T - t)", &curves)?;
        plot::grid_columns(
            &ctx.sink.path("value_kappa2_rho.svg"),
            "J(1, x0, 0) against kappa2",
            &values,
        )?;
    }
    Ok(format!(
        "{} position curves, {}x{} value grid",
        curves.axis1.len(),
        values.axis1.len(),
        values.axis2.len()
    ))
}

#[derive(Debug, Serialize)]
struct VerifyOutput<'a> {
    all_passed: bool,
    criteria: BTreeMap<u32, bool>,
    options: VerifyOptions,
    checks: &'a VerifyReport,
}

pub fn run_verify(sink: &Sink, opts: VerifyOptions) -> Result<(VerifyReport, String), CliError> {
    let report = verify::run(&opts);
    let mut criteria = BTreeMap::new();
    for c in 1..=12 {
        if let Some(passed) = report.criterion_passed(c) {
            criteria.insert(c, passed);
        }
    }
    let out = VerifyOutput {
        all_passed: report.all_passed(),
        criteria: criteria.clone(),
        options: opts,
        checks: &report,
    };
    sink.write_json("verify.json", &out)?;
    let mut text = String::new();
    for (c, passed) in &criteria {
        text.push_str(&format!("{} criterion {c}\n", if *passed { "PASS" } else { "FAIL" }));
    }
    for f in report.failures() {
        text.push_str(&format!(
            "  failed [{}] {}: {} ({})\n",
            f.criterion, f.name, f.measured, f.detail
        ));
    }
    Ok((report, text))
}
