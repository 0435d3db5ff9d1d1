//! Oracle and identity suite. Each function covers one numbered group of
//! checks and returns plain records, so the same suite backs the `verify`
//! command and the acceptance harness.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{self, SensitivityGrid};
use crate::control::{self, StrategySpec};
use crate::linalg::{self, spd_inverse};
use crate::misspec::{self, EstimatedParams};
use crate::model::{OUParams, Preferences};
use crate::ode::Tolerance;
use crate::riccati::{self, RiccatiSolution, StepControl};
use crate::wealth::{self, Recording, SimulationConfig};
use crate::{Error, Result};

const HORIZON: f64 = 3.0;
const DELTAS: [f64; 3] = [0.2, 1.0, 2.0];
const RHOS: [f64; 4] = [-0.8, 0.0, 0.5, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub passed: bool,
    /// Reported for context only; never affects the verdict.
    pub informational: bool,
    pub measured: f64,
    pub limit: f64,
    pub detail: String,
}

impl Check {
    fn at_most(criterion: u32, name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self {
            criterion,
            name: name.into(),
            passed: measured <= limit,
            informational: false,
            measured,
            limit,
            detail: String::new(),
        }
    }

    fn at_least(criterion: u32, name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self {
            passed: measured >= limit,
            ..Self::at_most(criterion, name, measured, limit)
        }
    }

    fn flag(criterion: u32, name: impl Into<String>, passed: bool) -> Self {
        Self {
            passed,
            ..Self::at_most(criterion, name, f64::NAN, f64::NAN)
        }
    }

    fn failed(criterion: u32, name: impl Into<String>, err: &Error) -> Self {
        Self::flag(criterion, name, false).detail(format!("error: {err}"))
    }

    fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    fn informational(mut self) -> Self {
        self.informational = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    /// Verdict for one criterion: `None` when it has no binding checks.
    pub fn criterion_passed(&self, criterion: u32) -> Option<bool> {
        let mut binding = self
            .checks
            .iter()
            .filter(|c| c.criterion == criterion && !c.informational)
            .peekable();
        binding.peek()?;
        Some(binding.all(|c| c.passed))
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.informational || c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.informational && !c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub mc_paths: usize,
    /// Run the simulation-based groups (5, 6, 7).
    pub monte_carlo: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            mc_paths: 100_000,
            monte_carlo: true,
        }
    }
}

/// Runs every group that works on model output alone (11 needs sweep grids
/// and 12 needs repeated runs, both handled by [`figure_checks`] and
/// [`determinism`]).
pub fn run(opts: &VerifyOptions) -> VerifyReport {
    let ctrl = StepControl::default();
    let mut checks = Vec::new();
    checks.extend(closed_form_oracles(&ctrl));
    checks.extend(log_utility_static(&ctrl));
    checks.extend(value_feedback_consistency(opts.seed, &ctrl));
    checks.extend(cross_entry_relation(opts.seed, &ctrl));
    if opts.monte_carlo {
        checks.extend(monte_carlo_value(opts, &ctrl));
        checks.extend(wealth_decomposition(opts, &ctrl));
        checks.extend(misspecification(opts, &ctrl));
    } else {
        checks.extend(misspecification_analytic(&ctrl));
    }
    checks.extend(theorem_numerics(&ctrl));
    checks.extend(auxiliary_oracles());
    checks.extend(matrix_identities());
    if let Ok(grids) = figure_grids(&ctrl) {
        checks.extend(figure_checks(&grids.0, &grids.1));
    }
    checks.extend(determinism(opts.seed, &ctrl));
    VerifyReport { checks }
}

fn max_gap_on_grid<F>(sol: &RiccatiSolution, oracle: F) -> Result<f64>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    let mut worst = 0.0f64;
    for (tau, m) in sol.tau().iter().zip(sol.values()) {
        worst = worst.max(linalg::max_abs_diff(m, &oracle(*tau)?));
    }
    Ok(worst)
}

fn relative_gap_on_grid<F>(sol: &RiccatiSolution, oracle: F) -> Result<f64>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    let mut worst = 0.0f64;
    for (tau, m) in sol.tau().iter().zip(sol.values()) {
        let o = oracle(*tau)?;
        worst = worst.max(linalg::max_abs_diff(m, &o) / linalg::max_abs(&o).max(1.0));
    }
    Ok(worst)
}

fn check_result(criterion: u32, name: impl Into<String>, limit: f64, value: Result<f64>) -> Check {
    match value {
        Ok(v) => Check::at_most(criterion, name, v, limit),
        Err(e) => Check::failed(criterion, name, &e),
    }
}

/// Group 1: the numerical feedback against every explicit solution.
pub fn closed_form_oracles(ctrl: &StepControl) -> Vec<Check> {
    let start = Instant::now();
    let mut out = Vec::new();
    for &delta in &DELTAS {
        let prefs = Preferences::from_delta(delta).expect("fixed distortion rates are valid");

        let scalar = [0.5, 1.0, 2.0].iter().try_fold(0.0f64, |worst, &kappa| {
            let p = OUParams::unit(vec![kappa], DMatrix::identity(1, 1))?;
            let sol = riccati::solve_d(&p, &prefs, HORIZON, ctrl)?;
            let gap = max_gap_on_grid(&sol, |t| {
                Ok(DMatrix::from_element(
                    1,
                    1,
                    riccati::d_scalar_closed_form(kappa, delta, t),
                ))
            })?;
            Ok::<_, Error>(worst.max(gap))
        });
        out.push(check_result(1, format!("scalar delta={delta}"), 1e-8, scalar));

        let kappas = [1.0, 0.5, 0.2];
        let unc = (|| {
            let p = OUParams::unit(kappas.to_vec(), DMatrix::identity(3, 3))?;
            let sol = riccati::solve_d(&p, &prefs, HORIZON, ctrl)?;
            max_gap_on_grid(&sol, |t| Ok(riccati::d_uncorrelated(&kappas, delta, t)))
        })();
        out.push(check_result(1, format!("uncorrelated delta={delta}"), 1e-8, unc));

        for &rho in &RHOS {
            let common = (|| {
                let p = OUParams::two_asset(0.8, 0.8, rho)?;
                let sol = riccati::solve_d(&p, &prefs, HORIZON, ctrl)?;
                max_gap_on_grid(&sol, |t| riccati::d_common_kappa(0.8, &p.corr, delta, t))
            })();
            out.push(check_result(
                1,
                format!("common-rate delta={delta} rho={rho}"),
                1e-8,
                common,
            ));
            out.extend(single_mr_checks(delta, rho, &prefs, ctrl));
        }
    }
    out.push(Check::at_most(
        1,
        "oracle suite runtime (s)",
        start.elapsed().as_secs_f64(),
        10.0,
    ));
    out
}

fn single_mr_checks(delta: f64, rho: f64, prefs: &Preferences, ctrl: &StepControl) -> Vec<Check> {
    let name = format!("single-asset-reversion delta={delta} rho={rho}");
    let p = match OUParams::two_asset(1.0, 0.0, rho) {
        Ok(p) => p,
        Err(e) => return vec![Check::failed(1, name, &e)],
    };
    let gamma = prefs.gamma();
    let singular = match riccati::single_mr_singularity(1.0, &p.corr, gamma) {
        Ok(s) => s.filter(|&ts| ts <= HORIZON),
        Err(e) => return vec![Check::failed(1, name, &e)],
    };
    let oracle = |t: f64| riccati::d_single_mr(1.0, &p.corr, gamma, t);
    match singular {
        None => {
            let gap = riccati::solve_d(&p, prefs, HORIZON, ctrl).and_then(|sol| max_gap_on_grid(&sol, oracle));
            vec![check_result(1, name, 1e-8, gap)]
        }
        Some(ts) => {
            // the explicit solution ends at ts, so compare up to 0.9 ts in
            // relative terms and check that the solver stops at ts
            let cut = 0.9 * ts;
            let gap = riccati::solve_d(&p, prefs, cut, ctrl).and_then(|sol| relative_gap_on_grid(&sol, oracle));
            let located = match riccati::solve_d(&p, prefs, HORIZON, ctrl) {
                Err(Error::BlowUpDetected { tau }) => Check::at_most(
                    1,
                    format!("{name} blow-up location"),
                    (tau - ts).abs(),
                    1e-6 * ts.max(1.0),
                )
                .detail(format!("solver stopped at {tau}, explicit singularity at {ts}")),
                Err(e) => Check::failed(1, format!("{name} blow-up location"), &e),
                Ok(_) => Check::flag(1, format!("{name} blow-up location"), false)
                    .detail(format!("solver passed the singularity at {ts}")),
            };
            vec![
                check_result(1, format!("{name} up to 0.9 tau*={ts:.6} (relative)"), 1e-8, gap),
                located,
            ]
        }
    }
}

/// Group 2: the log-utility feedback is the constant `Θ⁻¹κ`.
pub fn log_utility_static(ctrl: &StepControl) -> Vec<Check> {
    let prefs = Preferences::new(0.0).expect("log utility is valid");
    let mut models: Vec<(String, OUParams)> = RHOS
        .iter()
        .map(|&rho| (format!("n=2 rho={rho}"), OUParams::two_asset(1.0, 0.5, rho)))
        .filter_map(|(n, p)| p.ok().map(|p| (n, p)))
        .collect();
    let corr3 = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 1.0, 0.5, -0.2, 0.5, 1.0]);
    if let Ok(p) = OUParams::unit(vec![1.0, 0.5, 0.2], corr3) {
        models.push(("n=3".into(), p));
    }
    models
        .into_iter()
        .map(|(name, p)| {
            let gap = (|| {
                let target = spd_inverse(&p.corr)? * p.kappa_matrix();
                let sol = riccati::solve_d(&p, &prefs, HORIZON, ctrl)?;
                max_gap_on_grid(&sol, |_| Ok(target.clone()))
            })();
            check_result(2, format!("static log feedback {name}"), 1e-10, gap)
        })
        .collect()
}

/// Random valid model with `n` assets and a preference that keeps the
/// feedback finite on the horizon.
fn random_model(rng: &mut ChaCha8Rng, n: usize, ctrl: &StepControl) -> (OUParams, Preferences) {
    loop {
        let kappa: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
        let mut corr = DMatrix::identity(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let r = rng.random_range(-0.6..0.6);
                corr[(i, j)] = r;
                corr[(j, i)] = r;
            }
        }
        let gamma = rng.random_range(-6.0..0.5);
        if linalg::min_eigenvalue(&corr) < 0.1 {
            continue;
        }
        let (Ok(p), Ok(prefs)) = (OUParams::unit(kappa, corr), Preferences::new(gamma)) else {
            continue;
        };
        if riccati::solve_d(&p, &prefs, HORIZON, ctrl).is_ok() {
            return (p, prefs);
        }
    }
}

fn draws(seed: u64, ctrl: &StepControl) -> Vec<(OUParams, Preferences)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..20).map(|k| random_model(&mut rng, 1 + k % 3, ctrl)).collect()
}

/// Group 3: `δΘ⁻¹κ - (A + Aᵀ) = D` for independent solves of both equations.
pub fn value_feedback_consistency(seed: u64, ctrl: &StepControl) -> Vec<Check> {
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    for (k, (p, prefs)) in draws(seed, ctrl).iter().enumerate() {
        let gap = (|| {
            let a = riccati::solve_a(p, prefs, HORIZON, ctrl)?;
            let d = riccati::solve_d(p, prefs, HORIZON, ctrl)?;
            let offset = spd_inverse(&p.corr)? * p.kappa_matrix() * prefs.delta();
            let mut g = 0.0f64;
            for (tau, m) in a.tau().iter().zip(a.values()) {
                let from_a = &offset - (m + m.transpose());
                g = g.max(linalg::max_abs_diff(&from_a, &d.interpolate(*tau)?));
            }
            Ok::<_, Error>(g)
        })();
        match gap {
            Ok(g) if g >= worst => {
                worst = g;
                worst_case = format!("draw {k}: n={} gamma={:.3}", p.n, prefs.gamma());
            }
            Ok(_) => {}
            Err(e) => return vec![Check::failed(3, format!("value/feedback draw {k}"), &e)],
        }
    }
    vec![Check::at_most(3, "value/feedback consistency, 20 draws", worst, 1e-8).detail(worst_case)]
}

/// Group 4: `D_ij - D_ji` keeps its terminal value `δ(Θ⁻¹)_ij(κ_j - κ_i)`.
pub fn cross_entry_relation(seed: u64, ctrl: &StepControl) -> Vec<Check> {
    let mut worst = 0.0f64;
    let mut literal = 0.0f64;
    for (k, (p, prefs)) in draws(seed, ctrl).iter().enumerate().filter(|(_, (p, _))| p.n > 1) {
        let d = match riccati::solve_d(p, prefs, HORIZON, ctrl) {
            Ok(d) => d,
            Err(e) => return vec![Check::failed(4, format!("cross-entry draw {k}"), &e)],
        };
        let inv = match spd_inverse(&p.corr) {
            Ok(m) => m,
            Err(e) => return vec![Check::failed(4, format!("cross-entry draw {k}"), &e)],
        };
        let delta = prefs.delta();
        for m in d.values() {
            for i in 0..p.n {
                for j in 0..p.n {
                    if i == j {
                        continue;
                    }
                    let constant = delta * inv[(i, j)] * (p.kappa[j] - p.kappa[i]);
                    worst = worst.max((m[(i, j)] - m[(j, i)] - constant).abs());
                }
            }
        }
        let m0 = &d.values()[0];
        for i in 0..p.n {
            for j in 0..p.n {
                let lhs = m0[(i, j)] + delta * inv[(i, j)] * p.kappa[j];
                let rhs = m0[(j, i)] + delta * inv[(i, j)] * p.kappa[i];
                literal = literal.max((lhs - rhs).abs());
            }
        }
    }
    vec![
        Check::at_most(4, "D_ij - D_ji constant on the grid", worst, 1e-8),
        Check::at_most(
            4,
            "display with +δ(Θ⁻¹)_ij κ_j on the D_ij side, at tau = 0",
            literal,
            1e-8,
        )
        .informational()
        .detail("the terminal condition D(0) = δΘ⁻¹κ fixes the opposite sign"),
    ]
}

fn mc_cases() -> Vec<(&'static str, f64, OUParams)> {
    let mut out = Vec::new();
    if let Ok(p) = OUParams::unit(vec![1.0], DMatrix::identity(1, 1)) {
        out.push(("gamma=-4 n=1", -4.0, p));
    }
    if let Ok(p) = OUParams::two_asset(1.0, 0.5, 0.7) {
        out.push(("gamma=-4 n=2", -4.0, p.clone()));
        out.push(("gamma=-1 n=2", -1.0, p));
    }
    out
}

/// Group 5: simulated expected utility against the value function.
pub fn monte_carlo_value(opts: &VerifyOptions, ctrl: &StepControl) -> Vec<Check> {
    mc_cases()
        .into_iter()
        .flat_map(|(name, gamma, p)| {
            let start = Instant::now();
            let name = format!("MC value {name}");
            let run = (|| {
                let prefs = Preferences::new(gamma)?;
                let x0 = DVector::zeros(p.n);
                let a = control::solve_value(&p, &prefs, HORIZON, ctrl)?;
                let j = control::value_function(1.0, &x0, 0.0, &a, &prefs, &p)?.total();
                let spec = StrategySpec::optimal(&p, &prefs, HORIZON, ctrl)?;
                let cfg = SimulationConfig::new(HORIZON, opts.mc_paths, opts.seed, vec![0.0; p.n]);
                let est = wealth::simulate(&p, &spec, &cfg)?.utility_estimate(&prefs);
                Ok::<_, Error>((j, est))
            })();
            let runtime = Check::at_most(5, format!("{name} runtime (s)"), start.elapsed().as_secs_f64(), 60.0);
            let accuracy = match run {
                Ok((j, est)) => Check::at_most(5, name, est.z_score(j).abs(), 3.0).detail(format!(
                    "J = {j:.8}, MC = {:.8} ± {:.2e} over {} paths",
                    est.mean, est.std_error, est.count
                )),
                Err(e) => Check::failed(5, name, &e),
            };
            [accuracy, runtime]
        })
        .collect()
}

fn residual_mean(
    p: &OUParams,
    spec: &StrategySpec,
    prefs: &Preferences,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<f64> {
    const CHUNK: usize = 25_000;
    let (mut sum, mut count) = (0.0, 0usize);
    let mut chunk_seed = seed;
    while count < paths {
        let size = CHUNK.min(paths - count);
        let cfg = SimulationConfig::new(spec.horizon(), size, chunk_seed, vec![0.5, -0.3])
            .with_steps(steps)
            .with_recording(Recording::Full);
        let ens = wealth::simulate(p, spec, &cfg)?;
        for d in wealth::decompose_all(&ens, spec, p, prefs)? {
            sum += d.residual();
        }
        count += size;
        chunk_seed += 1;
    }
    Ok(sum / count as f64)
}

fn rms_residual(p: &OUParams, spec: &StrategySpec, prefs: &Preferences, steps: usize, seed: u64) -> Result<(f64, f64)> {
    let cfg = SimulationConfig::new(spec.horizon(), 2000, seed, vec![0.5, -0.3])
        .with_steps(steps)
        .with_recording(Recording::Full);
    let ens = wealth::simulate(p, spec, &cfg)?;
    let decs = wealth::decompose_all(&ens, spec, p, prefs)?;
    let mut stored_gap = 0.0f64;
    let mut sq = 0.0;
    for (dec, path) in decs.iter().zip(&ens.paths) {
        stored_gap = stored_gap.max((dec.total - (path.terminal_log_wealth() - path.log_wealth[0])).abs());
        sq += dec.residual().powi(2);
    }
    Ok(((sq / decs.len() as f64).sqrt(), stored_gap))
}

/// Least-squares slope of `log |e|` against `log dt`.
fn observed_order(steps: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|&s| -(s as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.abs().ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Group 6: the three-term split of log-wealth.
pub fn wealth_decomposition(opts: &VerifyOptions, ctrl: &StepControl) -> Vec<Check> {
    let mut out = Vec::new();
    let setup = (|| {
        let p = OUParams::two_asset(1.0, 0.5, 0.7)?;
        let prefs = Preferences::new(-4.0)?;
        let spec = StrategySpec::optimal(&p, &prefs, 1.0, ctrl)?;
        Ok::<_, Error>((p, prefs, spec))
    })();
    let (p, prefs, spec) = match setup {
        Ok(s) => s,
        Err(e) => return vec![Check::failed(6, "decomposition setup", &e)],
    };

    match (
        rms_residual(&p, &spec, &prefs, 256, opts.seed),
        rms_residual(&p, &spec, &prefs, 512, opts.seed),
    ) {
        (Ok((coarse, g1)), Ok((fine, g2))) => {
            out.push(Check::at_most(
                6,
                "decomposed total equals simulated log-wealth",
                g1.max(g2),
                1e-10,
            ));
            out.push(
                Check::at_most(
                    6,
                    "per-path residual shrinks with the step (rms ratio 512/256)",
                    fine / coarse,
                    0.8,
                )
                .detail(format!("rms residual {coarse:.3e} at 256 steps, {fine:.3e} at 512")),
            );
        }
        (Err(e), _) | (_, Err(e)) => out.push(Check::failed(6, "per-path residual", &e)),
    }

    for (name, model) in [
        ("identity correlation", OUParams::two_asset(1.0, 0.5, 0.0)),
        ("common rate", OUParams::two_asset(0.7, 0.7, 0.6)),
    ] {
        let worst = (|| {
            let m = model?;
            let spec = StrategySpec::optimal(&m, &prefs, 1.0, ctrl)?;
            let cfg = SimulationConfig::new(1.0, 500, opts.seed, vec![0.4, -0.4])
                .with_steps(128)
                .with_recording(Recording::Full);
            let ens = wealth::simulate(&m, &spec, &cfg)?;
            let decs = wealth::decompose_all(&ens, &spec, &m, &prefs)?;
            Ok::<_, Error>(decs.iter().fold(0.0f64, |w, d| w.max(d.term_c.abs())))
        })();
        out.push(check_result(6, format!("hedging term is zero, {name}"), 0.0, worst));
    }

    let steps = [16, 32, 64, 128];
    let means: Result<Vec<f64>> = steps
        .iter()
        .map(|&s| residual_mean(&p, &spec, &prefs, s, opts.mc_paths, opts.seed))
        .collect();
    match means {
        Ok(m) => {
            let order = observed_order(&steps, &m);
            let detail = steps
                .iter()
                .zip(&m)
                .map(|(s, e)| format!("{s}: {e:.3e}"))
                .collect::<Vec<_>>()
                .join(", ");
            out.push(Check::at_least(6, "mean residual order in the step", order, 0.9).detail(detail));
        }
        Err(e) => out.push(Check::failed(6, "mean residual order", &e)),
    }
    out
}

fn p_gamma_matches_value(ctrl: &StepControl) -> Vec<Check> {
    let run = (|| {
        let p = OUParams::two_asset(1.0, 0.5, 0.7)?;
        let prefs = Preferences::new(-4.0)?;
        let q = misspec::solve_q(-4.0, &p, &EstimatedParams::exact(&p), &prefs, HORIZON, ctrl)?;
        let a = control::solve_value(&p, &prefs, HORIZON, ctrl)?;
        let mut worst = 0.0f64;
        for x in [vec![0.0, 0.0], vec![0.5, -0.3], vec![-1.0, 1.2]] {
            let x = DVector::from_vec(x);
            let pg = misspec::p_epsilon(1.0, &x, 0.0, -4.0, &q, &p)?.p_value;
            let j = control::value_function(1.0, &x, 0.0, &a, &prefs, &p)?.total();
            worst = worst.max(((pg - j) / j).abs());
        }
        Ok::<_, Error>(worst)
    })();
    vec![check_result(
        7,
        "P_gamma with exact estimates equals J (relative)",
        1e-8,
        run,
    )]
}

const SWEEP_AXIS: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];

fn sweep_checks(ctrl: &StepControl) -> Vec<Check> {
    let run = (|| {
        let p = OUParams::two_asset(1.0, 0.5, 0.7)?;
        let prefs = Preferences::new(-4.0)?;
        misspec::misspec_sweep(&p, &prefs, HORIZON, &DVector::zeros(2), &SWEEP_AXIS, &SWEEP_AXIS, ctrl)
    })();
    let sweep = match run {
        Ok(s) => s,
        Err(e) => return vec![Check::failed(7, "misspecification sweep", &e)],
    };
    let truth = SWEEP_AXIS
        .iter()
        .position(|&m| m == 1.0)
        .expect("axis holds the true point");
    let last = SWEEP_AXIS.len() - 1;
    let mut worst = f64::INFINITY;
    let mut unevaluated = 0;
    for i in 0..SWEEP_AXIS.len() {
        for j in 0..SWEEP_AXIS.len() {
            let loss = sweep.loss(i, j);
            if loss.is_nan() {
                unevaluated += 1;
            } else {
                worst = worst.min(loss);
            }
        }
    }
    let diverged = sweep.diverged.len();
    vec![
        Check::at_most(7, "zero loss at the true rates", sweep.loss(truth, truth).abs(), 1e-8),
        Check::at_least(7, "no cell beats the optimum", worst, -1e-8)
            .detail(format!("{diverged} cells with divergent expected utility")),
        Check::flag(7, "every sweep cell evaluated or divergent", unevaluated == 0),
        Check::flag(
            7,
            "overestimating both rates loses more than underestimating",
            sweep.loss(last, last) > sweep.loss(0, 0),
        )
        .detail(format!(
            "loss at (2,2) = {}, at (0.5,0.5) = {}",
            sweep.loss(last, last),
            sweep.loss(0, 0)
        )),
    ]
}

/// Group 7 without the simulation part.
pub fn misspecification_analytic(ctrl: &StepControl) -> Vec<Check> {
    let mut out = p_gamma_matches_value(ctrl);
    out.extend(sweep_checks(ctrl));
    out
}

/// Misestimated rate multipliers used for the moment comparisons.
pub const MISSPECIFIED_MULTIPLIERS: [[f64; 2]; 3] = [[0.5, 1.0], [1.5, 0.8], [0.7, 1.3]];

/// Group 7: moments under misestimated rates, the sweep and its anchor.
pub fn misspecification(opts: &VerifyOptions, ctrl: &StepControl) -> Vec<Check> {
    let mut out = p_gamma_matches_value(ctrl);
    for m in MISSPECIFIED_MULTIPLIERS {
        let name = format!("moments for multipliers {m:?}");
        let run = (|| {
            let p = OUParams::two_asset(1.0, 0.5, 0.7)?;
            let prefs = Preferences::new(-4.0)?;
            let x0 = DVector::from_vec(vec![0.5, -0.3]);
            let est = EstimatedParams::kappa_scaled(&p, &m)?;
            let spec = misspec::misspecified_strategy(&p, &est, &prefs, HORIZON, ctrl)?;
            let cfg = SimulationConfig::new(HORIZON, opts.mc_paths, opts.seed, vec![0.5, -0.3]);
            let ens = wealth::simulate(&p, &spec, &cfg)?;
            let mut rows = Vec::new();
            for eps in [1.0, 2.0] {
                let q = misspec::solve_q_for(eps, &spec, &p, ctrl)?;
                let pv = misspec::p_epsilon(1.0, &x0, 0.0, eps, &q, &p)?.p_value;
                let est = ens.moment_estimate(eps);
                // the standard error is only meaningful with a finite 2ε moment
                let finite_variance = misspec::solve_q_for(2.0 * eps, &spec, &p, ctrl).is_ok();
                rows.push((eps, pv, est, finite_variance));
            }
            Ok::<_, Error>(rows)
        })();
        match run {
            Ok(rows) => {
                for (eps, pv, est, finite_variance) in rows {
                    out.push(
                        Check::at_most(7, format!("{name} P_{eps}"), est.z_score(pv).abs(), 3.0).detail(format!(
                            "ODE {pv:.8}, MC {:.8} ± {:.2e}, finite variance: {finite_variance}",
                            est.mean, est.std_error
                        )),
                    );
                }
            }
            Err(e) => out.push(Check::failed(7, name, &e)),
        }
    }
    out.extend(sweep_checks(ctrl));
    out
}

/// Group 8: correlation derivatives of `J(1, θ, 0)` at `Θ = I`.
pub fn theorem_numerics(ctrl: &StepControl) -> Vec<Check> {
    let mut out = Vec::new();
    for gamma in [-4.0, 0.5] {
        for (ki, kj) in [(1.0, 0.5), (1.0, 1.0)] {
            let tag = format!("gamma={gamma} kappa=({ki},{kj})");
            let run = (|| {
                let p = OUParams::unit(vec![ki, kj, 0.2], DMatrix::identity(3, 3))?;
                let prefs = Preferences::new(gamma)?;
                analysis::corr_sensitivity(&p, &prefs, HORIZON, (0, 1), analysis::DEFAULT_STEP, ctrl)
            })();
            let r = match run {
                Ok(r) => r,
                Err(e) => {
                    out.push(Check::failed(8, tag, &e));
                    continue;
                }
            };
            let d1 = r.first_derivative;
            out.push(
                Check::at_most(
                    8,
                    format!("first derivative vanishes {tag}"),
                    d1.value.abs(),
                    5.0 * d1.error,
                )
                .detail(format!("estimate {:.3e} ± {:.3e}", d1.value, d1.error)),
            );
            let mixed = r
                .mixed_derivatives
                .iter()
                .map(|m| m.estimate.value.abs() - 5.0 * m.estimate.error)
                .fold(f64::NEG_INFINITY, f64::max);
            out.push(Check::at_most(8, format!("mixed partials vanish {tag}"), mixed, 0.0));
            let d2 = r.second_derivative;
            let detail = format!("J = {:.6e}, d2J = {:.6e} ± {:.2e}", r.value, d2.value, d2.error);
            if ki == kj {
                out.push(
                    Check::at_most(
                        8,
                        format!("second derivative vanishes {tag}"),
                        d2.value.abs(),
                        5.0 * d2.error,
                    )
                    .detail(detail),
                );
            } else {
                let sign_gamma = if gamma > 0.0 { 1 } else { -1 };
                out.push(
                    Check::flag(
                        8,
                        format!("sign of d2J equals sign of gamma {tag}"),
                        d2.resolved_sign() == sign_gamma,
                    )
                    .detail(detail.clone()),
                );
                // J = (1/γ) exp(∫Tr(AΘ)/δ) and J' = 0, so d2J = J ∂²∫Tr(AΘ) / δ
                let trace_second = d2.value * Preferences::new(gamma).map(|p| p.delta()).unwrap_or(f64::NAN) / r.value;
                out.push(
                    Check::flag(
                        8,
                        format!("sign of the trace-integral second derivative equals sign of gamma {tag}"),
                        trace_second.signum() as i32 == sign_gamma,
                    )
                    .informational()
                    .detail(format!("δ d2J / J = {trace_second:.6e}")),
                );
                out.push(
                    Check::flag(
                        8,
                        format!("Θ = I is a local minimum of J {tag}"),
                        d2.resolved_sign() == 1,
                    )
                    .informational()
                    .detail(detail),
                );
            }
        }
    }
    out
}

/// Fifth-order central difference of `f` at `t`.
fn derivative5<F: Fn(f64) -> f64>(f: F, t: f64, h: f64) -> f64 {
    (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h)
}

fn simpson<F: Fn(f64) -> f64>(f: F, b: f64, n: usize) -> f64 {
    let h = b / n as f64;
    let mut s = f(0.0) + f(b);
    for k in 1..n {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Group 9: the auxiliary closed forms against their equations.
pub fn auxiliary_oracles() -> Vec<Check> {
    let mut out = Vec::new();
    let h = 1e-4;
    let mut residual = 0.0f64;
    for &(kappa, delta) in &[(1.0, 4.0), (0.5, 0.2), (2.0, 2.0), (1.2, 0.5)] {
        for k in 0..=300 {
            let tau = (0.01 * k as f64).max(2.0 * h);
            let psi = |t: f64| analysis::psi_closed_form(kappa, delta, t);
            let r = derivative5(psi, tau, h) - analysis::psi_rate(kappa, delta, psi(tau));
            residual = residual.max(r.abs());
        }
    }
    out.push(Check::at_most(9, "psi residual on [0, 3]", residual, 1e-8));
    let psi = |t: f64| analysis::psi_closed_form(1.0, 4.0, t);
    let point = (derivative5(psi, 1.0, h) - analysis::psi_rate(1.0, 4.0, psi(1.0))).abs();
    out.push(Check::at_most(9, "psi residual at kappa=1 delta=4 tau=1", point, 1e-10));

    let mut quad = 0.0f64;
    for &(kappa, delta, tau) in &[(1.0, 4.0, 2.0), (0.3, 0.2, 3.0), (2.0, 0.5, 5.0)] {
        let q = simpson(|u| analysis::psi_closed_form(kappa, delta, u), tau, 2000);
        quad = quad.max((analysis::psi_integral(kappa, delta, tau) - q).abs());
    }
    out.push(Check::at_most(9, "psi integral against quadrature", quad, 1e-10));

    let mut property = 0.0f64;
    for &(kappa, delta) in &[(1.0, 4.0), (0.5, 0.2), (2.0, 1.0), (0.7, 3.0)] {
        for k in 0..=300 {
            let tau = 0.01 * k as f64;
            let lhs = analysis::psi_closed_form(kappa, delta, tau) + (1.0 - delta) * kappa / 2.0;
            property = property.max((lhs - analysis::psi_shifted(kappa, delta, tau)).abs());
        }
    }
    out.push(Check::at_most(9, "psi shifted identity", property, 1e-12));

    let tol = Tolerance::default();
    let lambda = (|| {
        let mut worst = 0.0f64;
        for &ki in &[0.3, 1.0, 2.0] {
            for &kj in &[0.5, 1.0, 1.7] {
                for &delta in &[0.2, 1.0, 4.0] {
                    let traj = analysis::lambda_ode(ki, kj, delta, HORIZON, &tol)?;
                    for (t, y) in traj.t.iter().zip(&traj.y) {
                        worst = worst.max((analysis::lambda_closed_form(ki, kj, delta, *t) - y[0]).abs());
                    }
                }
            }
        }
        Ok::<_, Error>(worst)
    })();
    out.push(check_result(9, "lambda against its equation, 3x3x3 grid", 1e-8, lambda));

    let signs = (|| {
        let mut bad = Vec::new();
        for &(ki, kj) in &[(1.0, 0.5), (0.3, 1.2), (2.0, 0.7), (0.8, 0.8)] {
            for &delta in &[0.2, 0.5, 1.0, 2.0, 4.0] {
                let total = analysis::phi_diagonal(ki, kj, delta, HORIZON, &tol)?.total();
                let ok = if delta == 1.0 || ki == kj {
                    total.abs() <= 1e-14
                } else if delta > 1.0 {
                    total > 0.0
                } else {
                    total < 0.0
                };
                if !ok {
                    bad.push(format!("({ki},{kj}) delta={delta}: {total:.3e}"));
                }
            }
        }
        Ok::<_, Error>(bad)
    })();
    out.push(match signs {
        Ok(bad) => Check::flag(9, "phi integral sign cases", bad.is_empty()).detail(bad.join("; ")),
        Err(e) => Check::failed(9, "phi integral sign cases", &e),
    });
    out
}

/// Group 10: derivative identities of `Θ⁻¹` and `Γ` at `Θ = I`.
pub fn matrix_identities() -> Vec<Check> {
    type Case<'a> = (&'a [f64], (usize, usize), (usize, usize));
    let cases: [Case; 3] = [
        (&[1.0, 0.5], (0, 1), (0, 1)),
        (&[1.0, 0.5, 0.2], (0, 1), (1, 2)),
        (&[0.3, 2.0, 1.1, 0.7], (1, 3), (0, 2)),
    ];
    let mut out = Vec::new();
    for (kappa, mn, pq) in cases {
        match analysis::matrix_calculus_checks(kappa, mn, pq) {
            Ok(report) => out.extend(report.checks.into_iter().map(|c| {
                Check::at_most(
                    10,
                    format!("{} kappa={kappa:?} pairs {mn:?} {pq:?}", c.name),
                    c.max_error,
                    c.tolerance,
                )
            })),
            Err(e) => out.push(Check::failed(10, format!("identities kappa={kappa:?}"), &e)),
        }
    }
    out
}

/// The two figure grids with their default axes: `D(T - t)` for several
/// risk aversions and `J` over `(κ₂, ρ)`.
pub fn figure_grids(ctrl: &StepControl) -> Result<(SensitivityGrid, SensitivityGrid)> {
    let curves = analysis::d_curve_1d(1.0, &FIGURE_GAMMAS, HORIZON, 61)?;
    let base = OUParams::two_asset(1.0, 0.5, 0.0)?;
    let prefs = Preferences::new(-4.0)?;
    let kappa2: Vec<f64> = (0..=30).map(|k| 0.1 * k as f64).collect();
    let values =
        analysis::value_vs_kappa2_rho(&base, &prefs, HORIZON, &DVector::zeros(2), &kappa2, &FIGURE_RHOS, ctrl)?;
    Ok((curves, values))
}

pub const FIGURE_GAMMAS: [f64; 5] = [-4.0, -1.0, 0.0, 0.25, 0.5];
pub const FIGURE_RHOS: [f64; 5] = [-0.5, 0.0, 0.5, 0.7, 0.9];

fn strictly(values: &[f64], increasing: bool) -> bool {
    values
        .windows(2)
        .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

/// Group 11 on grid data. `curves` has risk aversions on its first axis and
/// times on its second; `values` has `κ₂` first and `ρ` second, with
/// `κ₁ = 1`.
pub fn figure_checks(curves: &SensitivityGrid, values: &SensitivityGrid) -> Vec<Check> {
    let mut out = Vec::new();
    let kappa: f64 = curves.metadata.get("kappa").and_then(|k| k.parse().ok()).unwrap_or(1.0);
    for (i, &gamma) in curves.axis1.values.iter().enumerate() {
        let row = curves.row(i);
        let check = if gamma == 0.0 {
            let flat = row.iter().fold(0.0f64, |m, d| m.max((d - kappa).abs()));
            Check::at_most(11, "position multiplier flat for gamma=0", flat, 1e-12)
        } else if gamma < 0.0 {
            Check::flag(
                11,
                format!("position multiplier decreasing in t for gamma={gamma}"),
                strictly(&row, false),
            )
        } else {
            Check::flag(
                11,
                format!("position multiplier increasing in t for gamma={gamma}"),
                strictly(&row, true),
            )
        };
        out.push(check);
    }

    let rho_index = |r: f64| values.axis2.values.iter().position(|&v| (v - r).abs() < 1e-12);
    match rho_index(0.0) {
        Some(j) => out.push(Check::flag(
            11,
            "value increases with kappa2 at rho=0",
            strictly(&values.column(j), true),
        )),
        None => out.push(Check::flag(11, "grid holds rho=0", false)),
    }
    let high = values
        .axis2
        .values
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (j, r)| match best {
            Some((_, b)) if b >= r => best,
            _ => Some((j, r)),
        });
    match high {
        Some((j, rho)) if rho >= 0.8 => {
            let col = values.column(j);
            let (arg, min) =
                col.iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
            let interior = arg > 0 && arg + 1 < col.len() && min < col[0] && min < col[col.len() - 1];
            let at = values.axis1.values.get(arg).copied().unwrap_or(f64::NAN);
            out.push(
                Check::flag(11, format!("interior minimum in kappa2 at rho={rho}"), interior)
                    .detail(format!("minimum {min:.6e} at kappa2 = {at}")),
            );
        }
        _ => out.push(Check::flag(11, "grid holds a correlation of at least 0.8", false)),
    }
    match values.axis1.values.iter().position(|&k| (k - 1.0).abs() < 1e-12) {
        Some(i) => {
            let row = values.row(i);
            let spread = row.iter().fold(0.0f64, |m, v| m.max((v - row[0]).abs())) / row[0].abs();
            out.push(Check::at_most(
                11,
                "value independent of rho at kappa2=kappa1 (relative)",
                spread,
                1e-8,
            ));
        }
        None => out.push(Check::flag(11, "grid holds kappa2 = kappa1", false)),
    }
    out
}

/// Group 12 at library level: two simulations with one seed agree bitwise.
pub fn determinism(seed: u64, ctrl: &StepControl) -> Vec<Check> {
    let run = (|| {
        let p = OUParams::two_asset(1.0, 0.5, 0.7)?;
        let prefs = Preferences::new(-4.0)?;
        let spec = StrategySpec::optimal(&p, &prefs, 1.0, ctrl)?;
        let cfg = SimulationConfig::new(1.0, 200, seed, vec![0.3, -0.2]);
        let a = wealth::simulate(&p, &spec, &cfg)?.terminal_log_wealth();
        let b = wealth::simulate(&p, &spec, &cfg)?.terminal_log_wealth();
        Ok::<_, Error>(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()))
    })();
    vec![match run {
        Ok(same) => Check::flag(12, "repeated simulation is bitwise identical", same),
        Err(e) => Check::failed(12, "repeated simulation", &e),
    }]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts_ignore_informational_checks() {
        let report = VerifyReport {
            checks: vec![
                Check::at_most(1, "a", 0.5, 1.0),
                Check::flag(1, "b", false).informational(),
                Check::at_least(2, "c", 0.5, 1.0),
            ],
        };
        assert_eq!(report.criterion_passed(1), Some(true));
        assert_eq!(report.criterion_passed(2), Some(false));
        assert_eq!(report.criterion_passed(3), None);
        assert!(!report.all_passed());
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let steps = [16, 32, 64];
        let errs: Vec<f64> = steps.iter().map(|&s| 3.0 / s as f64).collect();
        assert!((observed_order(&steps, &errs) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_groups_pass() {
        let ctrl = StepControl::default();
        for c in log_utility_static(&ctrl)
            .into_iter()
            .chain(cross_entry_relation(3, &ctrl))
            .chain(matrix_identities())
            .chain(auxiliary_oracles())
        {
            assert!(c.passed || c.informational, "{c:?}");
        }
    }

    #[test]
    fn figure_checks_on_default_grids() {
        let (curves, values) = figure_grids(&StepControl::default()).unwrap();
        for c in figure_checks(&curves, &values) {
            assert!(c.passed, "{c:?}");
        }
    }
}
