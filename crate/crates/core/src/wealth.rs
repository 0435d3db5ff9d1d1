//! Monte-Carlo wealth under linear feedback rules.
//!
//! States advance with the exact OU transition and log-wealth with the
//! left-point Itô sum
//! `Δlog W = -(Dx)ᵀΔX - ½ (Dx)ᵀΘ(Dx) Δt`,
//! which is exact for the stochastic exponential generated by `α = -wDx`
//! up to the frozen-integrand error.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::StrategySpec;
use crate::model::{NormalizationRecord, OUParams, OuStepper, Preferences};
use crate::stats::{self, Estimate};
use crate::{Error, Result};

/// Paths whose `|log W|` exceeds this are excluded.
pub const LOG_WEALTH_GUARD: f64 = 700.0;
pub const DEFAULT_STEPS_PER_UNIT_TIME: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    /// Every step of every path.
    Full,
    /// Only initial and terminal values.
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Initial prices in original coordinates.
    pub initial_state: Vec<f64>,
    pub initial_wealth: f64,
    pub recording: Recording,
}

impl SimulationConfig {
    /// Unit initial wealth, terminal recording and the default step density.
    pub fn new(horizon: f64, n_paths: usize, seed: u64, initial_state: Vec<f64>) -> Self {
        Self {
            horizon,
            n_steps: default_steps(horizon),
            n_paths,
            seed,
            initial_state,
            initial_wealth: 1.0,
            recording: Recording::Terminal,
        }
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    pub fn with_recording(mut self, recording: Recording) -> Self {
        self.recording = recording;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }
}

pub fn default_steps(horizon: f64) -> usize {
    ((horizon * DEFAULT_STEPS_PER_UNIT_TIME as f64).ceil() as usize).max(1)
}

/// One retained path in unit-noise coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub index: usize,
    /// Row-major `(points × n)` states.
    pub states: Vec<f64>,
    pub log_wealth: Vec<f64>,
}

impl PathRecord {
    pub fn points(&self) -> usize {
        self.log_wealth.len()
    }

    pub fn state(&self, point: usize, dim: usize) -> &[f64] {
        &self.states[point * dim..(point + 1) * dim]
    }

    pub fn terminal_log_wealth(&self) -> f64 {
        *self.log_wealth.last().expect("non-empty path")
    }
}

#[derive(Debug, Clone)]
pub struct SimulationEnsemble {
    pub seed: u64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub dim: usize,
    pub horizon: f64,
    pub recording: Recording,
    pub normalization: NormalizationRecord,
    pub paths: Vec<PathRecord>,
    /// Indices of paths dropped by the log-wealth guard.
    pub excluded: Vec<usize>,
}

impl SimulationEnsemble {
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Times at which recorded points sit.
    pub fn times(&self) -> Vec<f64> {
        match self.recording {
            Recording::Full => (0..=self.n_steps).map(|k| self.time_at(k)).collect(),
            Recording::Terminal => vec![0.0, self.horizon],
        }
    }

    fn time_at(&self, step: usize) -> f64 {
        if step == self.n_steps {
            self.horizon
        } else {
            step as f64 * self.dt()
        }
    }

    pub fn terminal_log_wealth(&self) -> Vec<f64> {
        self.paths.iter().map(PathRecord::terminal_log_wealth).collect()
    }

    /// Terminal state of a path in original coordinates.
    pub fn terminal_state(&self, path: usize) -> DVector<f64> {
        let p = &self.paths[path];
        let x = DVector::from_column_slice(p.state(p.points() - 1, self.dim));
        self.normalization.state_from_unit(&x)
    }

    /// Sample mean of `W_T^ε / ε` (of `log W_T` when `ε = 0`).
    pub fn moment_estimate(&self, epsilon: f64) -> Estimate {
        let samples: Vec<f64> = self
            .paths
            .iter()
            .map(|p| {
                let lw = p.terminal_log_wealth();
                if epsilon == 0.0 {
                    lw
                } else {
                    (epsilon * lw).exp() / epsilon
                }
            })
            .collect();
        Estimate::from_samples(&samples)
    }

    /// Expected terminal utility.
    pub fn utility_estimate(&self, prefs: &Preferences) -> Estimate {
        self.moment_estimate(prefs.gamma())
    }

    /// `E[W_T] / sd(W_T)`.
    pub fn sharpe_estimate(&self) -> Estimate {
        let w: Vec<f64> = self.paths.iter().map(|p| p.terminal_log_wealth().exp()).collect();
        stats::sharpe_estimate(&w)
    }
}

/// Per-step feedback `D(T_spec - t_k)` at the left end of every step.
fn feedback_schedule(spec: &StrategySpec, n_steps: usize, dt: f64) -> Result<Vec<DMatrix<f64>>> {
    (0..n_steps).map(|k| spec.feedback_at(k as f64 * dt)).collect()
}

#[inline]
fn wealth_increment(d: &DMatrix<f64>, corr: &DMatrix<f64>, x: &[f64], dx: &[f64], dt: f64, v: &mut [f64]) -> f64 {
    let n = x.len();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += d[(i, j)] * x[j];
        }
        v[i] = acc;
    }
    let mut lin = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        lin += v[i] * dx[i];
        let mut row = 0.0;
        for j in 0..n {
            row += corr[(i, j)] * v[j];
        }
        quad += v[i] * row;
    }
    -lin - 0.5 * quad * dt
}

/// Simulates `config.n_paths` paths under `spec`. Path `i` draws its normals
/// from stream `i` of a ChaCha8 generator seeded with `config.seed`, so the
/// ensemble does not depend on scheduling and strategies compared under the
/// same seed see the same shocks.
pub fn simulate(params: &OUParams, spec: &StrategySpec, config: &SimulationConfig) -> Result<SimulationEnsemble> {
    if config.n_steps == 0 || config.n_paths == 0 {
        return Err(Error::InvalidInput("n_steps and n_paths must be at least 1".into()));
    }
    if !(config.horizon > 0.0) || config.horizon > spec.horizon() * (1.0 + 1e-12) {
        return Err(Error::OutOfHorizon {
            t: config.horizon,
            horizon: spec.horizon(),
        });
    }
    if !(config.initial_wealth > 0.0) {
        return Err(Error::InvalidInput("initial wealth must be positive".into()));
    }
    let (unit, record) = params.normalize()?;
    let n = unit.n;
    if config.initial_state.len() != n || spec.dim() != n {
        return Err(Error::Dimension(
            "initial state, strategy and model sizes differ".into(),
        ));
    }
    let dt = config.dt();
    let stepper = OuStepper::new(&unit, dt)?;
    let schedule = feedback_schedule(spec, config.n_steps, dt)?;
    let x0 = record.state_to_unit(&DVector::from_column_slice(&config.initial_state));
    let lw0 = config.initial_wealth.ln();
    let corr = &unit.corr;
    let full = config.recording == Recording::Full;

    let results: Vec<Option<PathRecord>> = (0..config.n_paths)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(index as u64);
            let points = if full { config.n_steps + 1 } else { 2 };
            let mut states = Vec::with_capacity(points * n);
            let mut log_wealth = Vec::with_capacity(points);
            states.extend_from_slice(x0.as_slice());
            log_wealth.push(lw0);
            let mut x = x0.as_slice().to_vec();
            let mut next = vec![0.0; n];
            let mut z = vec![0.0; n];
            let mut dx = vec![0.0; n];
            let mut v = vec![0.0; n];
            let mut lw = lw0;
            for d in &schedule {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                stepper.step_into(&x, &z, &mut next);
                for i in 0..n {
                    dx[i] = next[i] - x[i];
                }
                lw += wealth_increment(d, corr, &x, &dx, dt, &mut v);
                std::mem::swap(&mut x, &mut next);
                if !lw.is_finite() || lw.abs() > LOG_WEALTH_GUARD {
                    return None;
                }
                if full {
                    states.extend_from_slice(&x);
                    log_wealth.push(lw);
                }
            }
            if !full {
                states.extend_from_slice(&x);
                log_wealth.push(lw);
            }
            Some(PathRecord {
                index,
                states,
                log_wealth,
            })
        })
        .collect();

    let mut paths = Vec::with_capacity(results.len());
    let mut excluded = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Some(p) => paths.push(p),
            None => excluded.push(index),
        }
    }
    Ok(SimulationEnsemble {
        seed: config.seed,
        n_steps: config.n_steps,
        n_paths: config.n_paths,
        dim: n,
        horizon: config.horizon,
        recording: config.recording,
        normalization: record,
        paths,
        excluded,
    })
}

/// Split of `log(W_t / W_s)` along one path:
/// `a = ∫ ½[Tr(ΘD) - δ xᵀκΘ⁻¹κx] du`, `b = ½[x_sᵀD_s x_s - x_tᵀD_t x_t]`,
/// `c = ½∫ xᵀ(D - Dᵀ) dX`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WealthDecomposition {
    pub term_a: f64,
    pub term_b: f64,
    pub term_c: f64,
    /// Left-point sum of the log-wealth increments over `[s, t]`.
    pub total: f64,
}

impl WealthDecomposition {
    pub fn residual(&self) -> f64 {
        self.term_a + self.term_b + self.term_c - self.total
    }
}

fn step_index(ensemble: &SimulationEnsemble, time: f64) -> Result<usize> {
    let k = (time / ensemble.dt()).round();
    let on_grid = (k * ensemble.dt() - time).abs() <= 1e-9 * ensemble.horizon.max(1.0);
    if !on_grid || k < 0.0 || k > ensemble.n_steps as f64 {
        return Err(Error::OutOfRange {
            tau: time,
            horizon: ensemble.horizon,
        });
    }
    Ok(k as usize)
}

/// Decomposes the log-wealth change of `ensemble.paths[path]` over `[s, t]`.
/// Both times must sit on the simulation grid of a fully recorded ensemble.
pub fn decompose(
    ensemble: &SimulationEnsemble,
    path: usize,
    spec: &StrategySpec,
    params: &OUParams,
    prefs: &Preferences,
    s: f64,
    t: f64,
) -> Result<WealthDecomposition> {
    if ensemble.recording != Recording::Full {
        return Err(Error::InvalidInput("decomposition needs fully recorded paths".into()));
    }
    let record = ensemble
        .paths
        .get(path)
        .ok_or_else(|| Error::InvalidInput(format!("no retained path at position {path}")))?;
    let (is, it) = (step_index(ensemble, s)?, step_index(ensemble, t)?);
    if is >= it {
        return Err(Error::OutOfRange { tau: s, horizon: t });
    }
    let (unit, _) = params.normalize()?;
    let n = unit.n;
    let corr = &unit.corr;
    let k = unit.kappa_matrix();
    let m = &k * unit.corr_inverse()? * &k * prefs.delta();
    let dt = ensemble.dt();
    let schedule = feedback_schedule(spec, ensemble.n_steps, dt)?;
    let mut v = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let (mut a, mut c, mut total) = (0.0, 0.0, 0.0);
    for step in is..it {
        let d = &schedule[step];
        let x = record.state(step, n);
        let x1 = record.state(step + 1, n);
        for i in 0..n {
            dx[i] = x1[i] - x[i];
        }
        total += wealth_increment(d, corr, x, &dx, dt, &mut v);
        let xv = DVector::from_column_slice(x);
        let dxv = DVector::from_column_slice(&dx);
        a += 0.5 * ((corr * d).trace() - xv.dot(&(&m * &xv))) * dt;
        c += 0.5 * xv.dot(&((d - d.transpose()) * &dxv));
    }
    let xs = DVector::from_column_slice(record.state(is, n));
    let xt = DVector::from_column_slice(record.state(it, n));
    let ds = spec.feedback_at(ensemble.time_at(is))?;
    let dt_end = spec.feedback_at(ensemble.time_at(it))?;
    let b = 0.5 * (xs.dot(&(&ds * &xs)) - xt.dot(&(&dt_end * &xt)));
    Ok(WealthDecomposition {
        term_a: a,
        term_b: b,
        term_c: c,
        total,
    })
}

/// Whole-horizon decompositions of every retained path.
pub fn decompose_all(
    ensemble: &SimulationEnsemble,
    spec: &StrategySpec,
    params: &OUParams,
    prefs: &Preferences,
) -> Result<Vec<WealthDecomposition>> {
    (0..ensemble.paths.len())
        .into_par_iter()
        .map(|p| decompose(ensemble, p, spec, params, prefs, 0.0, ensemble.horizon))
        .collect()
}
