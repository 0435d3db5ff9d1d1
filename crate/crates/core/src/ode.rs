//! Dormand–Prince 5(4) integrator for small dense systems.
//!
//! Steps are clamped so every point of a uniform output grid is hit exactly.
//! Every accepted point is recorded together with the right-hand side there,
//! which is what the cubic Hermite lookups downstream need.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    /// Initial step as a fraction of the horizon.
    pub initial_step: f64,
    /// Minimum step as a fraction of the horizon.
    pub min_step: f64,
    /// Any state entry above this magnitude counts as a blow-up.
    pub blowup: f64,
    /// Uniform output intervals on `[0, T]`.
    pub grid_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-10,
            rel: 1e-10,
            initial_step: 1e-3,
            min_step: 1e-9,
            blowup: 1e12,
            grid_intervals: 1024,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    /// Scaled local error estimate of the step ending at each point (0 at the start).
    pub step_error: Vec<f64>,
}

// Dormand–Prince tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights equal the last row of A; these are 5th minus 4th order.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand–Prince step from `(t, y)` with `f0 = f(t, y)`.
/// Returns `(y_new, f_new, err)` where `err` is the embedded error vector.
pub fn dp5_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], h: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    k.push(f0.to_vec());
    let mut stage = vec![0.0; n];
    for s in 1..7 {
        for i in 0..n {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += A[s][j] * kj[i];
            }
            stage[i] = y[i] + h * acc;
        }
        let mut ks = vec![0.0; n];
        f(t + C[s] * h, &stage, &mut ks);
        k.push(ks);
    }
    // The sixth stage point is the fifth-order solution (FSAL).
    let y_new = stage;
    let f_new = k[6].clone();
    let err = (0..n)
        .map(|i| h * k.iter().zip(E.iter()).map(|(kj, e)| e * kj[i]).sum::<f64>())
        .collect();
    (y_new, f_new, err)
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], tol: &Tolerance) -> f64 {
    err.iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| e.abs() / (tol.abs + tol.rel * a.abs().max(b.abs())))
        .fold(0.0, f64::max)
}

/// Integrates `y' = f(t, y)` on `[0, t_end]`.
pub fn integrate<F>(mut f: F, y0: &[f64], t_end: f64, tol: &Tolerance) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {t_end}")));
    }
    let intervals = tol.grid_intervals.max(1);
    let grid_step = t_end / intervals as f64;
    let h_min = tol.min_step * t_end;
    let mut h = (tol.initial_step * t_end).min(grid_step);

    let mut traj = Trajectory::default();
    let mut y = y0.to_vec();
    let mut fy = vec![0.0; y.len()];
    f(0.0, &y, &mut fy);
    traj.t.push(0.0);
    traj.y.push(y.clone());
    traj.dy.push(fy.clone());
    traj.step_error.push(0.0);

    let mut t = 0.0;
    let mut next_grid = 1usize;
    while next_grid <= intervals {
        let target = if next_grid == intervals {
            t_end
        } else {
            next_grid as f64 * grid_step
        };
        let remaining = target - t;
        let mut lands = false;
        let mut step = h;
        if step >= remaining * (1.0 - 1e-12) {
            step = remaining;
            lands = true;
        }
        let (y_new, f_new, err) = dp5_step(&mut f, t, &y, &fy, step);
        let finite = y_new.iter().chain(f_new.iter()).all(|v| v.is_finite());
        let norm = if finite {
            error_norm(&err, &y, &y_new, tol)
        } else {
            f64::INFINITY
        };
        if norm <= 1.0 {
            t = if lands { target } else { t + step };
            if y_new.iter().any(|v| v.abs() > tol.blowup) {
                return Err(Error::BlowUpDetected { tau: t });
            }
            y = y_new;
            fy = f_new;
            traj.t.push(t);
            traj.y.push(y.clone());
            traj.dy.push(fy.clone());
            traj.step_error.push(norm);
            if lands {
                next_grid += 1;
            }
            let grow = if norm == 0.0 {
                5.0
            } else {
                (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            // A landing step may be artificially short; do not shrink from it.
            h = if lands { h.max(step * grow) } else { step * grow };
            h = h.min(grid_step);
        } else {
            let shrink = if norm.is_finite() {
                (0.9 * norm.powf(-0.25)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h = step * shrink;
            if h < h_min {
                return Err(Error::BlowUpDetected { tau: t });
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let traj = integrate(|_, y, dy| dy[0] = -y[0], &[1.0], 3.0, &Tolerance::default()).unwrap();
        let last = traj.y.last().unwrap()[0];
        assert!((last - (-3.0f64).exp()).abs() < 1e-11);
        assert_eq!(*traj.t.last().unwrap(), 3.0);
        for (t, y) in traj.t.iter().zip(&traj.y) {
            assert!((y[0] - (-t).exp()).abs() < 1e-11);
        }
    }

    #[test]
    fn hits_uniform_grid() {
        let tol = Tolerance {
            grid_intervals: 16,
            ..Tolerance::default()
        };
        let traj = integrate(|_, _, dy| dy[0] = 1.0, &[0.0], 2.0, &tol).unwrap();
        for k in 0..=16 {
            let g = 2.0 * k as f64 / 16.0;
            assert!(traj.t.iter().any(|&t| t == g || (k == 16 && t == 2.0)), "missing {g}");
        }
    }

    #[test]
    fn detects_finite_time_blowup() {
        // y' = y², y(0) = 1 blows up at t = 1
        let err = integrate(|_, y, dy| dy[0] = y[0] * y[0], &[1.0], 2.0, &Tolerance::default()).unwrap_err();
        match err {
            Error::BlowUpDetected { tau } => assert!((tau - 1.0).abs() < 1e-3, "tau {tau}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_errors_within_tolerance() {
        let traj = integrate(|t, y, dy| dy[0] = t.cos() * y[0], &[1.0], 5.0, &Tolerance::default()).unwrap();
        assert!(traj.step_error.iter().all(|&e| e <= 1.0));
        let last = traj.y.last().unwrap()[0];
        assert!((last - 5f64.sin().exp()).abs() < 1e-10);
    }
}
