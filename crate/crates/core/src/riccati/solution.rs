use nalgebra::DMatrix;

use super::SolutionKind;
use crate::{Error, Result};

/// A matrix function of inverse time stored on an increasing grid
/// `0 = τ₀ < … < τ_K = T` with derivatives and a cumulative trace integral.
///
/// Lookups between grid points use cubic Hermite interpolation on the stored
/// values and derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    kind: SolutionKind,
    tau: Vec<f64>,
    values: Vec<DMatrix<f64>>,
    derivatives: Vec<DMatrix<f64>>,
    trace_integral: Vec<f64>,
    trace_rate: Vec<f64>,
    step_error: Vec<f64>,
}

impl RiccatiSolution {
    pub(crate) fn from_parts(
        kind: SolutionKind,
        tau: Vec<f64>,
        values: Vec<DMatrix<f64>>,
        derivatives: Vec<DMatrix<f64>>,
        trace_integral: Vec<f64>,
        trace_rate: Vec<f64>,
        step_error: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(tau.len(), values.len());
        Self {
            kind,
            tau,
            values,
            derivatives,
            trace_integral,
            trace_rate,
            step_error,
        }
    }

    /// Identically zero solution on `[0, horizon]`.
    pub fn zero(kind: SolutionKind, dim: usize, horizon: f64) -> Self {
        let z = DMatrix::zeros(dim, dim);
        Self::constant(kind, z, 0.0, horizon)
    }

    /// Constant matrix `m` whose trace integrand is `trace_rate`.
    pub fn constant(kind: SolutionKind, m: DMatrix<f64>, trace_rate: f64, horizon: f64) -> Self {
        let dim = m.nrows();
        let z = DMatrix::zeros(dim, dim);
        Self {
            kind,
            tau: vec![0.0, horizon],
            values: vec![m.clone(), m],
            derivatives: vec![z.clone(), z],
            trace_integral: vec![0.0, trace_rate * horizon],
            trace_rate: vec![trace_rate, trace_rate],
            step_error: vec![0.0, 0.0],
        }
    }

    pub fn kind(&self) -> SolutionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn horizon(&self) -> f64 {
        *self.tau.last().expect("non-empty grid")
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn derivatives(&self) -> &[DMatrix<f64>] {
        &self.derivatives
    }

    pub fn trace_integral(&self) -> &[f64] {
        &self.trace_integral
    }

    pub fn trace_rate(&self) -> &[f64] {
        &self.trace_rate
    }

    /// Scaled local error estimates of the accepted steps.
    pub fn step_error(&self) -> &[f64] {
        &self.step_error
    }

    fn locate(&self, tau: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        let slack = 1e-12 * horizon.max(1.0);
        if !(tau >= -slack && tau <= horizon + slack) {
            return Err(Error::OutOfRange { tau, horizon });
        }
        let tau = tau.clamp(0.0, horizon);
        // first index with grid value > tau, minus one
        let k = self.tau.partition_point(|&g| g <= tau).saturating_sub(1);
        let k = k.min(self.tau.len() - 2);
        Ok((k, tau))
    }

    /// `M(τ)`; exact at grid points.
    pub fn interpolate(&self, tau: f64) -> Result<DMatrix<f64>> {
        let (k, tau) = self.locate(tau)?;
        let (t0, t1) = (self.tau[k], self.tau[k + 1]);
        if tau == t0 {
            return Ok(self.values[k].clone());
        }
        if tau == t1 {
            return Ok(self.values[k + 1].clone());
        }
        let h = t1 - t0;
        let [h00, h10, h01, h11] = hermite_weights((tau - t0) / h);
        Ok(&self.values[k] * h00
            + &self.derivatives[k] * (h10 * h)
            + &self.values[k + 1] * h01
            + &self.derivatives[k + 1] * (h11 * h))
    }

    /// Cumulative trace integral at `τ`.
    pub fn interpolate_trace(&self, tau: f64) -> Result<f64> {
        let (k, tau) = self.locate(tau)?;
        let (t0, t1) = (self.tau[k], self.tau[k + 1]);
        if tau == t0 {
            return Ok(self.trace_integral[k]);
        }
        if tau == t1 {
            return Ok(self.trace_integral[k + 1]);
        }
        let h = t1 - t0;
        let [h00, h10, h01, h11] = hermite_weights((tau - t0) / h);
        Ok(self.trace_integral[k] * h00
            + self.trace_rate[k] * h10 * h
            + self.trace_integral[k + 1] * h01
            + self.trace_rate[k + 1] * h11 * h)
    }

    /// Pointwise image under `M ↦ offset + L(M)` for a linear `L`; the trace
    /// integrand of the image is `Tr(weight · M̃)` and is re-accumulated with
    /// the end-point corrected trapezoid rule.
    pub fn map_affine<L>(&self, kind: SolutionKind, offset: &DMatrix<f64>, linear: L, weight: &DMatrix<f64>) -> Self
    where
        L: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    {
        let values: Vec<_> = self.values.iter().map(|m| offset + linear(m)).collect();
        let derivatives: Vec<_> = self.derivatives.iter().map(&linear).collect();
        let trace_rate: Vec<f64> = values.iter().map(|m| (weight * m).trace()).collect();
        let rate_slope: Vec<f64> = derivatives.iter().map(|m| (weight * m).trace()).collect();
        let mut trace_integral = Vec::with_capacity(values.len());
        trace_integral.push(0.0);
        for k in 1..values.len() {
            let h = self.tau[k] - self.tau[k - 1];
            let step =
                h / 2.0 * (trace_rate[k - 1] + trace_rate[k]) + h * h / 12.0 * (rate_slope[k - 1] - rate_slope[k]);
            trace_integral.push(trace_integral[k - 1] + step);
        }
        Self {
            kind,
            tau: self.tau.clone(),
            values,
            derivatives,
            trace_integral,
            trace_rate,
            step_error: self.step_error.clone(),
        }
    }

    /// Copy with values, derivatives and trace integral multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            kind: self.kind,
            tau: self.tau.clone(),
            values: self.values.iter().map(|m| m * c).collect(),
            derivatives: self.derivatives.iter().map(|m| m * c).collect(),
            trace_integral: self.trace_integral.iter().map(|v| v * c).collect(),
            trace_rate: self.trace_rate.iter().map(|v| v * c).collect(),
            step_error: self.step_error.clone(),
        }
    }

    /// Header for the tabular form: `tau`, row-major entries, `trace_integral`.
    pub fn table_header(&self) -> Vec<String> {
        let n = self.dim();
        let label = self.kind.label();
        let mut out = vec!["tau".to_string()];
        for i in 0..n {
            for j in 0..n {
                out.push(format!("{label}_{}{}", i + 1, j + 1));
            }
        }
        out.push("trace_integral".to_string());
        out
    }

    /// One row per grid point matching [`Self::table_header`].
    pub fn table_rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.dim();
        (0..self.tau.len()).map(move |k| {
            let mut row = Vec::with_capacity(n * n + 2);
            row.push(self.tau[k]);
            let m = &self.values[k];
            for i in 0..n {
                for j in 0..n {
                    row.push(m[(i, j)]);
                }
            }
            row.push(self.trace_integral[k]);
            row
        })
    }
}

fn hermite_weights(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::{d_scalar_closed_form, solve_default, DOperator, StepControl};

    fn scalar_solution(delta: f64, intervals: usize) -> RiccatiSolution {
        let op = DOperator::new(&DMatrix::identity(1, 1), &[1.0], delta).unwrap();
        let ctrl = StepControl {
            grid_intervals: intervals,
            ..StepControl::default()
        };
        solve_default(&op, 3.0, &ctrl).unwrap()
    }

    #[test]
    fn exact_at_grid_points() {
        let sol = scalar_solution(0.2, 64);
        for (k, &t) in sol.tau().iter().enumerate() {
            assert_eq!(sol.interpolate(t).unwrap(), sol.values()[k]);
            assert_eq!(sol.interpolate_trace(t).unwrap(), sol.trace_integral()[k]);
        }
    }

    #[test]
    fn constant_solution_interpolates_to_constant() {
        let sol = scalar_solution(1.0, 64);
        for t in [0.013, 0.5, 1.77, 2.999] {
            assert_eq!(sol.interpolate(t).unwrap()[(0, 0)], 1.0);
        }
    }

    #[test]
    fn midpoints_agree_with_on_grid_solve() {
        let coarse = scalar_solution(0.2, 64);
        let fine = scalar_solution(0.2, 128);
        for k in 0..64 {
            let mid = (2 * k + 1) as f64 * 3.0 / 128.0;
            let on_grid = fine.interpolate(mid).unwrap()[(0, 0)];
            let between = coarse.interpolate(mid).unwrap()[(0, 0)];
            assert!((on_grid - between).abs() < 1e-7);
            assert!((on_grid - d_scalar_closed_form(1.0, 0.2, mid)).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range() {
        let sol = scalar_solution(0.2, 8);
        assert!(matches!(sol.interpolate(3.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(sol.interpolate(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn mapped_trace_matches_direct_solve() {
        let sol = scalar_solution(0.2, 256);
        // D ↦ 2·D integrates Tr(2D)
        let mapped = sol.map_affine(
            SolutionKind::DMatrix,
            &DMatrix::zeros(1, 1),
            |m| m * 2.0,
            &DMatrix::identity(1, 1),
        );
        for (a, b) in mapped.trace_integral().iter().zip(sol.trace_integral()) {
            assert!((a - 2.0 * b).abs() < 1e-10);
        }
    }

    #[test]
    fn table_layout() {
        let sol = RiccatiSolution::zero(SolutionKind::QMatrix, 2, 1.0);
        assert_eq!(
            sol.table_header(),
            ["tau", "Q_11", "Q_12", "Q_21", "Q_22", "trace_integral"]
        );
        assert_eq!(sol.table_rows().count(), 2);
    }
}
