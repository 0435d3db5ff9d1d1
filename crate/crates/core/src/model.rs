//! Market model: correlated OU assets `dX = -κ X dt + σ dB`, `dB dBᵀ = Θ dt`,
//! with diagonal `κ` and `σ`, plus power-utility preferences.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, diag};
use crate::{Error, Result};

/// Smallest admissible eigenvalue of the correlation matrix.
pub const PD_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;
const DIAGONAL_TOL: f64 = 1e-12;
/// Negative eigenvalues of a step covariance above `-COV_CLIP` are clipped to zero.
const COV_CLIP: f64 = 1e-12;

/// Full model parameterization. The JSON form is
/// `{"n", "kappa", "sigma", "theta", "corr"}` with a row-major `corr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    pub n: usize,
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
    pub theta: Vec<f64>,
    #[serde(with = "rows")]
    pub corr: DMatrix<f64>,
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        crate::linalg::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        crate::linalg::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl OUParams {
    /// Builds and validates a parameter set.
    pub fn new(kappa: Vec<f64>, sigma: Vec<f64>, theta: Vec<f64>, corr: DMatrix<f64>) -> Result<Self> {
        let params = Self {
            n: kappa.len(),
            kappa,
            sigma,
            theta,
            corr,
        };
        params.validate()?;
        Ok(params)
    }

    /// Unit-noise, zero-mean parameters.
    pub fn unit(kappa: Vec<f64>, corr: DMatrix<f64>) -> Result<Self> {
        let n = kappa.len();
        Self::new(kappa, vec![1.0; n], vec![0.0; n], corr)
    }

    /// The two-asset model `κ = diag(κ₁, κ₂)`, `Θ = [[1, ρ], [ρ, 1]]`, `σ = I`, `θ = 0`.
    pub fn two_asset(kappa1: f64, kappa2: f64, rho: f64) -> Result<Self> {
        Self::unit(vec![kappa1, kappa2], linalg::corr2(rho))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::Dimension("asset count must be at least 1".into()));
        }
        for (name, len) in [
            ("kappa", self.kappa.len()),
            ("sigma", self.sigma.len()),
            ("theta", self.theta.len()),
        ] {
            if len != n {
                return Err(Error::Dimension(format!("{name} has {len} entries, expected {n}")));
            }
        }
        if self.corr.nrows() != n || self.corr.ncols() != n {
            return Err(Error::Dimension(format!(
                "corr is {}x{}, expected {n}x{n}",
                self.corr.nrows(),
                self.corr.ncols()
            )));
        }
        if self.corr.iter().any(|v| !v.is_finite()) || self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        let asym = linalg::max_abs_diff(&self.corr, &self.corr.transpose());
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        for i in 0..n {
            let d = self.corr[(i, i)];
            if (d - 1.0).abs() > DIAGONAL_TOL {
                return Err(Error::NotUnitDiagonal { index: i, value: d });
            }
        }
        let min_eig = linalg::min_eigenvalue(&self.corr);
        if min_eig <= PD_TOL {
            return Err(Error::NotPositiveDefinite(min_eig));
        }
        for (i, &k) in self.kappa.iter().enumerate() {
            if !(k >= 0.0) || !k.is_finite() {
                return Err(Error::NegativeKappa { index: i, value: k });
            }
        }
        if self.kappa.iter().all(|&k| k == 0.0) {
            return Err(Error::AllKappaZero);
        }
        for (i, &s) in self.sigma.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::NonPositiveSigma { index: i, value: s });
            }
        }
        Ok(())
    }

    pub fn is_normalized(&self) -> bool {
        self.sigma.iter().all(|&s| s == 1.0) && self.theta.iter().all(|&t| t == 0.0)
    }

    /// Unit-noise, zero-mean copy plus the record mapping states and positions
    /// between the two coordinate systems.
    pub fn normalize(&self) -> Result<(OUParams, NormalizationRecord)> {
        self.validate()?;
        let normalized = OUParams {
            n: self.n,
            kappa: self.kappa.clone(),
            sigma: vec![1.0; self.n],
            theta: vec![0.0; self.n],
            corr: self.corr.clone(),
        };
        let record = NormalizationRecord {
            original_sigma: self.sigma.clone(),
            original_theta: self.theta.clone(),
            direction: Direction::ToUnitNoise,
        };
        Ok((normalized, record))
    }

    pub fn kappa_matrix(&self) -> DMatrix<f64> {
        diag(&self.kappa)
    }

    pub fn corr_inverse(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.corr)
    }

    /// Copy with the correlation entry `(m, n)` (and its mirror) replaced.
    pub fn with_correlation(&self, pair: (usize, usize), rho: f64) -> Result<OUParams> {
        let mut out = self.clone();
        out.corr[(pair.0, pair.1)] = rho;
        out.corr[(pair.1, pair.0)] = rho;
        out.validate()?;
        Ok(out)
    }

    pub fn with_kappa(&self, kappa: Vec<f64>) -> Result<OUParams> {
        let mut out = self.clone();
        out.kappa = kappa;
        out.validate()?;
        Ok(out)
    }
}

/// Power utility `U(W) = W^γ / γ`, `γ < 1`, with distortion rate `δ = 1 / (1 - γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GammaOnly", into = "GammaOnly")]
pub struct Preferences {
    gamma: f64,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct GammaOnly {
    gamma: f64,
}

impl TryFrom<GammaOnly> for Preferences {
    type Error = Error;
    fn try_from(g: GammaOnly) -> Result<Self> {
        Preferences::new(g.gamma)
    }
}

impl From<Preferences> for GammaOnly {
    fn from(p: Preferences) -> Self {
        GammaOnly { gamma: p.gamma }
    }
}

impl Preferences {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma >= 1.0 {
            return Err(Error::InvalidGamma(gamma));
        }
        Ok(Self {
            gamma,
            delta: 1.0 / (1.0 - gamma),
        })
    }

    pub fn from_delta(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "distortion rate must be positive, got {delta}"
            )));
        }
        let mut prefs = Self::new(1.0 - 1.0 / delta)?;
        prefs.delta = delta;
        Ok(prefs)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_log(&self) -> bool {
        self.gamma == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToUnitNoise,
    FromUnitNoise,
}

/// Maps states `x ↦ σ⁻¹(x - θ)` and positions `α ↦ σα` into unit-noise
/// coordinates, or back when the direction is reversed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub original_sigma: Vec<f64>,
    pub original_theta: Vec<f64>,
    pub direction: Direction,
}

impl NormalizationRecord {
    pub fn identity(n: usize) -> Self {
        Self {
            original_sigma: vec![1.0; n],
            original_theta: vec![0.0; n],
            direction: Direction::ToUnitNoise,
        }
    }

    pub fn dim(&self) -> usize {
        self.original_sigma.len()
    }

    pub fn is_identity(&self) -> bool {
        self.original_sigma.iter().all(|&s| s == 1.0) && self.original_theta.iter().all(|&t| t == 0.0)
    }

    pub fn inverse(&self) -> Self {
        let direction = match self.direction {
            Direction::ToUnitNoise => Direction::FromUnitNoise,
            Direction::FromUnitNoise => Direction::ToUnitNoise,
        };
        Self {
            direction,
            ..self.clone()
        }
    }

    pub fn apply_state(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.direction {
            Direction::ToUnitNoise => self.state_to_unit(x),
            Direction::FromUnitNoise => self.state_from_unit(x),
        }
    }

    pub fn apply_position(&self, alpha: &DVector<f64>) -> DVector<f64> {
        match self.direction {
            Direction::ToUnitNoise => self.position_to_unit(alpha),
            Direction::FromUnitNoise => self.position_from_unit(alpha),
        }
    }

    pub fn state_to_unit(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| (x[i] - self.original_theta[i]) / self.original_sigma[i])
    }

    pub fn state_from_unit(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i] * self.original_sigma[i] + self.original_theta[i])
    }

    pub fn position_to_unit(&self, alpha: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(alpha.len(), |i, _| alpha[i] * self.original_sigma[i])
    }

    pub fn position_from_unit(&self, alpha: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(alpha.len(), |i, _| alpha[i] / self.original_sigma[i])
    }
}

/// Exact covariance of an OU increment over `dt` in unit-noise coordinates:
/// `C_ij = Θ_ij (1 - e^{-(κ_i+κ_j) dt}) / (κ_i + κ_j)`, and `Θ_ij dt` when
/// `κ_i + κ_j = 0`.
pub fn step_covariance(params: &OUParams, dt: f64) -> DMatrix<f64> {
    let n = params.n;
    DMatrix::from_fn(n, n, |i, j| {
        let s = params.kappa[i] + params.kappa[j];
        let weight = if s == 0.0 { dt } else { -(-s * dt).exp_m1() / s };
        params.corr[(i, j)] * weight
    })
}

/// Precomputed exact-in-distribution stepper for a fixed `dt`.
#[derive(Debug, Clone)]
pub struct OuStepper {
    decay: Vec<f64>,
    factor: DMatrix<f64>,
    dt: f64,
}

impl OuStepper {
    pub fn new(params: &OUParams, dt: f64) -> Result<Self> {
        if !params.is_normalized() {
            return Err(Error::NotNormalized);
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let cov = step_covariance(params, dt);
        let factor = linalg::psd_factor(&cov, COV_CLIP)?;
        let decay = params.kappa.iter().map(|k| (-k * dt).exp()).collect();
        Ok(Self { decay, factor, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.decay.len()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `out = e^{-κ dt} x + L z`.
    pub fn step_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let n = self.decay.len();
        for i in 0..n {
            let mut acc = self.decay[i] * x[i];
            for j in 0..n {
                acc += self.factor[(i, j)] * z[j];
            }
            out[i] = acc;
        }
    }
}

/// One exact OU step from `x` over `dt` driven by standard normals `z`.
pub fn ou_exact_step(x: &DVector<f64>, dt: f64, params: &OUParams, z: &DVector<f64>) -> Result<DVector<f64>> {
    let stepper = OuStepper::new(params, dt)?;
    if x.len() != params.n || z.len() != params.n {
        return Err(Error::Dimension("state and noise must match the asset count".into()));
    }
    let mut out = DVector::zeros(params.n);
    stepper.step_into(x.as_slice(), z.as_slice(), out.as_mut_slice());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{corr2, max_abs_diff};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn validate_accepts_two_asset_example() {
        assert!(OUParams::new(vec![1.0, 0.5], vec![1.0, 1.0], vec![0.0, 0.0], corr2(0.5)).is_ok());
    }

    #[test]
    fn validate_rejects_rank_deficient() {
        let err = OUParams::two_asset(1.0, 0.5, 1.0).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)));
    }

    #[test]
    fn validate_rejects_all_zero_kappa() {
        assert_eq!(OUParams::two_asset(0.0, 0.0, 0.5).unwrap_err(), Error::AllKappaZero);
    }

    #[test]
    fn validate_rejects_bad_sigma_and_corr() {
        let err = OUParams::new(
            vec![1.0],
            vec![0.0],
            vec![0.0],
            corr2(0.0).view((0, 0), (1, 1)).into_owned(),
        );
        assert!(matches!(err, Err(Error::NonPositiveSigma { index: 0, .. })));
        let mut c = corr2(0.3);
        c[(0, 1)] = 0.4;
        assert!(matches!(OUParams::unit(vec![1.0, 1.0], c), Err(Error::NotSymmetric(_))));
        let mut c = corr2(0.3);
        c[(1, 1)] = 2.0;
        assert!(matches!(
            OUParams::unit(vec![1.0, 1.0], c),
            Err(Error::NotUnitDiagonal { index: 1, .. })
        ));
        assert!(matches!(
            OUParams::unit(vec![1.0, -0.1], corr2(0.0)),
            Err(Error::NegativeKappa { index: 1, .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"n":2,"kappa":[1.0,0.5],"sigma":[1.0,2.0],"theta":[0.0,1.0],"corr":[[1.0,0.5],[0.5,1.0]]}"#;
        let p = OUParams::from_json(text).unwrap();
        assert_eq!(p.corr[(0, 1)], 0.5);
        let back = OUParams::from_json(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn preferences_delta() {
        let p = Preferences::new(-4.0).unwrap();
        assert_eq!(p.delta(), 0.2);
        assert!(Preferences::new(0.0).unwrap().is_log());
        assert_eq!(Preferences::new(0.0).unwrap().delta(), 1.0);
        assert!(Preferences::new(1.0).is_err());
        assert!((Preferences::from_delta(2.0).unwrap().gamma() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let p = OUParams::new(vec![1.0, 1.0], vec![2.0, 4.0], vec![0.0, 0.0], corr2(0.0)).unwrap();
        let (np, rec) = p.normalize().unwrap();
        assert!(np.is_normalized());
        let x = rec.state_to_unit(&DVector::from_vec(vec![2.0, 4.0]));
        assert_eq!(x.as_slice(), &[1.0, 1.0]);

        let p = OUParams::new(vec![1.0, 1.0], vec![2.0, 1.0], vec![3.0, 0.0], corr2(0.0)).unwrap();
        let (_, rec) = p.normalize().unwrap();
        let x = rec.apply_state(&DVector::from_vec(vec![5.0, 1.0]));
        assert_eq!(x.as_slice(), &[1.0, 1.0]);

        let (_, rec) = OUParams::two_asset(1.0, 1.0, 0.0).unwrap().normalize().unwrap();
        assert!(rec.is_identity());
    }

    #[test]
    fn zero_noise_step_decays() {
        let p = OUParams::two_asset(1.0, 0.5, 0.3).unwrap();
        let x = DVector::from_vec(vec![2.0, -1.0]);
        let out = ou_exact_step(&x, 0.7, &p, &DVector::zeros(2)).unwrap();
        assert!((out[0] - 2.0 * (-0.7f64).exp()).abs() < 1e-15);
        assert!((out[1] + (-0.35f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_kappa_limit_is_brownian() {
        let p = OUParams::unit(vec![0.0, 1.0], corr2(0.4)).unwrap();
        let c = step_covariance(&p, 1.0);
        assert_eq!(c[(0, 0)], 1.0);
        let p0 = OUParams {
            kappa: vec![0.0, 0.0],
            ..p.clone()
        };
        // all-zero κ is invalid as a model, but the covariance limit is still Θ·dt
        let c0 = step_covariance(&p0, 1.0);
        assert!(max_abs_diff(&c0, &corr2(0.4)) == 0.0);
    }

    #[test]
    fn half_steps_compose() {
        let p = OUParams::unit(
            vec![1.0, 0.25, 0.0],
            DMatrix::from_row_slice(3, 3, &[1.0, 0.5, -0.2, 0.5, 1.0, 0.3, -0.2, 0.3, 1.0]),
        )
        .unwrap();
        let dt = 0.8;
        let full = step_covariance(&p, dt);
        let half = step_covariance(&p, dt / 2.0);
        let e = diag(&p.kappa.iter().map(|k| (-k * dt / 2.0).exp()).collect::<Vec<_>>());
        let composed = &e * &half * &e + &half;
        assert!(max_abs_diff(&full, &composed) < 1e-12);
    }

    #[test]
    fn sample_moments_match_exact_step() {
        let p = OUParams::two_asset(1.0, 0.5, 0.6).unwrap();
        let dt = 0.5;
        let stepper = OuStepper::new(&p, dt).unwrap();
        let x = [1.5, -0.5];
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = [0.0; 2];
        let mut sq = [[0.0; 2]; 2];
        let mut out = [0.0; 2];
        for _ in 0..draws {
            let z: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            stepper.step_into(&x, &z, &mut out);
            for i in 0..2 {
                sum[i] += out[i];
                for j in 0..2 {
                    sq[i][j] += out[i] * out[j];
                }
            }
        }
        let nd = draws as f64;
        let cov = step_covariance(&p, dt);
        for i in 0..2 {
            let mean = sum[i] / nd;
            let expected = (-p.kappa[i] * dt).exp() * x[i];
            let se = (cov[(i, i)] / nd).sqrt();
            assert!((mean - expected).abs() < 4.0 * se, "mean {i}: {mean} vs {expected}");
            for j in 0..2 {
                let mi = sum[i] / nd;
                let mj = sum[j] / nd;
                let c = sq[i][j] / nd - mi * mj;
                // se of a sample covariance ≈ sqrt((C_ii C_jj + C_ij²)/N)
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / nd).sqrt();
                assert!((c - cov[(i, j)]).abs() < 4.0 * se, "cov {i}{j}: {c} vs {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn long_step_reaches_stationary_variance() {
        let p = OUParams::unit(vec![1.0], DMatrix::identity(1, 1)).unwrap();
        let stepper = OuStepper::new(&p, 30.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        let mut out = [0.0];
        for _ in 0..draws {
            let z: f64 = StandardNormal.sample(&mut rng);
            stepper.step_into(&[5.0], &[z], &mut out);
            s += out[0];
            s2 += out[0] * out[0];
        }
        let nd = draws as f64;
        let mean = s / nd;
        let var = s2 / nd - mean * mean;
        assert!(mean.abs() < 4.0 * (0.5 / nd).sqrt());
        // var of sample variance for a normal: 2σ⁴/N
        assert!((var - 0.5).abs() < 4.0 * (2.0 * 0.25 / nd).sqrt());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalization_round_trip(
                sigma in proptest::collection::vec(0.1f64..10.0, 3),
                theta in proptest::collection::vec(-5.0f64..5.0, 3),
                x in proptest::collection::vec(-10.0f64..10.0, 3),
                a in proptest::collection::vec(-10.0f64..10.0, 3),
            ) {
                let rec = NormalizationRecord { original_sigma: sigma, original_theta: theta, direction: Direction::ToUnitNoise };
                let x = DVector::from_vec(x);
                let a = DVector::from_vec(a);
                let inv = rec.inverse();
                let xr = inv.apply_state(&rec.apply_state(&x));
                let ar = inv.apply_position(&rec.apply_position(&a));
                for i in 0..3 {
                    prop_assert!((xr[i] - x[i]).abs() <= 1e-14 * (1.0 + x[i].abs()));
                    prop_assert!((ar[i] - a[i]).abs() <= 1e-14 * (1.0 + a[i].abs()));
                }
            }
        }
    }
}
