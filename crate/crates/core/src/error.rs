use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("correlation matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("correlation matrix diagonal entry {index} is {value}, expected 1")]
    NotUnitDiagonal { index: usize, value: f64 },
    #[error("correlation matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("all reversion rates are zero")]
    AllKappaZero,
    #[error("reversion rate {index} is negative or not finite ({value})")]
    NegativeKappa { index: usize, value: f64 },
    #[error("volatility {index} is not positive ({value})")]
    NonPositiveSigma { index: usize, value: f64 },
    #[error("risk aversion gamma must be finite and below 1, got {0}")]
    InvalidGamma(f64),
    #[error("parameters are not in unit-noise, zero-mean coordinates")]
    NotNormalized,
    #[error("step covariance is not positive semi-definite (eigenvalue {0:e})")]
    FactorizationFailure(f64),
    #[error("Riccati solution blew up at tau = {tau}")]
    BlowUpDetected { tau: f64 },
    #[error("closed-form denominator vanishes at tau = {tau}")]
    TrigSingularity { tau: f64 },
    #[error("tau = {tau} outside solution range [0, {horizon}]")]
    OutOfRange { tau: f64, horizon: f64 },
    #[error("time t = {t} outside strategy horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("moment variance 2*P2 - P1^2 = {0:e} is not positive")]
    NonPositiveVariance(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Variant name, used as a stable machine-readable code.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "Dimension",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::NotUnitDiagonal { .. } => "NotUnitDiagonal",
            Error::NotPositiveDefinite(_) => "NotPositiveDefinite",
            Error::AllKappaZero => "AllKappaZero",
            Error::NegativeKappa { .. } => "NegativeKappa",
            Error::NonPositiveSigma { .. } => "NonPositiveSigma",
            Error::InvalidGamma(_) => "InvalidGamma",
            Error::NotNormalized => "NotNormalized",
            Error::FactorizationFailure(_) => "FactorizationFailure",
            Error::BlowUpDetected { .. } => "BlowUpDetected",
            Error::TrigSingularity { .. } => "TrigSingularity",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::OutOfHorizon { .. } => "OutOfHorizon",
            Error::NonPositiveVariance(_) => "NonPositiveVariance",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }

    /// Numerical failures, as opposed to rejected inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUpDetected { .. }
                | Error::TrigSingularity { .. }
                | Error::FactorizationFailure(_)
                | Error::NonPositiveVariance(_)
        )
    }
}
