//! Run configuration. One JSON file drives every subcommand; each command
//! reads the shared model block plus its own optional section.

use std::fs;
use std::path::{Path, PathBuf};

use mrtrader::misspec::EstimatedParams;
use mrtrader::{OUParams, Preferences};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Inline(OUParams),
    /// Path to a model JSON file, relative to the config file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimateSpec {
    /// Estimated rates as multiples of the true ones; σ and Θ are exact.
    Multipliers {
        kappa_multipliers: Vec<f64>,
    },
    Full(EstimatedParams),
}

impl EstimateSpec {
    pub fn resolve(&self, truth: &OUParams) -> mrtrader::Result<EstimatedParams> {
        let est = match self {
            EstimateSpec::Multipliers { kappa_multipliers } => EstimatedParams::kappa_scaled(truth, kappa_multipliers)?,
            EstimateSpec::Full(e) => e.clone(),
        };
        est.validate(truth)?;
        Ok(est)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    pub gamma: f64,
    pub horizon: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Parameters the trader believes; when present, `positions` and
    /// `simulate` use the strategy built from them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateSpec>,
    #[serde(default)]
    pub positions: PositionsSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub misspec: MisspecSection,
    #[serde(default)]
    pub corr_sweep: CorrSweepSection,
    #[serde(default)]
    pub kappa_sweep: KappaSweepSection,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_seed() -> u64 {
    mrtrader::verify::VerifyOptions::default().seed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionsSection {
    pub wealth: f64,
    /// Prices in original coordinates; defaults to `θ + σ`.
    pub state: Option<Vec<f64>>,
    /// Evaluation times; defaults to `points` evenly spaced times on `[0, T]`.
    pub times: Option<Vec<f64>>,
    pub points: usize,
}

impl Default for PositionsSection {
    fn default() -> Self {
        Self {
            wealth: 1.0,
            state: None,
            times: None,
            points: 31,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_paths: usize,
    /// Defaults to 512 steps per unit time.
    pub n_steps: Option<usize>,
    /// Defaults to `θ`.
    pub initial_state: Option<Vec<f64>>,
    pub initial_wealth: f64,
    /// Number of leading paths written step by step to `paths.csv`.
    pub record_paths: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: None,
            initial_state: None,
            initial_wealth: 1.0,
            record_paths: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MisspecSection {
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    /// Defaults to `θ`.
    pub initial_state: Option<Vec<f64>>,
}

impl Default for MisspecSection {
    fn default() -> Self {
        let axis = vec![0.5, 0.75, 1.0, 1.5, 2.0];
        Self {
            axis1: axis.clone(),
            axis2: axis,
            initial_state: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrSweepSection {
    pub pair: (usize, usize),
    pub rho: Vec<f64>,
    /// Defaults to the top-level `gamma`.
    pub gammas: Option<Vec<f64>>,
    pub step: f64,
}

impl Default for CorrSweepSection {
    fn default() -> Self {
        Self {
            pair: (0, 1),
            rho: (-9..=9).map(|k| 0.1 * k as f64).collect(),
            gammas: None,
            step: mrtrader::analysis::DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KappaSweepSection {
    /// Rate of the single-asset curves; defaults to the first model rate.
    pub kappa: Option<f64>,
    pub gammas: Vec<f64>,
    pub points: usize,
    pub kappa2: Vec<f64>,
    pub rho: Vec<f64>,
    /// Defaults to `θ`.
    pub initial_state: Option<Vec<f64>>,
}

impl Default for KappaSweepSection {
    fn default() -> Self {
        Self {
            kappa: None,
            gammas: mrtrader::verify::FIGURE_GAMMAS.to_vec(),
            points: 61,
            kappa2: (0..=30).map(|k| 0.1 * k as f64).collect(),
            rho: mrtrader::verify::FIGURE_RHOS.to_vec(),
            initial_state: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub mc_paths: usize,
    pub monte_carlo: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        let d = mrtrader::verify::VerifyOptions::default();
        Self {
            mc_paths: d.mc_paths,
            monte_carlo: d.monte_carlo,
        }
    }
}

/// A loaded configuration with the model resolved and validated.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub params: OUParams,
    pub prefs: Preferences,
}

impl Loaded {
    /// SHA-256 of the resolved configuration (model inlined, seed applied).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.config).expect("configs serialize");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn theta(&self) -> Vec<f64> {
        self.params.theta.clone()
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Resolves the model source, applies a seed override and validates.
pub fn load(path: &Path, seed: Option<u64>) -> Result<Loaded, CliError> {
    let mut config = read_config(path)?;
    let params = match &config.model {
        ModelSource::Inline(p) => p.clone(),
        ModelSource::File(rel) => {
            let full = path.parent().unwrap_or(Path::new(".")).join(rel);
            let text = fs::read_to_string(&full).map_err(|e| CliError::Io(format!("{}: {e}", full.display())))?;
            OUParams::from_json(&text)?
        }
    };
    params.validate()?;
    if !(config.horizon > 0.0 && config.horizon.is_finite()) {
        return Err(CliError::Invalid(format!(
            "horizon must be positive, got {}",
            config.horizon
        )));
    }
    let prefs = Preferences::new(config.gamma)?;
    if let Some(est) = &config.estimate {
        est.resolve(&params)?;
    }
    config.model = ModelSource::Inline(params.clone());
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(Loaded { config, params, prefs })
}
