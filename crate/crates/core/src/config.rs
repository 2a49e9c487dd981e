//! Experiment configuration, loadable from JSON or TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compare::{GrowthSchedule, DEFAULT_ALPHA};
use crate::distributions::{DesignPrior, InferencePrior, NoiseModel};
use crate::error::{Error, Result};
use crate::inference::McmcSettings;
use crate::search::{Prefilter, SearchConfig};
use crate::utility::{CurveEvaluator, ExperimentModel, NestedMonteCarlo, HORIZON_HOURS, QUADRATURE_STEP_HOURS};
use crate::validation::{FitSettings, RandomDesignConfig, RobustnessSettings};
use crate::{ModelConstants, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub constants: ModelConstants,
    pub inference_prior: InferencePrior,
    /// JSON list of patient parameter atoms; the reference patients when absent.
    pub design_prior_file: Option<PathBuf>,
    pub noise_sd: f64,
    pub t1: usize,
    pub t2: usize,
    pub thinning_stride: usize,
    pub growth: GrowthSchedule,
    pub alpha: f64,
    pub search_grid: Vec<u32>,
    pub k_min: usize,
    pub k_max: usize,
    pub prefilter: Option<Prefilter>,
    pub horizon_hours: f64,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub fit: FitSettings,
    pub robustness: RobustnessSettings,
    pub random_designs: RandomDesignConfig,
    pub cohort_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        Self {
            constants: ModelConstants::default(),
            inference_prior: InferencePrior::default(),
            design_prior_file: None,
            noise_sd: NoiseModel::default().sigma,
            t1: 600,
            t2: 100,
            thinning_stride: 15,
            growth: GrowthSchedule::default(),
            alpha: DEFAULT_ALPHA,
            search_grid: search.grid,
            k_min: search.k_min,
            k_max: search.k_max,
            prefilter: None,
            horizon_hours: HORIZON_HOURS,
            seed: 0,
            output_dir: None,
            fit: FitSettings::default(),
            robustness: RobustnessSettings::default(),
            random_designs: RandomDesignConfig::default(),
            cohort_size: 17,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML for `.toml` files and JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.inference_prior.validate()?;
        NoiseModel::new(self.noise_sd)?;
        if self.t1 < 2 || self.t2 == 0 || self.thinning_stride == 0 {
            return Err(Error::Config(format!(
                "need T1 >= 2, T2 >= 1 and stride >= 1 (got {}, {}, {})",
                self.t1, self.t2, self.thinning_stride
            )));
        }
        if !(self.horizon_hours > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon_hours)));
        }
        crate::compare::critical_value(self.alpha)?;
        self.search_config().validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_string(self).expect("config serializes"))
    }

    /// Hash of everything that determines a utility sample: the model, the
    /// priors, the noise, the inner chain and the horizon. Sample stores built
    /// under equal sampling hashes can be shared across runs.
    pub fn sampling_hash(&self) -> Result<String> {
        let key = serde_json::json!({
            "constants": self.constants,
            "inference_prior": self.inference_prior,
            "design_prior": self.design_prior()?.atoms(),
            "noise_sd": self.noise_sd,
            "t2": self.t2,
            "thinning_stride": self.thinning_stride,
            "horizon_hours": self.horizon_hours,
        });
        Ok(sha256_hex(&key.to_string()))
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.noise_sd)
    }

    pub fn mcmc(&self) -> McmcSettings {
        McmcSettings::from_truth(self.t2, self.thinning_stride)
    }

    pub fn experiment_model(&self) -> Result<ExperimentModel> {
        let mut model = ExperimentModel::new(self.constants, self.inference_prior, self.noise()?, self.mcmc());
        model.evaluator = CurveEvaluator::new(self.constants, self.horizon_hours, QUADRATURE_STEP_HOURS, SolverOptions::default())?;
        Ok(model)
    }

    pub fn design_prior(&self) -> Result<DesignPrior> {
        match &self.design_prior_file {
            Some(path) => DesignPrior::load(path),
            None => Ok(DesignPrior::reference_patients()),
        }
    }

    pub fn sampler(&self) -> Result<NestedMonteCarlo> {
        Ok(NestedMonteCarlo::new(self.experiment_model()?, self.design_prior()?))
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            grid: self.search_grid.clone(),
            k_min: self.k_min,
            k_max: self.k_max,
            alpha: self.alpha,
            schedule: self.growth,
            prefilter: self.prefilter,
            seed: self.seed,
        }
    }
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}
