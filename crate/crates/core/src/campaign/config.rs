use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::N_THETA;
use crate::error::CampaignError;
use crate::oracle::RolloutConfig;
use crate::path::{bundled_paths, PathGeometry};
use crate::plant::{DomainRandomizationSpec, PlantParams};
use crate::tuner::TunerHyperparams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLibraryConfig {
    /// Include the bundled synthetic paths (first, in their fixed order).
    pub bundled: bool,
    /// Extra path files appended after the bundled ones.
    pub files: Vec<PathBuf>,
    /// Fraction of the library used for training; the rest is held out.
    pub train_split: f64,
    /// Draw the path of every iteration from the training pool instead of
    /// always using the first training path.
    pub path_randomization: bool,
}

impl Default for PathLibraryConfig {
    fn default() -> Self {
        Self {
            bundled: true,
            files: Vec::new(),
            train_split: 0.8,
            path_randomization: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub campaign_seed: u64,
    pub iterations: usize,
    pub hyperparams: TunerHyperparams,
    pub theta0: Vec<f64>,
    pub nominal_plant: PlantParams,
    pub target_plant: PlantParams,
    pub domain_randomization: DomainRandomizationSpec,
    pub paths: PathLibraryConfig,
    /// Window, period, target-system noise and OCP settings. The prediction
    /// model and seed inside are overwritten per rollout.
    pub rollout: RolloutConfig,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Dump a per-step trace CSV for every target rollout.
    pub traces: bool,
}

/// Target-system defaults: heavier, softer tires, delayed steering, a 4%
/// grade and a weaker drive.
pub fn default_target_plant(nominal: &PlantParams) -> PlantParams {
    PlantParams {
        mass: nominal.mass * 1.08,
        cf: nominal.cf * 0.85,
        cr: nominal.cr * 0.85,
        actuator_delay_steps: 2,
        road_grade: 0.04,
        drive_gain: nominal.drive_gain * 0.9,
        ..nominal.clone()
    }
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let nominal = PlantParams::default();
        let dr = DomainRandomizationSpec::default();
        let rollout = RolloutConfig {
            input_noise_std: dr.input_noise_std,
            output_noise_std: dr.output_noise_std,
            ..RolloutConfig::default()
        };
        Self {
            campaign_seed: 0,
            iterations: 6,
            // RMS outputs here are O(0.1), so a unit output-noise prior would
            // swamp the innovation.
            hyperparams: TunerHyperparams {
                c_v0: 1e-3,
                ..TunerHyperparams::default()
            },
            theta0: vec![1.0; N_THETA],
            target_plant: default_target_plant(&nominal),
            nominal_plant: nominal,
            domain_randomization: dr,
            paths: PathLibraryConfig::default(),
            rollout,
            output_dir: None,
            workers: None,
            traces: false,
        }
    }
}

/// The resolved path library.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub all: Vec<PathGeometry>,
    pub n_train: usize,
    /// Indices (into `all`) eligible for path randomization.
    pub pool: Vec<usize>,
}

impl PathSet {
    pub fn train(&self) -> &[PathGeometry] {
        &self.all[..self.n_train]
    }

    /// Held-out paths, or the whole library when nothing is held out.
    pub fn validation(&self) -> &[PathGeometry] {
        if self.n_train < self.all.len() {
            &self.all[self.n_train..]
        } else {
            &self.all
        }
    }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self, CampaignError> {
        let cfg: CampaignConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(file: &Path) -> Result<Self, CampaignError> {
        let text =
            std::fs::read_to_string(file).map_err(|e| CampaignError::Io(file.display().to_string(), e))?;
        let mut cfg = Self::from_json(&text)?;
        // relative path files resolve against the config's directory
        if let Some(dir) = file.parent() {
            for f in &mut cfg.paths.files {
                if f.is_relative() {
                    *f = dir.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        fn err(key: &str, msg: impl Into<String>) -> CampaignError {
            CampaignError::config(key, msg)
        }
        if self.iterations < 1 {
            return Err(err("iterations", "must be >= 1"));
        }
        self.hyperparams
            .validate()
            .map_err(|e| err("hyperparams", e.to_string()))?;
        let hp = &self.hyperparams;
        if self.theta0.len() != N_THETA || hp.n_theta() != N_THETA {
            return Err(err(
                "theta0",
                format!("theta0 and the bounds need {N_THETA} entries"),
            ));
        }
        for (i, t) in self.theta0.iter().enumerate() {
            if !(*t >= hp.theta_min[i] && *t <= hp.theta_max[i]) {
                return Err(err("theta0", format!("entry {i} = {t} outside the bounds")));
            }
        }
        self.nominal_plant
            .validate()
            .map_err(|e| err("nominal_plant", e.to_string()))?;
        self.target_plant
            .validate()
            .map_err(|e| err("target_plant", e.to_string()))?;
        self.domain_randomization
            .validate()
            .map_err(|e| err("domain_randomization", e.to_string()))?;
        if !(self.paths.train_split > 0.0 && self.paths.train_split <= 1.0) {
            return Err(err("paths.train_split", "must lie in (0, 1]"));
        }
        if !self.paths.bundled && self.paths.files.is_empty() {
            return Err(err("paths", "no bundled paths and no files"));
        }
        self.rollout.validate().map_err(|e| err("rollout", e.to_string()))?;
        if self.workers == Some(0) {
            return Err(err("workers", "must be >= 1"));
        }
        Ok(())
    }

    pub fn resolve_paths(&self) -> Result<PathSet, CampaignError> {
        let mut all = if self.paths.bundled { bundled_paths() } else { Vec::new() };
        for f in &self.paths.files {
            all.push(PathGeometry::load(f)?);
        }
        if all.is_empty() {
            return Err(CampaignError::config("paths", "library is empty"));
        }
        let n_train = ((self.paths.train_split * all.len() as f64).round() as usize).clamp(1, all.len());
        let mut pool = Vec::new();
        for name in &self.domain_randomization.path_pool {
            if name == "*" {
                pool.extend(0..n_train);
                continue;
            }
            match all[..n_train].iter().position(|p| &p.name == name) {
                Some(i) => pool.push(i),
                None => {
                    return Err(CampaignError::config(
                        "domain_randomization.path_pool",
                        format!("`{name}` is not a training path"),
                    ))
                }
            }
        }
        pool.sort_unstable();
        pool.dedup();
        Ok(PathSet { all, n_train, pool })
    }
}
