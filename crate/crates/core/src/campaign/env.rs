use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::controller::ControllerParams;
use crate::executor::{derive_seed, JobKind};
use crate::oracle::{run_oracle, run_oracle_traced, RolloutConfig, TraceRow};
use crate::path::PathGeometry;
use crate::plant::{sample_plant, DomainRandomizationSpec, PlantParams};
use crate::tuner::{EvalJob, Evaluation, TuningEnvironment};

use super::config::{CampaignConfig, PathSet};

/// Seed stream for per-iteration path selection.
const PATH_STREAM: u64 = 201;

/// Sim2Sim environment: twins are DR samples around the nominal plant, the
/// target is a fixed mismatched plant. Every rollout uses the nominal plant
/// as the controller's prediction model.
#[derive(Debug, Clone)]
pub struct VehicleEnvironment {
    campaign_seed: u64,
    nominal: PlantParams,
    target: PlantParams,
    dr: DomainRandomizationSpec,
    rollout: RolloutConfig,
    paths: PathSet,
    path_randomization: bool,
}

impl VehicleEnvironment {
    pub fn new(cfg: &CampaignConfig, paths: PathSet) -> Self {
        let mut rollout = cfg.rollout.clone();
        rollout.prediction_model = cfg.nominal_plant.clone();
        Self {
            campaign_seed: cfg.campaign_seed,
            nominal: cfg.nominal_plant.clone(),
            target: cfg.target_plant.clone(),
            dr: cfg.domain_randomization.clone(),
            rollout,
            paths,
            path_randomization: cfg.paths.path_randomization,
        }
    }

    pub fn paths(&self) -> &PathSet {
        &self.paths
    }

    /// Index into the library of the path used at iteration `k`. Only
    /// training paths are ever returned.
    pub fn path_index(&self, k: usize) -> usize {
        if !self.path_randomization || self.paths.pool.is_empty() {
            return 0;
        }
        let h = derive_seed(self.campaign_seed, k as u64, 0, PATH_STREAM);
        self.paths.pool[(h % self.paths.pool.len() as u64) as usize]
    }

    pub fn path_for(&self, k: usize) -> &PathGeometry {
        &self.paths.all[self.path_index(k)]
    }

    fn twin_rollout(&self, job: &EvalJob) -> Result<(PlantParams, RolloutConfig), String> {
        let plant = sample_plant(&self.dr, &self.nominal, derive_seed(job.seed, 0, 0, 1)).map_err(|e| e.to_string())?;
        let mut cfg = self.rollout.clone();
        cfg.seed = derive_seed(job.seed, 0, 0, 2);
        cfg.input_noise_std = self.dr.input_noise_std;
        cfg.output_noise_std = self.dr.output_noise_std;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(job.seed, 0, 0, 3));
        let [sw, st] = self.dr.initial_offset_std;
        let zw: f64 = StandardNormal.sample(&mut rng);
        let zt: f64 = StandardNormal.sample(&mut rng);
        cfg.initial_state.w += sw * zw;
        cfg.initial_state.theta_dev += st * zt;
        Ok((plant, cfg))
    }

    /// Plant, path and rollout settings a job runs with.
    pub fn scenario(&self, job: &EvalJob) -> Result<(PlantParams, &PathGeometry, RolloutConfig), String> {
        match job.id.kind {
            JobKind::Target | JobKind::Validation => {
                let mut cfg = self.rollout.clone();
                cfg.seed = job.seed;
                Ok((self.target.clone(), self.path_for(job.id.k), cfg))
            }
            JobKind::Safety => {
                // fixed, noiseless nominal scenario on the first training path
                let mut cfg = self.rollout.clone();
                cfg.seed = job.seed;
                cfg.input_noise_std = [0.0; 2];
                cfg.output_noise_std = [0.0; 5];
                Ok((self.nominal.clone(), &self.paths.all[0], cfg))
            }
            JobKind::Sigma | JobKind::SpsaPlus | JobKind::SpsaMinus => {
                let (plant, cfg) = self.twin_rollout(job)?;
                Ok((plant, self.path_for(job.id.k), cfg))
            }
        }
    }

    /// Same as `evaluate`, also returning the per-step trace.
    pub fn evaluate_traced(&self, job: &EvalJob) -> Result<(Evaluation, Vec<TraceRow>), String> {
        let theta = ControllerParams::from_slice(&job.theta).map_err(|e| e.to_string())?;
        let (plant, path, cfg) = self.scenario(job)?;
        let mut rows = Vec::new();
        let rec = run_oracle_traced(&theta, &plant, path, &cfg, Some(&mut rows)).map_err(|e| e.to_string())?;
        let h = rec.rms();
        Ok((
            Evaluation {
                y: h.to_array().to_vec(),
                completed: rec.completed,
                safety_cost: h.cost,
            },
            rows,
        ))
    }
}

impl TuningEnvironment for VehicleEnvironment {
    fn output_dim(&self) -> usize {
        3
    }

    fn evaluate(&self, job: &EvalJob) -> Result<Evaluation, String> {
        let theta = ControllerParams::from_slice(&job.theta).map_err(|e| e.to_string())?;
        let (plant, path, cfg) = self.scenario(job)?;
        let rec = run_oracle(&theta, &plant, path, &cfg).map_err(|e| e.to_string())?;
        let h = rec.rms();
        Ok(Evaluation {
            y: h.to_array().to_vec(),
            completed: rec.completed,
            safety_cost: h.cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::JobId;

    fn env(randomize: bool) -> VehicleEnvironment {
        let mut cfg = CampaignConfig::default();
        cfg.paths.path_randomization = randomize;
        let paths = cfg.resolve_paths().unwrap();
        VehicleEnvironment::new(&cfg, paths)
    }

    #[test]
    fn fixed_selection_uses_the_first_path() {
        let e = env(false);
        assert!((1..20).all(|k| e.path_index(k) == 0));
    }

    #[test]
    fn randomized_selection_stays_in_training_split() {
        let e = env(true);
        let picks: Vec<usize> = (1..200).map(|k| e.path_index(k)).collect();
        assert!(picks.iter().all(|&i| i < e.paths().n_train));
        let distinct: std::collections::BTreeSet<_> = picks.iter().collect();
        assert!(distinct.len() > 3, "{distinct:?}");
    }

    #[test]
    fn twins_differ_per_job_and_repeat_per_seed() {
        let e = env(false);
        let job = |index, seed| EvalJob {
            id: JobId { k: 1, index, kind: JobKind::Sigma },
            theta: vec![1.0; 9],
            seed,
        };
        let (p1, _, c1) = e.scenario(&job(0, 11)).unwrap();
        let (p2, _, c2) = e.scenario(&job(1, 12)).unwrap();
        assert_ne!(p1, p2);
        assert_ne!(c1.initial_state.w, c2.initial_state.w);
        let (p1b, _, c1b) = e.scenario(&job(0, 11)).unwrap();
        assert_eq!((p1, c1), (p1b, c1b));
    }

    #[test]
    fn safety_scenario_is_noiseless_and_nominal() {
        let e = env(true);
        let job = EvalJob {
            id: JobId { k: 7, index: 0, kind: JobKind::Safety },
            theta: vec![1.0; 9],
            seed: 3,
        };
        let (plant, path, cfg) = e.scenario(&job).unwrap();
        assert_eq!(plant, PlantParams::default());
        assert_eq!(path.name, "dynamic");
        assert_eq!(cfg.output_noise_std, [0.0; 5]);
    }
}
