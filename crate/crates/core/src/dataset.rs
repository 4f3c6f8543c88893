//! Scenario pools and the measurement protocols used to train and evaluate estimators.
//!
//! Training and evaluation environments come from disjoint seed ranges.
//! Mini-batches are a pure function of `(data seed, step)`, so two estimators
//! trained from the same [`TrainingData`] see identical examples.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::mission::{
    execute_mission, plan_lawnmower, random_mission_shape, EnergyModel, MeasurementSet, Trajectory,
};
use crate::rf_env::{build_environment, ground_truth_map, EnvConfig, Environment, SnrMap};
use crate::rng::{stream_rng, Rng, Stream};

pub const TRAIN_SEED_START: u64 = 1_000_000;
pub const EVAL_SEED_START: u64 = 2_000_000;

/// Ground-truth maps for a contiguous range of environment seeds.
#[derive(Debug, Clone)]
pub struct ScenarioPool {
    pub env_config: EnvConfig,
    pub seeds: Vec<u64>,
    pub environments: Vec<Environment>,
    pub truths: Vec<SnrMap>,
}

impl ScenarioPool {
    pub fn build(env_config: &EnvConfig, seed_start: u64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(config_err("scenario pool must not be empty"));
        }
        let seeds: Vec<u64> = (seed_start..seed_start + count as u64).collect();
        let environments = seeds
            .iter()
            .map(|&s| build_environment(&env_config.with_seed(s)))
            .collect::<Result<Vec<_>>>()?;
        let truths = environments.iter().map(ground_truth_map).collect();
        Ok(Self {
            env_config: env_config.clone(),
            seeds,
            environments,
            truths,
        })
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }
}

/// Lawnmower trajectories for every row spacing `1..=max_spacing`.
#[derive(Debug, Clone)]
pub struct SweepPlans {
    plans: Vec<Trajectory>,
}

impl SweepPlans {
    pub fn new(width: usize, height: usize, max_spacing: usize) -> Result<Self> {
        let max_spacing = max_spacing.min(height);
        if max_spacing == 0 {
            return Err(config_err("max_spacing must be positive"));
        }
        let plans = (1..=max_spacing)
            .map(|s| plan_lawnmower(width, height, s))
            .collect::<Result<_>>()?;
        Ok(Self { plans })
    }

    pub fn get(&self, spacing: usize) -> &Trajectory {
        &self.plans[spacing - 1]
    }

    pub fn max_spacing(&self) -> usize {
        self.plans.len()
    }
}

/// How training masks are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_envs: usize,
    pub train_seed_start: u64,
    pub eval_seed_start: u64,
    /// Row spacing is drawn uniformly from `1..=max_spacing`.
    pub max_spacing: usize,
    pub noise_sigma_db: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_envs: 2000,
            train_seed_start: TRAIN_SEED_START,
            eval_seed_start: EVAL_SEED_START,
            max_spacing: 8,
            noise_sigma_db: 1.0,
            seed: 0,
        }
    }
}

/// One training example: an environment from the pool and a mission over it.
#[derive(Debug, Clone)]
pub struct Example {
    pub env_index: usize,
    pub measurements: MeasurementSet,
}

#[derive(Debug, Clone)]
pub struct TrainingData {
    pub config: DataConfig,
    pub pool: ScenarioPool,
    pub plans: SweepPlans,
    pub energy: EnergyModel,
}

impl TrainingData {
    pub fn build(
        env_config: &EnvConfig,
        config: &DataConfig,
        energy: &EnergyModel,
    ) -> Result<Self> {
        let train_range =
            config.train_seed_start..config.train_seed_start + config.train_envs as u64;
        if train_range.contains(&config.eval_seed_start) {
            return Err(config_err("training and evaluation seed ranges overlap"));
        }
        let pool = ScenarioPool::build(env_config, config.train_seed_start, config.train_envs)?;
        let plans = SweepPlans::new(
            env_config.width_cells,
            env_config.height_cells,
            config.max_spacing,
        )?;
        Ok(Self {
            config: config.clone(),
            pool,
            plans,
            energy: *energy,
        })
    }

    /// Random mission: uniform spacing and uniform estimation share `rho`.
    pub fn random_measurements(&self, truth: &SnrMap, rng: &mut Rng) -> Result<MeasurementSet> {
        let (spacing, rho) = random_mission_shape(rng, self.plans.max_spacing());
        let rec = execute_mission(
            truth,
            self.plans.get(spacing),
            &self.energy,
            rho,
            self.config.noise_sigma_db,
            rng,
        )?;
        Ok(rec.measurements)
    }

    /// The mini-batch for training step `step`.
    pub fn batch(&self, step: u64, batch_size: usize) -> Result<Vec<Example>> {
        let mut rng = stream_rng(self.config.seed, Stream::Data, step);
        (0..batch_size)
            .map(|_| {
                let env_index = rng.random_range(0..self.pool.len());
                let measurements =
                    self.random_measurements(&self.pool.truths[env_index], &mut rng)?;
                Ok(Example {
                    env_index,
                    measurements,
                })
            })
            .collect()
    }
}

/// Fixed evaluation missions over held-out environments.
#[derive(Debug, Clone)]
pub struct HeldOutSet {
    pub pool: ScenarioPool,
    pub measurements: Vec<MeasurementSet>,
}

impl HeldOutSet {
    /// Full sweep at `row_spacing` with the whole budget available for estimation.
    ///
    /// With spacing 4 this observes every fourth row, i.e. 25% of the cells.
    pub fn coverage_protocol(
        env_config: &EnvConfig,
        seed_start: u64,
        count: usize,
        row_spacing: usize,
        energy: &EnergyModel,
        noise_sigma_db: f64,
    ) -> Result<Self> {
        let pool = ScenarioPool::build(env_config, seed_start, count)?;
        let traj = plan_lawnmower(env_config.width_cells, env_config.height_cells, row_spacing)?;
        let measurements = pool
            .truths
            .iter()
            .zip(&pool.seeds)
            .map(|(truth, &s)| {
                let mut rng = stream_rng(s, Stream::Measurement, 0);
                execute_mission(truth, &traj, energy, 1.0, noise_sigma_db, &mut rng)
                    .map(|r| r.measurements)
            })
            .collect::<Result<_>>()?;
        Ok(Self { pool, measurements })
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }
}
