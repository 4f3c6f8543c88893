use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::RecurrentConfig;
use crate::dataset::DataConfig;
use crate::diffusion::DiffusionConfig;
use crate::error::{config_err, Error, Result};
use crate::mission::EnergyModel;
use crate::policy::{DdpgConfig, GdmConfig, GridResult, POLICY_SEED_START};
use crate::rf_env::EnvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenEnvConfig {
    /// Environments written; seeds run from the run seed upwards.
    pub count: usize,
    /// Row spacing of the sample mission written next to each map.
    pub row_spacing: usize,
}

impl Default for GenEnvConfig {
    fn default() -> Self {
        Self {
            count: 1,
            row_spacing: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub held_out_envs: usize,
    /// Full-budget sweep at this spacing; 4 observes a quarter of the cells.
    pub row_spacing: usize,
    pub idw_power: f64,
    /// Trained denoiser used by experiments that do not train one.
    pub checkpoint: Option<PathBuf>,
    /// Grids exported as PGM/CSV for inspection.
    pub export_maps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            held_out_envs: 20,
            row_spacing: 4,
            idw_power: 2.0,
            checkpoint: None,
            export_maps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub rho_grid: Vec<f64>,
    pub row_spacing: usize,
    pub envs: usize,
    pub reps: usize,
    pub n_avg: usize,
    pub scenario_seed_start: u64,
    /// Seeds measurement and estimation noise; kept apart from the run seed.
    pub eval_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rho_grid: (1..=18).map(|k| k as f64 / 20.0).collect(),
            row_spacing: 1,
            envs: 20,
            reps: 3,
            n_avg: 1,
            scenario_seed_start: POLICY_SEED_START + 1000,
            eval_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Scenarios each candidate action is scored on.
    pub scenarios: usize,
    pub scenario_seed_start: u64,
    pub n_avg: usize,
    pub rho_grid: Vec<f64>,
    pub spacing_grid: Vec<f64>,
    /// Same role as in the sweep; every optimiser sees identical noise.
    pub eval_seed: u64,
    /// Give DDPG and random search as many evaluations as the diffusion policy.
    pub equal_budget: bool,
    /// Actions tried by random search when `equal_budget` is off.
    pub random_budget: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            scenarios: 4,
            scenario_seed_start: POLICY_SEED_START,
            n_avg: 1,
            rho_grid: GridResult::default_rho_grid(),
            spacing_grid: GridResult::default_spacing_grid(),
            eval_seed: 0,
            equal_budget: true,
            random_budget: 480,
        }
    }
}

/// Every knob of every experiment, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub energy: EnergyModel,
    pub data: DataConfig,
    pub diffusion: DiffusionConfig,
    pub recurrent: RecurrentConfig,
    pub eval: EvalConfig,
    pub gen_env: GenEnvConfig,
    pub sweep: SweepConfig,
    pub policy: PolicyConfig,
    pub gdm: GdmConfig,
    pub ddpg: DdpgConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: EnvConfig::default(),
            energy: EnergyModel::default(),
            data: DataConfig::default(),
            diffusion: DiffusionConfig::default(),
            recurrent: RecurrentConfig::default(),
            eval: EvalConfig::default(),
            gen_env: GenEnvConfig::default(),
            sweep: SweepConfig::default(),
            policy: PolicyConfig::default(),
            gdm: GdmConfig {
                iterations: 30,
                ..GdmConfig::default()
            },
            ddpg: DdpgConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Copies the run seed into every subsystem that draws random numbers.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.diffusion.seed = seed;
        self.recurrent.seed = seed;
        self.gdm.seed = seed;
        self.ddpg.seed = seed;
    }

    /// Seeds per subsystem, for the run manifest.
    pub fn seed_table(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("run", self.seed),
            ("data", self.data.seed),
            ("diffusion", self.diffusion.seed),
            ("recurrent", self.recurrent.seed),
            ("gdm", self.gdm.seed),
            ("ddpg", self.ddpg.seed),
            ("train_env_start", self.data.train_seed_start),
            ("eval_env_start", self.data.eval_seed_start),
            ("policy_env_start", self.policy.scenario_seed_start),
            ("sweep_env_start", self.sweep.scenario_seed_start),
            ("policy_eval", self.policy.eval_seed),
            ("sweep_eval", self.sweep.eval_seed),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.energy.validate()?;
        self.diffusion.validate()?;
        self.gdm.validate()?;
        self.ddpg.validate()?;
        if self.eval.held_out_envs == 0 || self.gen_env.count == 0 {
            return Err(config_err(
                "eval.held_out_envs and gen_env.count must be positive",
            ));
        }
        if self.data.max_spacing == 0 || self.eval.row_spacing == 0 || self.gen_env.row_spacing == 0
        {
            return Err(config_err("row spacings must be positive"));
        }
        if self.sweep.envs == 0 || self.sweep.reps == 0 || self.sweep.n_avg == 0 {
            return Err(config_err("sweep envs, reps and n_avg must be positive"));
        }
        if self.policy.scenarios == 0 || self.policy.n_avg == 0 {
            return Err(config_err("policy scenarios and n_avg must be positive"));
        }
        Ok(())
    }
}

/// Overlays `patch` onto `base`; every key in `patch` must already exist in `base`.
fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let child = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &child)?,
                    None => return Err(config_err(format!("unknown config key `{child}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parses an override value as JSON, falling back to a bare string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies one `section.key=value` override.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{spec}` is not key=value")))?;
    let mut patch = override_value(raw);
    for part in key.rsplit('.') {
        if part.is_empty() {
            return Err(config_err(format!(
                "override key `{key}` has an empty segment"
            )));
        }
        let mut obj = serde_json::Map::new();
        obj.insert(part.to_string(), patch);
        patch = Value::Object(obj);
    }
    merge(doc, patch, "")
}

/// Builds the resolved config: defaults, then the file, then overrides, then `seed`.
pub fn resolve_config(
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut doc = serde_json::to_value(ExperimentConfig::default()).expect("config serialises");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("config {} is not JSON: {e}", path.display())))?;
        merge(&mut doc, patch, "")?;
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut cfg: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    let run_seed = seed.unwrap_or(cfg.seed);
    cfg.apply_seed(run_seed);
    cfg.validate()?;
    Ok(cfg)
}
