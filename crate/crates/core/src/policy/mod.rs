//! Joint estimation/transmission energy split.
//!
//! An [`Action`] chooses the share of energy spent on mapping and the sweep
//! density. The UAV then flies the truncated sweep, estimates the map, serves
//! from the estimated best cell and spends what is left on transmission.

mod ddpg;
mod evaluator;
mod gdm;
mod search;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};

pub use ddpg::{
    actor_loss_and_gradient, ddpg_baseline, ddpg_specs, DdpgConfig, DdpgResult, ReplayBuffer,
    Transition,
};
pub use evaluator::{
    evaluate_objective, objective_from_estimate, DiffusionEstimator, Evaluator, MapEstimator,
    Scenario, ScenarioSet, DEFAULT_BANDWIDTH_HZ, POLICY_SEED_START,
};
pub use gdm::{
    gdm_policy_iterate, softmax_weights, train_gdm_policy, ActionArchive, ActionDiffusion,
    GdmConfig, GdmRun, IterationStats,
};
pub use search::{
    exhaustive_grid, random_search, sweep_energy_fraction, GridResult, GridRow, SearchResult,
    SweepRow,
};

/// Largest lawnmower row spacing an action can select.
pub const MAX_ACTION_SPACING: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Share of the total energy budget spent on estimation.
    pub rho: f64,
    /// Sweep density control; 0 is the densest sweep.
    pub spacing_u: f64,
}

impl Action {
    pub fn new(rho: f64, spacing_u: f64) -> Result<Self> {
        let a = Self { rho, spacing_u };
        a.validate()?;
        Ok(a)
    }

    /// Clamps both components into `[0, 1]`; non-finite values map to 0.
    pub fn clamped(rho: f64, spacing_u: f64) -> Self {
        let c = |v: f64| {
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        };
        Self {
            rho: c(rho),
            spacing_u: c(spacing_u),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.rho) && (0.0..=1.0).contains(&self.spacing_u) {
            Ok(())
        } else {
            Err(contract_err(format!("action {self:?} outside [0, 1]^2")))
        }
    }

    /// Row spacing in `1..=MAX_ACTION_SPACING`.
    pub fn spacing(&self) -> usize {
        1 + (self.spacing_u * (MAX_ACTION_SPACING - 1) as f64).round() as usize
    }

    /// The `spacing_u` that selects `spacing`.
    pub fn u_for_spacing(spacing: usize) -> f64 {
        (spacing.clamp(1, MAX_ACTION_SPACING) - 1) as f64 / (MAX_ACTION_SPACING - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    /// Bits delivered during the transmission phase.
    pub rate_bits: f64,
    /// Mean absolute dB error of the estimate over all cells.
    pub est_diff_db: f64,
}
