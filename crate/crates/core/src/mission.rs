//! UAV sweep planning, measurement collection and the energy ledger.
//!
//! The UAV flies at constant speed, so flight energy is proportional to
//! distance. A share `rho` of the total budget is allocated to estimation
//! (flight + sensing); the rest is reserved for the transmission phase. The
//! mission is truncated as soon as the next waypoint would overdraw the
//! estimation allocation.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};
use crate::rf_env::SnrMap;
use crate::rng::Rng;

/// Cell coordinates `(x, y)`; `x` is the column, `y` the row.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyModel {
    pub fly_j_per_m: f64,
    /// Includes the hover time needed to take the sample.
    pub sense_j_per_sample: f64,
    /// Total platform draw while transmitting.
    pub tx_power_w: f64,
    pub total_budget_j: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            fly_j_per_m: 20.0,
            sense_j_per_sample: 5.0,
            tx_power_w: 40.0,
            total_budget_j: 200_000.0,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.fly_j_per_m,
            self.sense_j_per_sample,
            self.tx_power_w,
            self.total_budget_j,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(config_err("energy model values must be finite and > 0"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub width: usize,
    pub height: usize,
    pub waypoints: Vec<Cell>,
    pub sample_every_cells: usize,
}

impl Trajectory {
    pub fn new(
        width: usize,
        height: usize,
        waypoints: Vec<Cell>,
        sample_every_cells: usize,
    ) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(config_err("trajectory needs at least one waypoint"));
        }
        if sample_every_cells == 0 {
            return Err(config_err("sample_every_cells must be positive"));
        }
        if let Some(c) = waypoints.iter().find(|(x, y)| *x >= width || *y >= height) {
            return Err(config_err(format!(
                "waypoint {c:?} outside {width}x{height} grid"
            )));
        }
        Ok(Self {
            width,
            height,
            waypoints,
            sample_every_cells,
        })
    }

    /// Distance between waypoints `i - 1` and `i`, in cells.
    pub fn step_cells(&self, i: usize) -> f64 {
        let (ax, ay) = self.waypoints[i - 1];
        let (bx, by) = self.waypoints[i];
        let dx = ax as f64 - bx as f64;
        let dy = ay as f64 - by as f64;
        (dx * dx + dy * dy).sqrt()
    }

    /// Total flown distance in cells.
    pub fn path_length_cells(&self) -> f64 {
        (1..self.waypoints.len()).map(|i| self.step_cells(i)).sum()
    }

    pub fn samples_at(&self, i: usize) -> bool {
        i % self.sample_every_cells == 0
    }
}

/// Boustrophedon sweep over rows `0, s, 2s, ...` starting at cell (0, 0).
///
/// Waypoints are the cells of the swept rows; the UAV flies straight down
/// between the end of one row and the start of the next.
pub fn plan_lawnmower(width: usize, height: usize, row_spacing_cells: usize) -> Result<Trajectory> {
    if width == 0 || height == 0 {
        return Err(config_err("grid dimensions must be positive"));
    }
    if row_spacing_cells == 0 || row_spacing_cells > height {
        return Err(config_err(format!(
            "row spacing {row_spacing_cells} outside 1..={height}"
        )));
    }
    let mut waypoints = Vec::new();
    for (i, y) in (0..height).step_by(row_spacing_cells).enumerate() {
        if i % 2 == 0 {
            waypoints.extend((0..width).map(|x| (x, y)));
        } else {
            waypoints.extend((0..width).rev().map(|x| (x, y)));
        }
    }
    Trajectory::new(width, height, waypoints, 1)
}

/// Sparse SNR observations collected along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub width: usize,
    pub height: usize,
    /// Row-major; `Some(db)` exactly at observed cells.
    pub values: Vec<Option<f64>>,
    /// Observed cell indices in first-visit order.
    pub order: Vec<usize>,
}

impl MeasurementSet {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![None; width * height],
            order: Vec::new(),
        }
    }

    /// Records a sample; a revisited cell keeps its first-visit position and
    /// takes the latest value.
    pub fn record(&mut self, cell: usize, value_db: f64) {
        if self.values[cell].is_none() {
            self.order.push(cell);
        }
        self.values[cell] = Some(value_db);
    }

    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_some).collect()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `(cell index, value)` pairs in visit order.
    pub fn observations(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.order
            .iter()
            .map(|&c| (c, self.values[c].expect("ordered cell observed")))
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub flight_j: f64,
    pub sensing_j: f64,
    pub transmission_j: f64,
    /// Estimation allocation left over when the trajectory finished early.
    pub unspent_j: f64,
}

impl EnergyLedger {
    pub fn estimation_j(&self) -> f64 {
        self.flight_j + self.sensing_j
    }

    pub fn total_j(&self) -> f64 {
        self.flight_j + self.sensing_j + self.transmission_j + self.unspent_j
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionRecord {
    pub measurements: MeasurementSet,
    pub ledger: EnergyLedger,
    /// Number of waypoints reached before the mission ended.
    pub visited: usize,
}

/// Number of waypoints reachable within `allowance_j`, with the flight and
/// sensing energy they consume.
pub fn reachable_prefix(
    traj: &Trajectory,
    em: &EnergyModel,
    cell_size_m: f64,
    allowance_j: f64,
) -> (usize, f64, f64) {
    let (mut flight, mut sensing) = (0.0, 0.0);
    for i in 0..traj.waypoints.len() {
        let fly = if i == 0 {
            0.0
        } else {
            em.fly_j_per_m * traj.step_cells(i) * cell_size_m
        };
        let sense = if traj.samples_at(i) {
            em.sense_j_per_sample
        } else {
            0.0
        };
        if flight + sensing + fly + sense > allowance_j {
            return (i, flight, sensing);
        }
        flight += fly;
        sensing += sense;
    }
    (traj.waypoints.len(), flight, sensing)
}

/// Flies `traj` within the estimation allocation `rho * total_budget_j`,
/// measuring `truth + N(0, noise_sigma_db^2)` at sampling waypoints.
///
/// Noise is drawn in visit order, so a shorter mission with the same stream
/// observes a prefix of a longer one.
pub fn execute_mission(
    truth: &SnrMap,
    traj: &Trajectory,
    em: &EnergyModel,
    rho: f64,
    noise_sigma_db: f64,
    rng: &mut Rng,
) -> Result<MissionRecord> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(contract_err(format!("rho {rho} outside [0, 1]")));
    }
    if !(noise_sigma_db >= 0.0) {
        return Err(contract_err("measurement noise sigma must be >= 0"));
    }
    if truth.width != traj.width || truth.height != traj.height {
        return Err(contract_err("trajectory grid does not match the map"));
    }
    em.validate()?;
    let allowance = rho * em.total_budget_j;
    let (visited, flight_j, sensing_j) = reachable_prefix(traj, em, truth.cell_size_m, allowance);

    let mut measurements = MeasurementSet::empty(truth.width, truth.height);
    for i in 0..visited {
        if !traj.samples_at(i) {
            continue;
        }
        let (x, y) = traj.waypoints[i];
        let cell = y * truth.width + x;
        let z: f64 = StandardNormal.sample(rng);
        measurements.record(cell, truth.values[cell] + noise_sigma_db * z);
    }
    let transmission_j = (1.0 - rho) * em.total_budget_j;
    let ledger = EnergyLedger {
        flight_j,
        sensing_j,
        transmission_j,
        unspent_j: (allowance - flight_j - sensing_j).max(0.0),
    };
    Ok(MissionRecord {
        measurements,
        ledger,
        visited,
    })
}

/// Draws a uniformly random sweep density and estimation share; used to
/// diversify training masks.
pub fn random_mission_shape(rng: &mut Rng, max_spacing: usize) -> (usize, f64) {
    let spacing = rng.random_range(1..=max_spacing);
    let rho = rng.random::<f64>();
    (spacing, rho)
}
