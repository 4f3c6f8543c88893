//! Synthetic RF environments and their ground-truth SNR maps.
//!
//! Received power follows a log-distance path-loss law with spatially
//! correlated log-normal shadowing. Contributions from all transmitters are
//! summed in the linear (mW) domain before conversion to SNR.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};
use crate::rng::{stream_rng, Stream};

/// Closed SNR interval `[lo_db, hi_db]` that every map value lies in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrClamp {
    pub lo_db: f64,
    pub hi_db: f64,
}

impl SnrClamp {
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo_db, self.hi_db)
    }

    pub fn span(&self) -> f64 {
        self.hi_db - self.lo_db
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub width_cells: usize,
    pub height_cells: usize,
    pub cell_size_m: f64,
    pub n_transmitters: usize,
    pub path_loss_exponent: f64,
    pub ref_loss_db: f64,
    pub ref_distance_m: f64,
    /// Transmit power is drawn uniformly from `[lo, hi]` dBm.
    pub tx_power_dbm: (f64, f64),
    pub shadowing_sigma_db: f64,
    /// Standard deviation, in cells, of the Gaussian smoothing kernel.
    pub shadowing_corr_cells: f64,
    pub noise_floor_dbm: f64,
    pub snr_clamp: SnrClamp,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            width_cells: 32,
            height_cells: 32,
            cell_size_m: 10.0,
            n_transmitters: 3,
            path_loss_exponent: 3.0,
            ref_loss_db: 40.0,
            ref_distance_m: 1.0,
            tx_power_dbm: (20.0, 30.0),
            shadowing_sigma_db: 6.0,
            shadowing_corr_cells: 3.0,
            noise_floor_dbm: -100.0,
            snr_clamp: SnrClamp {
                lo_db: -20.0,
                hi_db: 60.0,
            },
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn n_cells(&self) -> usize {
        self.width_cells * self.height_cells
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_cells == 0 || self.height_cells == 0 {
            return Err(config_err("grid dimensions must be positive"));
        }
        if !(self.cell_size_m > 0.0 && self.cell_size_m.is_finite()) {
            return Err(config_err("cell_size_m must be > 0"));
        }
        if self.n_transmitters == 0 {
            return Err(config_err("n_transmitters must be positive"));
        }
        if !(self.path_loss_exponent > 0.0 && self.path_loss_exponent.is_finite()) {
            return Err(config_err("path_loss_exponent must be > 0"));
        }
        if !(self.ref_distance_m > 0.0 && self.ref_distance_m.is_finite()) {
            return Err(config_err("ref_distance_m must be > 0"));
        }
        if !self.ref_loss_db.is_finite() || !self.noise_floor_dbm.is_finite() {
            return Err(config_err("ref_loss_db and noise_floor_dbm must be finite"));
        }
        let (plo, phi) = self.tx_power_dbm;
        if !(plo.is_finite() && phi.is_finite() && plo <= phi) {
            return Err(config_err("tx_power_dbm must be a finite range lo <= hi"));
        }
        if !(self.shadowing_sigma_db >= 0.0 && self.shadowing_sigma_db.is_finite()) {
            return Err(config_err("shadowing_sigma_db must be >= 0"));
        }
        if !(self.shadowing_corr_cells >= 0.0 && self.shadowing_corr_cells.is_finite()) {
            return Err(config_err("shadowing_corr_cells must be >= 0"));
        }
        let c = self.snr_clamp;
        if !(c.lo_db.is_finite() && c.hi_db.is_finite() && c.lo_db < c.hi_db) {
            return Err(config_err("snr_clamp requires lo < hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    /// Position in meters, origin at the grid corner of cell (0, 0).
    pub position: (f64, f64),
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub config: EnvConfig,
    pub transmitters: Vec<Transmitter>,
    /// Row-major shadowing offsets in dB.
    pub shadow_db: Vec<f64>,
}

/// Row-major grid of SNR values in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrMap {
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    pub values: Vec<f64>,
}

/// A map affinely rescaled so that the clamp interval becomes `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SnrMap {
    pub fn new(width: usize, height: usize, cell_size_m: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(contract_err(format!(
                "map has {} values for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            cell_size_m,
            values,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Row-major index of the largest value; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn same_grid(&self, other: &SnrMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Log-distance path loss in dB. Distances below the reference distance are clamped to it.
pub fn path_loss_db(distance_m: f64, config: &EnvConfig) -> f64 {
    let d = distance_m.max(config.ref_distance_m);
    config.ref_loss_db + 10.0 * config.path_loss_exponent * (d / config.ref_distance_m).log10()
}

/// Center of cell `(x, y)` in meters.
pub fn cell_center(x: usize, y: usize, cell_size_m: f64) -> (f64, f64) {
    (
        (x as f64 + 0.5) * cell_size_m,
        (y as f64 + 0.5) * cell_size_m,
    )
}

pub fn build_environment(config: &EnvConfig) -> Result<Environment> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, Stream::Environment, 0);
    let w_m = config.width_cells as f64 * config.cell_size_m;
    let h_m = config.height_cells as f64 * config.cell_size_m;
    let (plo, phi) = config.tx_power_dbm;
    let transmitters = (0..config.n_transmitters)
        .map(|_| {
            let x = rng.random::<f64>() * w_m;
            let y = rng.random::<f64>() * h_m;
            let p = if phi > plo {
                rng.random_range(plo..=phi)
            } else {
                plo
            };
            Transmitter {
                position: (x, y),
                tx_power_dbm: p,
            }
        })
        .collect();
    let shadow_db = shadowing_field(config);
    Ok(Environment {
        config: config.clone(),
        transmitters,
        shadow_db,
    })
}

/// White Gaussian noise smoothed by a separable Gaussian kernel and rescaled
/// to per-cell standard deviation `shadowing_sigma_db`.
///
/// The noise is drawn on a grid padded by the kernel radius so border cells
/// have the same variance as interior cells.
fn shadowing_field(config: &EnvConfig) -> Vec<f64> {
    let (w, h) = (config.width_cells, config.height_cells);
    let sigma = config.shadowing_sigma_db;
    if sigma == 0.0 {
        return vec![0.0; w * h];
    }
    let mut rng = stream_rng(config.seed, Stream::Shadowing, 0);
    let corr = config.shadowing_corr_cells;
    if corr == 0.0 {
        return (0..w * h)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect();
    }

    let radius = (3.0 * corr).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * corr * corr)).exp()
        })
        .collect();
    let k_sq: f64 = kernel.iter().map(|k| k * k).sum();
    // Variance of the 2-D smoothed field is (sum k^2)^2 for a separable kernel.
    let scale = sigma / k_sq;

    let (pw, ph) = (w + 2 * radius, h + 2 * radius);
    let white: Vec<f64> = (0..pw * ph)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    // Horizontal pass: (ph x w).
    let mut horiz = vec![0.0; ph * w];
    for y in 0..ph {
        let row = &white[y * pw..(y + 1) * pw];
        for x in 0..w {
            horiz[y * w + x] = kernel
                .iter()
                .zip(&row[x..x + kernel.len()])
                .map(|(k, v)| k * v)
                .sum();
        }
    }
    // Vertical pass: (h x w).
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * horiz[(y + j) * w + x];
            }
            out[y * w + x] = acc * scale;
        }
    }
    out
}

impl Environment {
    /// Per-cell SNR in dB before clamping.
    pub fn snr_db_unclamped(&self) -> Vec<f64> {
        let c = &self.config;
        let noise_mw = 10f64.powf(c.noise_floor_dbm / 10.0);
        let mut out = Vec::with_capacity(c.n_cells());
        for y in 0..c.height_cells {
            for x in 0..c.width_cells {
                let (cx, cy) = cell_center(x, y, c.cell_size_m);
                let shadow = self.shadow_db[y * c.width_cells + x];
                let total_mw: f64 = self
                    .transmitters
                    .iter()
                    .map(|t| {
                        let d = ((cx - t.position.0).powi(2) + (cy - t.position.1).powi(2)).sqrt();
                        let rx_dbm = t.tx_power_dbm - path_loss_db(d, c) - shadow;
                        10f64.powf(rx_dbm / 10.0)
                    })
                    .sum();
                out.push(10.0 * (total_mw / noise_mw).log10());
            }
        }
        out
    }
}

pub fn ground_truth_map(env: &Environment) -> SnrMap {
    let c = &env.config;
    let values = env
        .snr_db_unclamped()
        .into_iter()
        .map(|v| c.snr_clamp.clamp(v))
        .collect();
    SnrMap {
        width: c.width_cells,
        height: c.height_cells,
        cell_size_m: c.cell_size_m,
        values,
    }
}

/// Maps a dB value onto the unit interval `[-1, 1]` of the clamp range.
pub fn db_to_unit(v: f64, clamp: &SnrClamp) -> f64 {
    2.0 * (v - clamp.lo_db) / clamp.span() - 1.0
}

/// Inverse of [`db_to_unit`]; inputs outside `[-1, 1]` are clamped first.
pub fn unit_to_db(u: f64, clamp: &SnrClamp) -> f64 {
    clamp.lo_db + (u.clamp(-1.0, 1.0) + 1.0) * 0.5 * clamp.span()
}

pub fn to_unit(map: &SnrMap, config: &EnvConfig) -> UnitMap {
    UnitMap {
        width: map.width,
        height: map.height,
        values: map
            .values
            .iter()
            .map(|&v| db_to_unit(v, &config.snr_clamp))
            .collect(),
    }
}

pub fn from_unit(unit: &UnitMap, config: &EnvConfig) -> SnrMap {
    SnrMap {
        width: unit.width,
        height: unit.height,
        cell_size_m: config.cell_size_m,
        values: unit
            .values
            .iter()
            .map(|&u| unit_to_db(u, &config.snr_clamp))
            .collect(),
    }
}
