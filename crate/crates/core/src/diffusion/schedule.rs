use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};

/// Linear beta schedule with cumulative products.
///
/// Vectors are indexed by timestep `0..=T`; index 0 holds the convention
/// `beta = 0`, `alpha = alpha_bar = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(config_err(format!(
                "need at least 2 timesteps, got {timesteps}"
            )));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(config_err("betas must satisfy 0 < start <= end < 1"));
        }
        let mut betas = vec![0.0; timesteps + 1];
        let mut alphas = vec![1.0; timesteps + 1];
        let mut alpha_bars = vec![1.0; timesteps + 1];
        for t in 1..=timesteps {
            let frac = (t - 1) as f64 / (timesteps - 1) as f64;
            betas[t] = beta_start + (beta_end - beta_start) * frac;
            alphas[t] = 1.0 - betas[t];
            alpha_bars[t] = alpha_bars[t - 1] * alphas[t];
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

/// Closed-form forward marginal `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if eps.len() != x0.len() {
        return Err(contract_err("noise and data lengths differ"));
    }
    if t > schedule.timesteps() {
        return Err(contract_err(format!(
            "timestep {t} beyond T = {}",
            schedule.timesteps()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Sinusoidal embedding of a timestep: `dim/2` sines then `dim/2` cosines
/// over geometrically spaced frequencies.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}
