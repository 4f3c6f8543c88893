use super::estimator::{train_step, Conditioning, Denoiser, DiffusionConfig, TrainingExample};
use crate::dataset::TrainingData;
use crate::error::{contract_err, Result};
use crate::nn::AdamState;
use crate::rf_env::{db_to_unit, SnrMap};
use crate::rng::{stream_rng, Stream};

pub(crate) fn unit_values(map: &SnrMap, data: &TrainingData) -> Vec<f64> {
    let clamp = data.pool.env_config.snr_clamp;
    map.values.iter().map(|&v| db_to_unit(v, &clamp)).collect()
}

/// Trains a fresh denoiser for `config.train_steps` steps.
///
/// `on_step(step, loss, denoiser)` runs after every step (1-based) and may
/// abort training by returning an error.
pub fn train_denoiser<F>(
    config: &DiffusionConfig,
    data: &TrainingData,
    mut on_step: F,
) -> Result<Denoiser>
where
    F: FnMut(usize, f64, &Denoiser) -> Result<()>,
{
    let env = &data.pool.env_config;
    let mut den = Denoiser::new(config, env.width_cells, env.height_cells)?;
    let schedule = config.schedule()?;
    let mut adam = AdamState::new(den.params.len(), config.learning_rate);
    let units: Vec<Vec<f64>> = data
        .pool
        .truths
        .iter()
        .map(|m| unit_values(m, data))
        .collect();
    if units.is_empty() {
        return Err(contract_err("no training environments"));
    }
    for step in 1..=config.train_steps {
        let batch: Vec<TrainingExample> = data
            .batch(step as u64, config.batch_size)?
            .into_iter()
            .map(|ex| TrainingExample {
                truth: units[ex.env_index].clone(),
                cond: Conditioning::from_measurements(&ex.measurements, &env.snr_clamp),
            })
            .collect();
        let mut rng = stream_rng(config.seed, Stream::DiffusionTrain, step as u64);
        let loss = train_step(
            &mut den,
            &mut adam,
            &batch,
            &schedule,
            config.loss_weighting,
            &mut rng,
        )?;
        on_step(step, loss, &den)?;
    }
    Ok(den)
}
