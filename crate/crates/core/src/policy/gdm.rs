//! Diffusion policy over the two-dimensional action, improved by
//! softmax-weighted denoising regression on its own evaluated samples.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Action, Evaluator};
use crate::diffusion::{time_embedding, NoiseSchedule};
use crate::error::{config_err, Error, Result};
use crate::nn::{self, Activation, AdamState, NetParams, NetSpec};
use crate::rng::{mix_index, stream_rng, Rng, Stream};

const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdmConfig {
    /// Candidates sampled and scored per iteration.
    pub candidates: usize,
    pub temperature: f64,
    pub iterations: usize,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden_sizes: Vec<usize>,
    pub time_embed_dim: usize,
    pub learning_rate: f64,
    /// Gradient steps per iteration on the weighted candidates.
    pub updates_per_iteration: usize,
    /// Steps fitting the untrained policy to uniform actions.
    pub pretrain_steps: usize,
    /// Regress on every action scored so far rather than only the latest batch.
    pub replay_all: bool,
    pub seed: u64,
}

impl Default for GdmConfig {
    fn default() -> Self {
        Self {
            candidates: 16,
            temperature: 0.1,
            iterations: 30,
            timesteps: 50,
            beta_start: 1e-3,
            beta_end: 0.1,
            hidden_sizes: vec![64, 64],
            time_embed_dim: 16,
            learning_rate: 1e-3,
            updates_per_iteration: 20,
            pretrain_steps: 500,
            replay_all: true,
            seed: 0,
        }
    }
}

impl GdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates < 2 {
            return Err(config_err("need at least 2 candidates per iteration"));
        }
        if !(self.temperature > 0.0) {
            return Err(config_err("softmax temperature must be > 0"));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(config_err("time_embed_dim must be positive and even"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err("learning_rate must be > 0"));
        }
        Ok(())
    }
}

/// Noise-prediction network over actions scaled to `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDiffusion {
    pub spec: NetSpec,
    pub params: NetParams,
    pub schedule: NoiseSchedule,
    pub embed_dim: usize,
}

impl ActionDiffusion {
    pub fn new(config: &GdmConfig) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![ACTION_DIM + config.time_embed_dim];
        sizes.extend(&config.hidden_sizes);
        sizes.push(ACTION_DIM);
        let spec = NetSpec::new(sizes, Activation::Silu)?;
        Ok(Self {
            params: NetParams::init(&spec, config.seed),
            spec,
            schedule: NoiseSchedule::linear(config.timesteps, config.beta_start, config.beta_end)?,
            embed_dim: config.time_embed_dim,
        })
    }

    fn input(&self, xs: &[[f64; ACTION_DIM]], ts: &[usize]) -> Array2<f64> {
        let mut input = Array2::zeros((xs.len(), self.spec.input_size()));
        for (i, (x, &t)) in xs.iter().zip(ts).enumerate() {
            let mut row = input.row_mut(i);
            row[0] = x[0];
            row[1] = x[1];
            for (j, e) in time_embedding(t, self.embed_dim).into_iter().enumerate() {
                row[ACTION_DIM + j] = e;
            }
        }
        input
    }

    /// Draws `n` actions by ancestral sampling.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<Action>> {
        if !self.params.all_finite() {
            return Err(Error::Generation("policy parameters are not finite".into()));
        }
        let s = &self.schedule;
        let mut xs: Vec<[f64; ACTION_DIM]> = (0..n)
            .map(|_| {
                [
                    StandardNormal.sample(&mut *rng),
                    StandardNormal.sample(&mut *rng),
                ]
            })
            .collect();
        for t in (1..=s.timesteps()).rev() {
            let eps = nn::infer(
                &self.spec,
                &self.params,
                self.input(&xs, &vec![t; n]).view(),
            )?;
            let coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
            let inv = 1.0 / s.alpha(t).sqrt();
            for (i, x) in xs.iter_mut().enumerate() {
                for j in 0..ACTION_DIM {
                    let mean = (x[j] - coef * eps[[i, j]]) * inv;
                    x[j] = if t > 1 {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        mean + s.beta(t).sqrt() * z
                    } else {
                        mean
                    };
                }
            }
        }
        Ok(xs
            .iter()
            .map(|x| {
                Action::clamped(
                    (x[0].clamp(-1.0, 1.0) + 1.0) / 2.0,
                    (x[1].clamp(-1.0, 1.0) + 1.0) / 2.0,
                )
            })
            .collect())
    }

    /// One Adam step on `sum_i w_i * mean_j (eps - eps_hat)^2`.
    pub fn weighted_step(
        &mut self,
        actions: &[Action],
        weights: &[f64],
        adam: &mut AdamState,
        rng: &mut Rng,
    ) -> Result<f64> {
        let n = actions.len();
        let ts: Vec<usize> = (0..n)
            .map(|_| rng.random_range(1..=self.schedule.timesteps()))
            .collect();
        let mut eps = [[0.0; ACTION_DIM]].repeat(n);
        let mut xs = Vec::with_capacity(n);
        for ((a, e), &t) in actions.iter().zip(&mut eps).zip(&ts) {
            let ab = self.schedule.alpha_bar(t);
            let x0 = [2.0 * a.rho - 1.0, 2.0 * a.spacing_u - 1.0];
            let mut xt = [0.0; ACTION_DIM];
            for j in 0..ACTION_DIM {
                e[j] = StandardNormal.sample(&mut *rng);
                xt[j] = ab.sqrt() * x0[j] + (1.0 - ab).sqrt() * e[j];
            }
            xs.push(xt);
        }
        let (out, cache) =
            nn::forward_batch(&self.spec, &self.params, self.input(&xs, &ts).view())?;
        let mut grad = Array2::zeros(out.dim());
        let mut loss = 0.0;
        for i in 0..n {
            for j in 0..ACTION_DIM {
                let d = out[[i, j]] - eps[i][j];
                loss += weights[i] * d * d / ACTION_DIM as f64;
                grad[[i, j]] = weights[i] * 2.0 * d / ACTION_DIM as f64;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training("non-finite policy loss".into()));
        }
        let g = nn::param_gradients(&self.spec, &self.params, &cache, grad.view())?;
        nn::adam_step(&mut self.params, &g, adam)?;
        Ok(loss)
    }
}

/// `softmax(j / tau)`, computed stably.
pub fn softmax_weights(j: &[f64], tau: f64) -> Vec<f64> {
    let m = j.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = j.iter().map(|v| ((v - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Standardises objectives so the temperature acts on a unitless scale.
fn standardise(j: &[f64]) -> Vec<f64> {
    let m = crate::stats::mean(j);
    let sd = crate::stats::std_dev(j);
    if sd > 0.0 {
        j.iter().map(|v| (v - m) / sd).collect()
    } else {
        vec![0.0; j.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Best objective among this iteration's candidates.
    pub best_j: f64,
    pub mean_j: f64,
    /// Best objective seen in this and all earlier iterations.
    pub best_so_far: f64,
    pub best_action: Action,
}

/// Scored actions the policy regresses on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionArchive {
    pub actions: Vec<Action>,
    pub objectives: Vec<f64>,
}

/// Sample, score, reweight and regress: one policy improvement step.
///
/// With `replay_all` the weights are a softmax over everything in `archive`,
/// otherwise over this iteration's candidates only.
pub fn gdm_policy_iterate(
    policy: &mut ActionDiffusion,
    adam: &mut AdamState,
    archive: &mut ActionArchive,
    config: &GdmConfig,
    evaluator: &mut Evaluator,
    iteration: usize,
) -> Result<IterationStats> {
    let mut rng = stream_rng(
        config.seed,
        Stream::Policy,
        mix_index(&[iteration as u64, 0]),
    );
    let actions = policy.sample(config.candidates, &mut rng)?;
    let j = evaluator.mean_rates(&actions)?;
    if !config.replay_all {
        archive.actions.clear();
        archive.objectives.clear();
    }
    archive.actions.extend_from_slice(&actions);
    archive.objectives.extend_from_slice(&j);
    let weights = softmax_weights(&standardise(&archive.objectives), config.temperature);
    let mut rng = stream_rng(
        config.seed,
        Stream::Policy,
        mix_index(&[iteration as u64, 1]),
    );
    for _ in 0..config.updates_per_iteration {
        policy.weighted_step(&archive.actions, &weights, adam, &mut rng)?;
    }
    let (bi, &best) = j
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| {
            if *v > *acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    Ok(IterationStats {
        iteration,
        best_j: best,
        mean_j: crate::stats::mean(&j),
        best_so_far: best,
        best_action: actions[bi],
    })
}

#[derive(Debug, Clone)]
pub struct GdmRun {
    pub policy: ActionDiffusion,
    pub history: Vec<IterationStats>,
    pub best_action: Action,
    pub best_j: f64,
}

/// Fits the policy to uniform actions, then runs `config.iterations` improvement steps.
pub fn train_gdm_policy(config: &GdmConfig, evaluator: &mut Evaluator) -> Result<GdmRun> {
    let mut policy = ActionDiffusion::new(config)?;
    let mut adam = AdamState::new(policy.params.len(), config.learning_rate);
    let mut rng = stream_rng(config.seed, Stream::Policy, mix_index(&[u64::MAX, 2]));
    let prior_batch = 64;
    for _ in 0..config.pretrain_steps {
        let prior: Vec<Action> = (0..prior_batch)
            .map(|_| Action::clamped(rng.random(), rng.random()))
            .collect();
        policy.weighted_step(
            &prior,
            &vec![1.0 / prior_batch as f64; prior_batch],
            &mut adam,
            &mut rng,
        )?;
    }
    let mut adam = AdamState::new(policy.params.len(), config.learning_rate);
    let mut history = Vec::with_capacity(config.iterations);
    let mut archive = ActionArchive::default();
    let mut best = (Action::clamped(0.0, 0.0), f64::NEG_INFINITY);
    for it in 0..config.iterations {
        let mut stats =
            gdm_policy_iterate(&mut policy, &mut adam, &mut archive, config, evaluator, it)?;
        if stats.best_j > best.1 {
            best = (stats.best_action, stats.best_j);
        }
        stats.best_so_far = best.1;
        history.push(stats);
    }
    Ok(GdmRun {
        policy,
        history,
        best_action: best.0,
        best_j: best.1,
    })
}
