use ndarray::{s, Array2, ArrayViewMut1};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::schedule::{time_embedding, NoiseSchedule};
use crate::error::{config_err, contract_err, Error, Result};
use crate::mission::MeasurementSet;
use crate::nn::{self, Activation, AdamState, Checkpoint, NetParams, NetSpec};
use crate::rf_env::{db_to_unit, from_unit, EnvConfig, SnrClamp, SnrMap, UnitMap};
use crate::rng::{stream_rng, Rng, Stream};

/// What the network output represents. The noise estimate used by the
/// loss and the sampler is derived from it either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    /// Output is the noise itself.
    Epsilon,
    /// Output is the clean map `x0`; noise is `(x_t - sqrt(ab) x0) / sqrt(1 - ab)`.
    Sample,
}

impl Parametrization {
    /// Noise estimate and its derivative with respect to the raw output.
    #[inline]
    fn eps(self, out: f64, x_t: f64, alpha_bar: f64) -> (f64, f64) {
        match self {
            Parametrization::Epsilon => (out, 1.0),
            Parametrization::Sample => {
                let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
                ((x_t - a * out) / b, -a / b)
            }
        }
    }
}

/// Per-example weighting of the squared noise error during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossWeighting {
    /// Plain mean squared noise error.
    Noise,
    /// Weighted by `(1 - ab) / ab`, which equals the squared error of the
    /// implied clean map.
    Sample,
}

impl LossWeighting {
    #[inline]
    fn weight(self, alpha_bar: f64) -> f64 {
        match self {
            LossWeighting::Noise => 1.0,
            LossWeighting::Sample => (1.0 - alpha_bar) / alpha_bar,
        }
    }
}

/// Rows per batched network call during sampling.
const SAMPLE_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub time_embed_dim: usize,
    pub parametrization: Parametrization,
    pub loss_weighting: LossWeighting,
    pub batch_size: usize,
    pub train_steps: usize,
    pub learning_rate: f64,
    /// Held-out evaluation interval, in training steps.
    pub eval_every: usize,
    /// Conditional samples averaged per estimate.
    pub n_avg: usize,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            timesteps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            hidden_sizes: vec![512, 512],
            activation: Activation::Silu,
            time_embed_dim: 16,
            parametrization: Parametrization::Sample,
            loss_weighting: LossWeighting::Sample,
            batch_size: 16,
            train_steps: 5000,
            learning_rate: 1e-3,
            eval_every: 500,
            n_avg: 4,
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps < 2 {
            return Err(config_err("diffusion needs T >= 2"));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(config_err("time_embed_dim must be positive and even"));
        }
        if self.batch_size == 0 || self.n_avg == 0 || self.eval_every == 0 {
            return Err(config_err(
                "batch_size, n_avg and eval_every must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err("learning_rate must be > 0"));
        }
        Ok(())
    }
}

/// Measurement conditioning in unit scale.
///
/// `mask` is 1 at observed cells; `obs` holds the observation there (clamped
/// into `[-1, 1]`) and 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub mask: Vec<f64>,
    pub obs: Vec<f64>,
}

impl Conditioning {
    pub fn from_measurements(ms: &MeasurementSet, clamp: &SnrClamp) -> Self {
        let mut mask = vec![0.0; ms.n_cells()];
        let mut obs = vec![0.0; ms.n_cells()];
        for (cell, v) in ms.observations() {
            mask[cell] = 1.0;
            obs[cell] = db_to_unit(v, clamp).clamp(-1.0, 1.0);
        }
        Self { mask, obs }
    }

    pub fn unconditional(n_cells: usize) -> Self {
        Self {
            mask: vec![0.0; n_cells],
            obs: vec![0.0; n_cells],
        }
    }

    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mask
            .iter()
            .zip(&self.obs)
            .enumerate()
            .filter(|(_, (m, _))| **m > 0.0)
            .map(|(i, (_, o))| (i, *o))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    /// Ground-truth map in unit scale.
    pub truth: Vec<f64>,
    pub cond: Conditioning,
}

/// Noise-prediction network over flattened maps.
///
/// Input layout per row: `[x_t | mask | observations | time embedding]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub spec: NetSpec,
    pub params: NetParams,
    pub width: usize,
    pub height: usize,
    pub embed_dim: usize,
    pub parametrization: Parametrization,
}

impl Denoiser {
    pub fn new(config: &DiffusionConfig, width: usize, height: usize) -> Result<Self> {
        config.validate()?;
        let n = width * height;
        let mut sizes = vec![3 * n + config.time_embed_dim];
        sizes.extend(&config.hidden_sizes);
        sizes.push(n);
        let spec = NetSpec::new(sizes, config.activation)?;
        let mut params = NetParams::init(&spec, config.seed);
        params.zero_output_layer();
        Ok(Self {
            spec,
            params,
            width,
            height,
            embed_dim: config.time_embed_dim,
            parametrization: config.parametrization,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: "denoiser".into(),
            spec: Some(self.spec.clone()),
            params: self.params.clone(),
            meta: json!({
                "width": self.width,
                "height": self.height,
                "time_embed_dim": self.embed_dim,
                "parametrization": self.parametrization,
            }),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != "denoiser" {
            return Err(Error::Checkpoint(format!(
                "expected a denoiser checkpoint, found {:?}",
                ckpt.kind
            )));
        }
        let field = |k: &str| {
            ckpt.meta
                .get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("denoiser checkpoint lacks {k}")))
        };
        let (width, height, embed_dim) =
            (field("width")?, field("height")?, field("time_embed_dim")?);
        let spec = ckpt
            .spec
            .clone()
            .ok_or_else(|| Error::Checkpoint("denoiser checkpoint lacks a spec".into()))?;
        if spec.input_size() != 3 * width * height + embed_dim
            || spec.output_size() != width * height
        {
            return Err(Error::Checkpoint(
                "denoiser spec does not match its grid".into(),
            ));
        }
        let parametrization = ckpt
            .meta
            .get("parametrization")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::Checkpoint(format!("bad parametrization: {e}")))?
            .ok_or_else(|| Error::Checkpoint("denoiser checkpoint lacks parametrization".into()))?;
        let params = ckpt.params_for(&spec)?;
        Ok(Self {
            spec,
            params,
            width,
            height,
            embed_dim,
            parametrization,
        })
    }
}

/// Writes one conditioned input row.
pub fn build_denoiser_input(
    mut row: ArrayViewMut1<f64>,
    x_t: &[f64],
    cond: &Conditioning,
    t: usize,
    embed_dim: usize,
) {
    let n = x_t.len();
    let vals = x_t
        .iter()
        .chain(&cond.mask)
        .chain(&cond.obs)
        .copied()
        .chain(time_embedding(t, embed_dim));
    for (dst, v) in row.iter_mut().zip(vals) {
        *dst = v;
    }
    debug_assert_eq!(row.len(), 3 * n + embed_dim);
}

/// One optimisation step of the noise-prediction objective.
///
/// Each example gets its own timestep `t ~ U{1..T}` and noise draw; the loss
/// is the weighted mean squared error between predicted and true noise over
/// all cells.
pub fn train_step(
    den: &mut Denoiser,
    adam: &mut AdamState,
    batch: &[TrainingExample],
    schedule: &NoiseSchedule,
    weighting: LossWeighting,
    rng: &mut Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(contract_err("empty training batch"));
    }
    let n = den.n_cells();
    let mut input = Array2::zeros((batch.len(), den.spec.input_size()));
    let mut target = Array2::zeros((batch.len(), n));
    let mut noisy = Array2::zeros((batch.len(), n));
    let mut alpha_bars = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        if ex.truth.len() != n || ex.cond.mask.len() != n {
            return Err(contract_err(
                "training example does not match the denoiser grid",
            ));
        }
        let t = rng.random_range(1..=schedule.timesteps());
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut x_t = Vec::with_capacity(n);
        for (j, &x0) in ex.truth.iter().enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            target[[i, j]] = e;
            x_t.push(a * x0 + b * e);
            noisy[[i, j]] = a * x0 + b * e;
        }
        build_denoiser_input(input.row_mut(i), &x_t, &ex.cond, t, den.embed_dim);
        alpha_bars.push(ab);
    }

    let (out, cache) = nn::forward_batch(&den.spec, &den.params, input.view())?;
    let count = (batch.len() * n) as f64;
    let mut loss = 0.0;
    let mut grad_out = Array2::zeros(out.dim());
    for (i, &ab) in alpha_bars.iter().enumerate() {
        let w = weighting.weight(ab);
        for j in 0..n {
            let (eps_hat, d_out) = den.parametrization.eps(out[[i, j]], noisy[[i, j]], ab);
            let d = eps_hat - target[[i, j]];
            loss += w * d * d;
            grad_out[[i, j]] = w * 2.0 * d * d_out / count;
        }
    }
    loss /= count;
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss at adam step {}",
            adam.step + 1
        )));
    }
    let grads = nn::param_gradients(&den.spec, &den.params, &cache, grad_out.view())?;
    nn::adam_step(&mut den.params, &grads, adam)?;
    Ok(loss)
}

fn overwrite_observed(
    x: &mut [f64],
    cond: &Conditioning,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) {
    let ab = schedule.alpha_bar(t);
    for (cell, y) in cond.observed() {
        x[cell] = if t == 0 {
            y
        } else {
            let e: f64 = StandardNormal.sample(rng);
            ab.sqrt() * y + (1.0 - ab).sqrt() * e
        };
    }
}

/// Ancestral sampling with replacement conditioning, one row per conditioning.
///
/// Row `i` draws all of its noise from `rngs[i]`. Outputs are clamped to
/// `[-1, 1]`; observed cells equal their conditioning values exactly.
pub fn sample_conditional_batch(
    den: &Denoiser,
    conds: &[&Conditioning],
    schedule: &NoiseSchedule,
    rngs: &mut [Rng],
) -> Result<Vec<Vec<f64>>> {
    if conds.len() != rngs.len() {
        return Err(contract_err("one generator per conditioning required"));
    }
    if !den.params.all_finite() {
        return Err(Error::Generation(
            "denoiser parameters are not finite".into(),
        ));
    }
    let n = den.n_cells();
    if conds.iter().any(|c| c.mask.len() != n || c.obs.len() != n) {
        return Err(contract_err(
            "conditioning does not match the denoiser grid",
        ));
    }
    let mut out = Vec::with_capacity(conds.len());
    for (chunk, chunk_rngs) in conds
        .chunks(SAMPLE_CHUNK)
        .zip(rngs.chunks_mut(SAMPLE_CHUNK))
    {
        out.extend(sample_chunk(den, chunk, schedule, chunk_rngs)?);
    }
    Ok(out)
}

fn sample_chunk(
    den: &Denoiser,
    conds: &[&Conditioning],
    schedule: &NoiseSchedule,
    rngs: &mut [Rng],
) -> Result<Vec<Vec<f64>>> {
    let n = den.n_cells();
    let rows = conds.len();
    let big_t = schedule.timesteps();
    let emb_at = 3 * n;

    let mut input = Array2::zeros((rows, den.spec.input_size()));
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for (i, (cond, rng)) in conds.iter().zip(rngs.iter_mut()).enumerate() {
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        overwrite_observed(&mut x, cond, big_t, schedule, rng);
        let mut row = input.row_mut(i);
        row.slice_mut(s![n..2 * n])
            .assign(&ndarray::ArrayView1::from(&cond.mask));
        row.slice_mut(s![2 * n..3 * n])
            .assign(&ndarray::ArrayView1::from(&cond.obs));
        xs.push(x);
    }

    for t in (1..=big_t).rev() {
        let emb = ndarray::Array1::from(time_embedding(t, den.embed_dim));
        for (i, x) in xs.iter().enumerate() {
            let mut row = input.row_mut(i);
            row.slice_mut(s![0..n])
                .assign(&ndarray::ArrayView1::from(x));
            row.slice_mut(s![emb_at..]).assign(&emb);
        }
        let out = nn::infer(&den.spec, &den.params, input.view())?;
        let ab = schedule.alpha_bar(t);
        let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
        let sigma = schedule.beta(t).sqrt();
        for (i, (x, rng)) in xs.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let o = out.row(i);
            for (j, xj) in x.iter_mut().enumerate() {
                let (eps, _) = den.parametrization.eps(o[j], *xj, ab);
                let mean = (*xj - coef * eps) * inv_sqrt_alpha;
                *xj = if t > 1 {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    mean + sigma * z
                } else {
                    mean
                };
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Generation(format!("non-finite sample at step {t}")));
            }
            overwrite_observed(x, conds[i], t - 1, schedule, rng);
        }
    }
    for x in &mut xs {
        for v in x.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
    }
    Ok(xs)
}

fn child_rng(rng: &mut Rng) -> Rng {
    let seed: u64 = rng.random();
    stream_rng(seed, Stream::DiffusionSample, 0)
}

/// Draws one conditional map in unit scale.
pub fn sample_conditional(
    den: &Denoiser,
    measurements: &MeasurementSet,
    clamp: &SnrClamp,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<UnitMap> {
    let cond = Conditioning::from_measurements(measurements, clamp);
    let mut parent = parent_rng(rng.random());
    let mut rngs = vec![child_rng(&mut parent)];
    let values = sample_conditional_batch(den, &[&cond], schedule, &mut rngs)?
        .pop()
        .unwrap();
    Ok(UnitMap {
        width: den.width,
        height: den.height,
        values,
    })
}

/// Mean of `n_avg` conditional samples, in dB.
pub fn estimate_map(
    den: &Denoiser,
    measurements: &MeasurementSet,
    env: &EnvConfig,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    n_avg: usize,
) -> Result<SnrMap> {
    let seed = rng.random();
    Ok(
        estimate_maps(den, &[(measurements, seed)], env, schedule, n_avg)?
            .pop()
            .unwrap(),
    )
}

/// Batched [`estimate_map`]: request `(ms, seed)` gives the same map as
/// `estimate_map(ms, rng)` for an `rng` whose next `u64` is `seed`.
pub fn estimate_maps(
    den: &Denoiser,
    requests: &[(&MeasurementSet, u64)],
    env: &EnvConfig,
    schedule: &NoiseSchedule,
    n_avg: usize,
) -> Result<Vec<SnrMap>> {
    if n_avg == 0 {
        return Err(contract_err("n_avg must be positive"));
    }
    let conds: Vec<Conditioning> = requests
        .iter()
        .map(|(ms, _)| Conditioning::from_measurements(ms, &env.snr_clamp))
        .collect();
    let mut cond_refs = Vec::with_capacity(requests.len() * n_avg);
    let mut rngs = Vec::with_capacity(requests.len() * n_avg);
    for (cond, (_, seed)) in conds.iter().zip(requests) {
        let mut parent = parent_rng(*seed);
        for _ in 0..n_avg {
            cond_refs.push(cond);
            rngs.push(child_rng(&mut parent));
        }
    }
    let samples = sample_conditional_batch(den, &cond_refs, schedule, &mut rngs)?;
    Ok(samples
        .chunks(n_avg)
        .map(|group| {
            let mut mean = vec![0.0; den.n_cells()];
            for s in group {
                for (m, v) in mean.iter_mut().zip(s) {
                    *m += v / n_avg as f64;
                }
            }
            from_unit(
                &UnitMap {
                    width: den.width,
                    height: den.height,
                    values: mean,
                },
                env,
            )
        })
        .collect())
}

/// Per-request generator from which the `n_avg` sample generators are split.
fn parent_rng(seed: u64) -> Rng {
    stream_rng(seed, Stream::DiffusionSample, 1)
}

/// Root-mean-square error in dB over cells where `exclude` is false
/// (all cells when `exclude` is `None`).
pub fn masked_rmse(estimate: &SnrMap, truth: &SnrMap, exclude: Option<&[bool]>) -> Result<f64> {
    if !estimate.same_grid(truth) {
        return Err(contract_err("estimate and truth grids differ"));
    }
    if let Some(m) = exclude {
        if m.len() != truth.values.len() {
            return Err(contract_err("mask does not match the grid"));
        }
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, (e, t)) in estimate.values.iter().zip(&truth.values).enumerate() {
        if exclude.is_some_and(|m| m[i]) {
            continue;
        }
        sum += (e - t).powi(2);
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(
            "no unobserved cells to score".into(),
        ));
    }
    Ok((sum / count as f64).sqrt())
}
