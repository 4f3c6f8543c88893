//! Deterministic actor-critic baseline on one-step episodes.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Action, Evaluator};
use crate::error::{config_err, Error, Result};
use crate::nn::{self, sigmoid, Activation, AdamState, NetParams, NetSpec};
use crate::rng::{stream_rng, Rng, Stream};

const STATE_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub episodes: usize,
    /// Episodes played with a frozen actor before each round of updates.
    pub round: usize,
    pub updates_per_round: usize,
    pub minibatch: usize,
    pub buffer_capacity: usize,
    /// Soft target-update rate.
    pub tau: f64,
    /// Initial exploration noise, decayed linearly to zero.
    pub noise_sigma: f64,
    pub discount: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            round: 16,
            updates_per_round: 16,
            minibatch: 64,
            buffer_capacity: 10_000,
            tau: 0.005,
            noise_sigma: 0.1,
            discount: 0.0,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            hidden_sizes: vec![64, 64],
            seed: 0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.round == 0 || self.minibatch == 0 || self.buffer_capacity == 0
        {
            return Err(config_err(
                "episodes, round, minibatch and buffer_capacity must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.tau)
            || !(self.noise_sigma >= 0.0)
            || !(0.0..1.0).contains(&self.discount)
        {
            return Err(config_err(
                "tau in [0, 1], noise_sigma >= 0, discount in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: [f64; STATE_DIM],
    pub action: Action,
    pub reward: f64,
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Transition> {
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

struct Nets {
    actor_spec: NetSpec,
    critic_spec: NetSpec,
    actor: NetParams,
    critic: NetParams,
    actor_target: NetParams,
    critic_target: NetParams,
}

impl Nets {
    fn act(&self, params: &NetParams, states: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(nn::infer(&self.actor_spec, params, states.view())?.mapv(sigmoid))
    }

    fn critic_input(states: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[states.view(), actions.view()]).expect("same row count")
    }
}

#[derive(Debug, Clone)]
pub struct DdpgResult {
    pub best_action: Action,
    pub best_j: f64,
    /// Mean-rate objective of the action played in each episode.
    pub episode_j: Vec<f64>,
    pub critic_losses: Vec<f64>,
}

/// Actor (state to pre-sigmoid action) and critic (state and action to value) shapes.
pub fn ddpg_specs(config: &DdpgConfig) -> Result<(NetSpec, NetSpec)> {
    let mut actor_sizes = vec![STATE_DIM];
    actor_sizes.extend(&config.hidden_sizes);
    actor_sizes.push(2);
    let mut critic_sizes = vec![STATE_DIM + 2];
    critic_sizes.extend(&config.hidden_sizes);
    critic_sizes.push(1);
    Ok((
        NetSpec::new(actor_sizes, Activation::Relu)?,
        NetSpec::new(critic_sizes, Activation::Relu)?,
    ))
}

/// Actor loss `-mean_i Q(s_i, sigmoid(actor(s_i)))` and its gradient with
/// respect to the actor parameters.
pub fn actor_loss_and_gradient(
    actor_spec: &NetSpec,
    actor: &NetParams,
    critic_spec: &NetSpec,
    critic: &NetParams,
    states: ArrayView2<f64>,
) -> Result<(f64, Vec<f64>)> {
    let m = states.nrows();
    let (pre, actor_cache) = nn::forward_batch(actor_spec, actor, states)?;
    let mu = pre.mapv(sigmoid);
    let states = states.to_owned();
    let (q, q_cache) =
        nn::forward_batch(critic_spec, critic, Nets::critic_input(&states, &mu).view())?;
    let loss = -q.sum() / m as f64;
    let ones = Array2::from_elem((m, 1), -1.0 / m as f64);
    let dq = nn::backward(critic_spec, critic, &q_cache, ones.view())?.input;
    let mut d_pre = Array2::zeros((m, 2));
    for i in 0..m {
        for j in 0..2 {
            let s = mu[[i, j]];
            d_pre[[i, j]] = dq[[i, STATE_DIM + j]] * s * (1.0 - s);
        }
    }
    let g = nn::param_gradients(actor_spec, actor, &actor_cache, d_pre.view())?;
    Ok((loss, g))
}

/// Trains the actor-critic pair, playing one action per episode.
///
/// Each episode's action is scored on the whole scenario set, the same
/// objective the diffusion policy maximises; the state is the scenario set's
/// mean probe features and is therefore constant. Rewards are divided by the
/// evaluator's rate scale.
pub fn ddpg_baseline(config: &DdpgConfig, evaluator: &mut Evaluator) -> Result<DdpgResult> {
    config.validate()?;
    let (actor_spec, critic_spec) = ddpg_specs(config)?;
    let actor = NetParams::init(&actor_spec, config.seed);
    let critic = NetParams::init(&critic_spec, config.seed.wrapping_add(1));
    let mut nets = Nets {
        actor_target: actor.clone(),
        critic_target: critic.clone(),
        actor,
        critic,
        actor_spec,
        critic_spec,
    };
    let mut actor_adam = AdamState::new(nets.actor.len(), config.actor_lr);
    let mut critic_adam = AdamState::new(nets.critic.len(), config.critic_lr);

    let n_sc = evaluator.scenarios.len();
    let mut state = [0.0; STATE_DIM];
    for i in 0..n_sc {
        let f = evaluator.scenarios.features(i);
        for (s, v) in state.iter_mut().zip(f) {
            *s += v / n_sc as f64;
        }
    }
    let scale = evaluator.rate_scale();

    let mut explore = stream_rng(config.seed, Stream::Policy, 10);
    let mut replay_rng = stream_rng(config.seed, Stream::Policy, 11);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut result = DdpgResult {
        best_action: Action::clamped(0.0, 0.0),
        best_j: f64::NEG_INFINITY,
        episode_j: Vec::with_capacity(config.episodes),
        critic_losses: Vec::new(),
    };

    let mut episode = 0;
    while episode < config.episodes {
        let n = config.round.min(config.episodes - episode);
        let states = Array2::from_shape_fn((n, STATE_DIM), |(_, j)| state[j]);
        let mu = nets.act(&nets.actor, &states)?;
        let actions: Vec<Action> = (0..n)
            .map(|i| {
                let progress = (episode + i) as f64 / config.episodes as f64;
                let sigma = config.noise_sigma * (1.0 - progress);
                let mut noisy = [mu[[i, 0]], mu[[i, 1]]];
                if sigma > 0.0 {
                    let d = Normal::new(0.0, sigma).expect("sigma > 0");
                    for v in &mut noisy {
                        *v += d.sample(&mut explore);
                    }
                }
                Action::clamped(noisy[0], noisy[1])
            })
            .collect();
        let j = evaluator.mean_rates(&actions)?;
        for (a, &v) in actions.iter().zip(&j) {
            if v > result.best_j {
                result.best_j = v;
                result.best_action = *a;
            }
            buffer.push(Transition {
                state,
                action: *a,
                reward: v / scale,
            });
        }
        result.episode_j.extend(&j);
        episode += n;

        for _ in 0..config.updates_per_round {
            let loss = update(
                &mut nets,
                &buffer,
                config,
                &mut actor_adam,
                &mut critic_adam,
                &mut replay_rng,
            )?;
            result.critic_losses.push(loss);
        }
    }
    Ok(result)
}

fn update(
    nets: &mut Nets,
    buffer: &ReplayBuffer,
    config: &DdpgConfig,
    actor_adam: &mut AdamState,
    critic_adam: &mut AdamState,
    rng: &mut Rng,
) -> Result<f64> {
    let batch = buffer.sample(config.minibatch, rng);
    let m = batch.len();
    let states = Array2::from_shape_fn((m, STATE_DIM), |(i, j)| batch[i].state[j]);
    let actions = Array2::from_shape_fn((m, 2), |(i, j)| {
        let a = batch[i].action;
        if j == 0 {
            a.rho
        } else {
            a.spacing_u
        }
    });
    // Episodes restart from the same state, so the bootstrap uses it as the next state.
    let mut target: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    if config.discount > 0.0 {
        let next_a = nets.act(&nets.actor_target, &states)?;
        let q_next = nn::infer(
            &nets.critic_spec,
            &nets.critic_target,
            Nets::critic_input(&states, &next_a).view(),
        )?;
        for (y, q) in target.iter_mut().zip(q_next.column(0)) {
            *y += config.discount * q;
        }
    }

    let (q, cache) = nn::forward_batch(
        &nets.critic_spec,
        &nets.critic,
        Nets::critic_input(&states, &actions).view(),
    )?;
    let mut grad = Array2::zeros((m, 1));
    let mut loss = 0.0;
    for i in 0..m {
        let d = q[[i, 0]] - target[i];
        loss += d * d / m as f64;
        grad[[i, 0]] = 2.0 * d / m as f64;
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "critic loss diverged (loss {loss}, critic adam step {})",
            critic_adam.step
        )));
    }
    let g = nn::param_gradients(&nets.critic_spec, &nets.critic, &cache, grad.view())?;
    nn::adam_step(&mut nets.critic, &g, critic_adam)?;

    // Actor ascends Q(s, mu(s)).
    let (_, g) = actor_loss_and_gradient(
        &nets.actor_spec,
        &nets.actor,
        &nets.critic_spec,
        &nets.critic,
        states.view(),
    )?;
    nn::adam_step(&mut nets.actor, &g, actor_adam)?;

    nets.actor_target.soft_update_from(&nets.actor, config.tau);
    nets.critic_target
        .soft_update_from(&nets.critic, config.tau);
    Ok(loss)
}
