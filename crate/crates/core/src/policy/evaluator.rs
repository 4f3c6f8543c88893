use std::collections::HashMap;

use rand::Rng as _;

use super::{Action, Objective};
use crate::dataset::{ScenarioPool, SweepPlans};
use crate::diffusion::{estimate_maps, Denoiser, NoiseSchedule};
use crate::error::{config_err, contract_err, Error, Result};
use crate::mission::{execute_mission, reachable_prefix, EnergyModel, MeasurementSet};
use crate::rf_env::{db_to_unit, EnvConfig, Environment, SnrMap};
use crate::rng::{mix_index, stream_rng, Rng, Stream};

pub const DEFAULT_BANDWIDTH_HZ: f64 = 1e6;

/// First environment seed used for policy scenarios; disjoint from the
/// training and held-out ranges.
pub const POLICY_SEED_START: u64 = 3_000_000;

/// Anything that turns sparse measurements into a full dB map.
///
/// Request `(ms, seed)` must be a pure function of its arguments.
pub trait MapEstimator {
    fn estimate_maps(
        &self,
        requests: &[(&MeasurementSet, u64)],
        env: &EnvConfig,
    ) -> Result<Vec<SnrMap>>;
}

pub struct DiffusionEstimator<'a> {
    pub denoiser: &'a Denoiser,
    pub schedule: NoiseSchedule,
    pub n_avg: usize,
}

impl MapEstimator for DiffusionEstimator<'_> {
    fn estimate_maps(
        &self,
        requests: &[(&MeasurementSet, u64)],
        env: &EnvConfig,
    ) -> Result<Vec<SnrMap>> {
        estimate_maps(self.denoiser, requests, env, &self.schedule, self.n_avg)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub environment: Environment,
    pub truth: SnrMap,
}

/// Fixed environments over which actions are scored.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub env_config: EnvConfig,
    pub scenarios: Vec<Scenario>,
    plans: SweepPlans,
}

impl ScenarioSet {
    pub fn build(env_config: &EnvConfig, seed_start: u64, count: usize) -> Result<Self> {
        let pool = ScenarioPool::build(env_config, seed_start, count)?;
        let scenarios = pool
            .seeds
            .into_iter()
            .zip(pool.environments)
            .zip(pool.truths)
            .map(|((seed, environment), truth)| Scenario {
                seed,
                environment,
                truth,
            })
            .collect();
        let plans = SweepPlans::new(
            env_config.width_cells,
            env_config.height_cells,
            super::MAX_ACTION_SPACING,
        )?;
        Ok(Self {
            env_config: env_config.clone(),
            scenarios,
            plans,
        })
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Mean and standard deviation (unit scale) of a coarse 4x4 probe of
    /// scenario `i`'s true map.
    pub fn features(&self, i: usize) -> [f64; 2] {
        let truth = &self.scenarios[i].truth;
        let mut probe = Vec::with_capacity(16);
        for gy in 0..4 {
            for gx in 0..4 {
                let x = (2 * gx + 1) * truth.width / 8;
                let y = (2 * gy + 1) * truth.height / 8;
                probe.push(db_to_unit(truth.get(x, y), &self.env_config.snr_clamp));
            }
        }
        [crate::stats::mean(&probe), crate::stats::std_dev(&probe)]
    }
}

/// Scores an estimate: serve from its argmax cell, spend `transmission_j`
/// transmitting at the true SNR there.
pub fn objective_from_estimate(
    estimate: &SnrMap,
    truth: &SnrMap,
    transmission_j: f64,
    em: &EnergyModel,
    bandwidth_hz: f64,
) -> Result<Objective> {
    if !estimate.same_grid(truth) {
        return Err(contract_err("estimate and truth grids differ"));
    }
    let served = truth.values[estimate.argmax()];
    let est_diff_db = estimate
        .values
        .iter()
        .zip(&truth.values)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / truth.values.len() as f64;
    Ok(Objective {
        rate_bits: shannon_bits(transmission_j, served, em, bandwidth_hz),
        est_diff_db,
    })
}

fn shannon_bits(transmission_j: f64, snr_db: f64, em: &EnergyModel, bandwidth_hz: f64) -> f64 {
    let seconds = transmission_j / em.tx_power_w;
    seconds * bandwidth_hz * (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// One mission plus estimate, drawing measurement noise and the estimator
/// seed from `rng`.
pub fn evaluate_objective(
    action: Action,
    scenario: &Scenario,
    estimator: &dyn MapEstimator,
    em: &EnergyModel,
    noise_sigma_db: f64,
    rng: &mut Rng,
) -> Result<Objective> {
    action.validate()?;
    let cfg = &scenario.environment.config;
    let traj = crate::mission::plan_lawnmower(cfg.width_cells, cfg.height_cells, action.spacing())?;
    let rec = execute_mission(&scenario.truth, &traj, em, action.rho, noise_sigma_db, rng)?;
    let seed = rng.random();
    let est = estimator
        .estimate_maps(&[(&rec.measurements, seed)], cfg)?
        .pop()
        .ok_or_else(|| contract_err("estimator returned no map"))?;
    objective_from_estimate(
        &est,
        &scenario.truth,
        rec.ledger.transmission_j,
        em,
        DEFAULT_BANDWIDTH_HZ,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MissionKey {
    scenario: usize,
    spacing: usize,
    visited: usize,
    rep: usize,
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    served_snr_db: f64,
    est_diff_db: f64,
}

/// Batched, memoised action scoring with common random numbers.
///
/// Measurement noise depends only on the scenario and spacing, and the
/// estimator seed only on the scenario, spacing, number of waypoints reached
/// and repetition. Two actions that reach the same waypoints therefore see the
/// same estimate, so every method is scored on one deterministic landscape.
pub struct Evaluator<'a> {
    pub scenarios: &'a ScenarioSet,
    pub estimator: &'a dyn MapEstimator,
    pub energy: EnergyModel,
    pub noise_sigma_db: f64,
    pub bandwidth_hz: f64,
    /// Estimates averaged per scenario.
    pub reps: usize,
    pub seed: u64,
    cache: HashMap<MissionKey, Scored>,
    evaluations: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        scenarios: &'a ScenarioSet,
        estimator: &'a dyn MapEstimator,
        energy: EnergyModel,
        noise_sigma_db: f64,
    ) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(config_err("no evaluation scenarios"));
        }
        energy.validate()?;
        Ok(Self {
            scenarios,
            estimator,
            energy,
            noise_sigma_db,
            bandwidth_hz: DEFAULT_BANDWIDTH_HZ,
            reps: 1,
            seed: 0,
            cache: HashMap::new(),
            evaluations: 0,
        })
    }

    /// Action-on-scenario evaluations requested so far, cached or not.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Restarts the evaluation count; cached estimates are kept, which is
    /// safe because each one is a pure function of its mission key.
    pub fn reset_evaluations(&mut self) {
        self.evaluations = 0;
    }

    /// Distinct missions estimated so far.
    pub fn cached_missions(&self) -> usize {
        self.cache.len()
    }

    fn mission(
        &self,
        scenario: usize,
        spacing: usize,
        rho: f64,
    ) -> Result<crate::mission::MissionRecord> {
        let sc = &self.scenarios.scenarios[scenario];
        let mut rng = stream_rng(sc.seed, Stream::Measurement, spacing as u64);
        execute_mission(
            &sc.truth,
            self.scenarios.plans.get(spacing),
            &self.energy,
            rho,
            self.noise_sigma_db,
            &mut rng,
        )
    }

    fn key(&self, scenario: usize, action: &Action, rep: usize) -> MissionKey {
        let spacing = action.spacing();
        let cell = self.scenarios.env_config.cell_size_m;
        let (visited, _, _) = reachable_prefix(
            self.scenarios.plans.get(spacing),
            &self.energy,
            cell,
            action.rho * self.energy.total_budget_j,
        );
        MissionKey {
            scenario,
            spacing,
            visited,
            rep,
        }
    }

    /// Per-action, per-scenario objectives (averaged over `reps`).
    pub fn evaluate(&mut self, actions: &[Action]) -> Result<Vec<Vec<Objective>>> {
        if self.reps == 0 {
            return Err(config_err("reps must be positive"));
        }
        for a in actions {
            a.validate()?;
        }
        let n_sc = self.scenarios.len();
        let mut missing: Vec<(MissionKey, f64)> = Vec::new();
        for a in actions {
            for s in 0..n_sc {
                for rep in 0..self.reps {
                    let k = self.key(s, a, rep);
                    if !self.cache.contains_key(&k) && !missing.iter().any(|(m, _)| *m == k) {
                        missing.push((k, a.rho));
                    }
                }
            }
        }
        if !missing.is_empty() {
            let records = missing
                .iter()
                .map(|(k, rho)| {
                    self.mission(k.scenario, k.spacing, *rho)
                        .map(|r| r.measurements)
                })
                .collect::<Result<Vec<_>>>()?;
            let requests: Vec<(&MeasurementSet, u64)> = missing
                .iter()
                .zip(&records)
                .map(|((k, _), ms)| {
                    let sc_seed = self.scenarios.scenarios[k.scenario].seed;
                    let seed = mix_index(&[
                        self.seed,
                        sc_seed,
                        k.spacing as u64,
                        k.visited as u64,
                        k.rep as u64,
                    ]);
                    (ms, seed)
                })
                .collect();
            let estimates = self
                .estimator
                .estimate_maps(&requests, &self.scenarios.env_config)?;
            if estimates.len() != missing.len() {
                return Err(contract_err("estimator returned the wrong number of maps"));
            }
            for ((k, _), est) in missing.iter().zip(&estimates) {
                let truth = &self.scenarios.scenarios[k.scenario].truth;
                let o = objective_from_estimate(est, truth, 0.0, &self.energy, self.bandwidth_hz)?;
                self.cache.insert(
                    *k,
                    Scored {
                        served_snr_db: truth.values[est.argmax()],
                        est_diff_db: o.est_diff_db,
                    },
                );
            }
        }

        let mut out = Vec::with_capacity(actions.len());
        for a in actions {
            let transmission_j = (1.0 - a.rho) * self.energy.total_budget_j;
            let mut per_scenario = Vec::with_capacity(n_sc);
            for s in 0..n_sc {
                let (mut rate, mut diff) = (0.0, 0.0);
                for rep in 0..self.reps {
                    let sc = self.cache[&self.key(s, a, rep)];
                    rate += shannon_bits(
                        transmission_j,
                        sc.served_snr_db,
                        &self.energy,
                        self.bandwidth_hz,
                    );
                    diff += sc.est_diff_db;
                }
                per_scenario.push(Objective {
                    rate_bits: rate / self.reps as f64,
                    est_diff_db: diff / self.reps as f64,
                });
            }
            self.evaluations += n_sc;
            out.push(per_scenario);
        }
        Ok(out)
    }

    /// Mean `rate_bits` over the scenario set, one value per action.
    pub fn mean_rates(&mut self, actions: &[Action]) -> Result<Vec<f64>> {
        let objs = self.evaluate(actions)?;
        let rates: Vec<f64> = objs
            .iter()
            .map(|o| o.iter().map(|x| x.rate_bits).sum::<f64>() / o.len() as f64)
            .collect();
        if let Some(bad) = rates.iter().find(|r| !r.is_finite()) {
            return Err(Error::Training(format!("non-finite objective {bad}")));
        }
        Ok(rates)
    }

    /// Upper bound on `rate_bits`: the whole budget transmitted at the clamp ceiling.
    pub fn rate_scale(&self) -> f64 {
        shannon_bits(
            self.energy.total_budget_j,
            self.scenarios.env_config.snr_clamp.hi_db,
            &self.energy,
            self.bandwidth_hz,
        )
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::baselines::mean_fill;

    /// Mean of the measurements everywhere; the prior mid-range value with none.
    pub(crate) struct MeanFill;

    impl MapEstimator for MeanFill {
        fn estimate_maps(
            &self,
            requests: &[(&MeasurementSet, u64)],
            env: &EnvConfig,
        ) -> Result<Vec<SnrMap>> {
            requests
                .iter()
                .map(|(ms, _)| {
                    if ms.is_empty() {
                        let mid = (env.snr_clamp.lo_db + env.snr_clamp.hi_db) / 2.0;
                        SnrMap::new(
                            ms.width,
                            ms.height,
                            env.cell_size_m,
                            vec![mid; ms.n_cells()],
                        )
                    } else {
                        mean_fill(ms, env.cell_size_m)
                    }
                })
                .collect()
        }
    }

    pub(crate) fn small_set() -> ScenarioSet {
        let cfg = EnvConfig {
            width_cells: 8,
            height_cells: 8,
            ..EnvConfig::default()
        };
        ScenarioSet::build(&cfg, POLICY_SEED_START, 3).unwrap()
    }

    pub(crate) fn small_energy() -> EnergyModel {
        EnergyModel {
            total_budget_j: 30_000.0,
            ..EnergyModel::default()
        }
    }

    #[test]
    fn full_estimation_share_transmits_nothing() {
        let set = small_set();
        let mut ev = Evaluator::new(&set, &MeanFill, small_energy(), 1.0).unwrap();
        let objs = ev.evaluate(&[Action::clamped(1.0, 0.3)]).unwrap();
        assert!(objs[0].iter().all(|o| o.rate_bits == 0.0));
        let mut rng = stream_rng(1, Stream::Policy, 0);
        let o = evaluate_objective(
            Action::clamped(1.0, 0.0),
            &set.scenarios[0],
            &MeanFill,
            &small_energy(),
            1.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(o.rate_bits, 0.0);
    }

    #[test]
    fn perfect_estimate_serves_true_argmax() {
        let set = small_set();
        let em = small_energy();
        let truth = &set.scenarios[0].truth;
        let o = objective_from_estimate(truth, truth, 1000.0, &em, 1e6).unwrap();
        assert_eq!(o.est_diff_db, 0.0);
        let best = truth.values[truth.argmax()];
        assert!(truth
            .values
            .iter()
            .all(|&v| shannon_bits(1000.0, v, &em, 1e6) <= o.rate_bits));
        assert_eq!(o.rate_bits, shannon_bits(1000.0, best, &em, 1e6));
        // Shifting the estimate leaves the served cell alone.
        let mut shifted = truth.clone();
        shifted.values.iter_mut().for_each(|v| *v += 7.5);
        assert_eq!(
            objective_from_estimate(&shifted, truth, 1000.0, &em, 1e6)
                .unwrap()
                .rate_bits,
            o.rate_bits
        );
    }

    #[test]
    fn hand_computed_rate() {
        // 4000 J at 40 W is 100 s; 1 MHz at 30 dB gives log2(1001) bits/s/Hz.
        let em = EnergyModel::default();
        let bits = shannon_bits(4000.0, 30.0, &em, 1e6);
        assert!((bits - 100.0 * 1e6 * 1001f64.log2()).abs() < 1e-3);
    }

    #[test]
    fn evaluator_is_deterministic_and_caches() {
        let set = small_set();
        let actions = [
            Action::clamped(0.2, 0.0),
            Action::clamped(0.6, 1.0),
            Action::clamped(0.2, 0.0),
        ];
        let mut a = Evaluator::new(&set, &MeanFill, small_energy(), 1.0).unwrap();
        let mut b = Evaluator::new(&set, &MeanFill, small_energy(), 1.0).unwrap();
        let ra = a.mean_rates(&actions).unwrap();
        assert_eq!(ra, b.mean_rates(&actions).unwrap());
        assert_eq!(ra[0], ra[2]);
        assert_eq!(a.evaluations(), 9);
    }
}
