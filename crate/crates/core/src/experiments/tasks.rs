use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::json;

use super::config::ExperimentConfig;
use super::run::{RunDir, RunManifest};
use crate::baselines::{idw_interpolate, mean_fill, train_recurrent};
use crate::dataset::{HeldOutSet, TrainingData};
use crate::diffusion::{estimate_maps, masked_rmse, train_denoiser, Denoiser, NoiseSchedule};
use crate::error::{config_err, Error, Result};
use crate::export::{
    csv_header, csv_line, export_map_csv, export_measurements_csv, export_pgm, write_atomic, Field,
    MetricsCsv,
};
use crate::mission::{execute_mission, plan_lawnmower};
use crate::nn::Checkpoint;
use crate::policy::{
    ddpg_baseline, exhaustive_grid, random_search, sweep_energy_fraction, train_gdm_policy, Action,
    DiffusionEstimator, Evaluator, ScenarioSet, SweepRow,
};
use crate::rf_env::{build_environment, ground_truth_map, SnrMap};
use crate::rng::{mix_index, stream_rng, Stream};
use crate::stats::{mean, spearman, std_dev, trailing_mean};

pub const CHECKPOINT_EXT: &str = "semg-ckpt";
pub const DENOISER_CHECKPOINT: &str = "denoiser.semg-ckpt";
pub const RECURRENT_CHECKPOINT: &str = "recurrent.semg-ckpt";
/// Training-loss smoothing window reported in `loss.csv`.
pub const LOSS_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    GenEnv,
    TrainEst,
    EvalEst,
    CompareBaselines,
    SweepEnergy,
    TrainPolicy,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::GenEnv,
        Experiment::TrainEst,
        Experiment::EvalEst,
        Experiment::CompareBaselines,
        Experiment::SweepEnergy,
        Experiment::TrainPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::GenEnv => "gen-env",
            Experiment::TrainEst => "train-est",
            Experiment::EvalEst => "eval-est",
            Experiment::CompareBaselines => "compare-baselines",
            Experiment::SweepEnergy => "sweep-energy",
            Experiment::TrainPolicy => "train-policy",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
                config_err(format!(
                    "unknown experiment `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Runs `experiment` and moves its artifacts to a fresh directory under `out_root`.
///
/// Missing inputs are reported before anything is written; a failure part
/// way through leaves no output directory behind.
pub fn run_experiment(
    experiment: Experiment,
    config: &ExperimentConfig,
    out_root: &Path,
) -> Result<RunOutcome> {
    config.validate()?;
    let denoiser = match experiment {
        Experiment::EvalEst | Experiment::SweepEnergy | Experiment::TrainPolicy => {
            Some(load_denoiser(config, experiment)?)
        }
        Experiment::CompareBaselines if config.eval.checkpoint.is_some() => {
            Some(load_denoiser(config, experiment)?)
        }
        _ => None,
    };
    let mut run = RunDir::create(out_root, experiment.name(), config.seed)?;
    match experiment {
        Experiment::GenEnv => gen_env(&mut run, config)?,
        Experiment::TrainEst => train_est(&mut run, config)?,
        Experiment::EvalEst => eval_est(&mut run, config, &denoiser.unwrap())?,
        Experiment::CompareBaselines => compare_baselines(&mut run, config, denoiser)?,
        Experiment::SweepEnergy => sweep_energy(&mut run, config, &denoiser.unwrap())?,
        Experiment::TrainPolicy => train_policy(&mut run, config, &denoiser.unwrap())?,
    }
    let (dir, manifest) = run.finish(config)?;
    Ok(RunOutcome { dir, manifest })
}

/// Loads `eval.checkpoint` and checks it against the configured grid.
pub fn load_denoiser(config: &ExperimentConfig, experiment: Experiment) -> Result<Denoiser> {
    let path = config.eval.checkpoint.as_ref().ok_or_else(|| {
        Error::MissingArtifact(format!(
            "{experiment} needs a trained denoiser; set eval.checkpoint"
        ))
    })?;
    if !path.is_file() {
        return Err(Error::MissingArtifact(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    let den = Denoiser::from_checkpoint(&Checkpoint::load(path)?)?;
    if den.width != config.env.width_cells || den.height != config.env.height_cells {
        return Err(config_err(format!(
            "checkpoint grid {}x{} does not match env {}x{}",
            den.width, den.height, config.env.width_cells, config.env.height_cells
        )));
    }
    if den.embed_dim != config.diffusion.time_embed_dim {
        return Err(config_err(
            "checkpoint time embedding differs from diffusion.time_embed_dim",
        ));
    }
    Ok(den)
}

fn write_table(path: &Path, columns: &[&str], rows: &[Vec<Field>]) -> Result<()> {
    let mut out = csv_header(columns);
    for r in rows {
        if r.len() != columns.len() {
            return Err(crate::error::contract_err(
                "table row arity differs from header",
            ));
        }
        out.push_str(&csv_line(r));
    }
    write_atomic(path, out.as_bytes())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("json serialises");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn gen_env(run: &mut RunDir, cfg: &ExperimentConfig) -> Result<()> {
    let traj = plan_lawnmower(
        cfg.env.width_cells,
        cfg.env.height_cells,
        cfg.gen_env.row_spacing,
    )?;
    for i in 0..cfg.gen_env.count as u64 {
        let seed = cfg.seed + i;
        let env = build_environment(&cfg.env.with_seed(seed))?;
        let truth = ground_truth_map(&env);
        let stem = format!("env-{seed}");
        export_map_csv(&truth, &run.file(&format!("{stem}-map.csv")))?;
        export_pgm(
            &truth,
            &cfg.env.snr_clamp,
            &run.file(&format!("{stem}-map.pgm")),
        )?;
        let tx: Vec<Vec<Field>> = env
            .transmitters
            .iter()
            .map(|t| {
                vec![
                    t.position.0.into(),
                    t.position.1.into(),
                    t.tx_power_dbm.into(),
                ]
            })
            .collect();
        write_table(
            &run.file(&format!("{stem}-transmitters.csv")),
            &["x_m", "y_m", "tx_power_dbm"],
            &tx,
        )?;
        let mut rng = stream_rng(seed, Stream::Measurement, 0);
        let rec = execute_mission(
            &truth,
            &traj,
            &cfg.energy,
            1.0,
            cfg.data.noise_sigma_db,
            &mut rng,
        )?;
        export_measurements_csv(
            &rec.measurements,
            &run.file(&format!("{stem}-measurements.csv")),
        )?;
        let l = rec.ledger;
        write_table(
            &run.file(&format!("{stem}-energy.csv")),
            &[
                "flight_j",
                "sensing_j",
                "transmission_j",
                "unspent_j",
                "visited",
            ],
            &[vec![
                l.flight_j.into(),
                l.sensing_j.into(),
                l.transmission_j.into(),
                l.unspent_j.into(),
                rec.visited.into(),
            ]],
        )?;
    }
    Ok(())
}

/// Held-out maps observed under the coverage protocol in `eval`.
pub fn held_out_set(cfg: &ExperimentConfig) -> Result<HeldOutSet> {
    HeldOutSet::coverage_protocol(
        &cfg.env,
        cfg.data.eval_seed_start,
        cfg.eval.held_out_envs,
        cfg.eval.row_spacing,
        &cfg.energy,
        cfg.data.noise_sigma_db,
    )
}

/// Diffusion estimates for every held-out map; each map has its own sampling seed.
pub fn diffusion_estimates(
    den: &Denoiser,
    schedule: &NoiseSchedule,
    held: &HeldOutSet,
    cfg: &ExperimentConfig,
) -> Result<Vec<SnrMap>> {
    let requests: Vec<_> = held
        .measurements
        .iter()
        .zip(&held.pool.seeds)
        .map(|(ms, &s)| (ms, mix_index(&[cfg.seed, s])))
        .collect();
    estimate_maps(den, &requests, &cfg.env, schedule, cfg.diffusion.n_avg)
}

/// Masked RMSE of each estimate against its held-out truth.
pub fn held_out_rmse(estimates: &[SnrMap], held: &HeldOutSet) -> Result<Vec<f64>> {
    estimates
        .iter()
        .zip(&held.pool.truths)
        .zip(&held.measurements)
        .map(|((est, truth), ms)| masked_rmse(est, truth, Some(&ms.mask())))
        .collect()
}

fn export_examples(
    run: &RunDir,
    cfg: &ExperimentConfig,
    held: &HeldOutSet,
    estimates: &[(&str, &[SnrMap])],
) -> Result<()> {
    let clamp = &cfg.env.snr_clamp;
    for i in 0..cfg.eval.export_maps.min(held.len()) {
        let stem = format!("heldout-{}", held.pool.seeds[i]);
        export_pgm(
            &held.pool.truths[i],
            clamp,
            &run.file(&format!("{stem}-truth.pgm")),
        )?;
        export_measurements_csv(
            &held.measurements[i],
            &run.file(&format!("{stem}-measurements.csv")),
        )?;
        for (name, maps) in estimates {
            export_pgm(&maps[i], clamp, &run.file(&format!("{stem}-{name}.pgm")))?;
            export_map_csv(&maps[i], &run.file(&format!("{stem}-{name}.csv")))?;
        }
    }
    Ok(())
}

fn train_est(run: &mut RunDir, cfg: &ExperimentConfig) -> Result<()> {
    let data = TrainingData::build(&cfg.env, &cfg.data, &cfg.energy)?;
    let held = held_out_set(cfg)?;
    let schedule = cfg.diffusion.schedule()?;
    let loss_csv = MetricsCsv::new(run.file("loss.csv"), &["step", "loss", "loss_smoothed"]);
    let eval_csv = MetricsCsv::new(
        run.file("eval.csv"),
        &["step", "masked_rmse_db", "masked_rmse_std_db"],
    );
    let total = cfg.diffusion.train_steps;
    let mut losses = Vec::with_capacity(total);
    let den = train_denoiser(&cfg.diffusion, &data, |step, loss, den| {
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite training loss at step {step}"
            )));
        }
        losses.push(loss);
        let smoothed = trailing_mean(&losses, losses.len() - 1, LOSS_WINDOW);
        loss_csv.append(&[step.into(), loss.into(), smoothed.into()])?;
        if step % cfg.diffusion.eval_every == 0 || step == total {
            let rmse = held_out_rmse(&diffusion_estimates(den, &schedule, &held, cfg)?, &held)?;
            eval_csv.append(&[step.into(), mean(&rmse).into(), std_dev(&rmse).into()])?;
        }
        Ok(())
    })?;
    den.to_checkpoint().save(&run.file(DENOISER_CHECKPOINT))?;
    let estimates = diffusion_estimates(&den, &schedule, &held, cfg)?;
    export_examples(run, cfg, &held, &[("diffusion", &estimates)])?;
    Ok(())
}

fn eval_est(run: &mut RunDir, cfg: &ExperimentConfig, den: &Denoiser) -> Result<()> {
    let held = held_out_set(cfg)?;
    let schedule = cfg.diffusion.schedule()?;
    let estimates = diffusion_estimates(den, &schedule, &held, cfg)?;
    let rmse = held_out_rmse(&estimates, &held)?;
    let rows: Vec<Vec<Field>> = (0..held.len())
        .map(|i| {
            vec![
                held.pool.seeds[i].into(),
                held.measurements[i].len().into(),
                rmse[i].into(),
            ]
        })
        .collect();
    write_table(
        &run.file("eval.csv"),
        &["env_seed", "observed_cells", "masked_rmse_db"],
        &rows,
    )?;
    write_table(
        &run.file("summary.csv"),
        &["method", "mean_rmse_db", "std_rmse_db"],
        &[vec![
            "diffusion".into(),
            mean(&rmse).into(),
            std_dev(&rmse).into(),
        ]],
    )?;
    export_examples(run, cfg, &held, &[("diffusion", &estimates)])
}

fn compare_baselines(
    run: &mut RunDir,
    cfg: &ExperimentConfig,
    den: Option<Denoiser>,
) -> Result<()> {
    let data = TrainingData::build(&cfg.env, &cfg.data, &cfg.energy)?;
    let held = held_out_set(cfg)?;
    let schedule = cfg.diffusion.schedule()?;
    let den = match den {
        Some(d) => {
            run.note("diffusion estimator loaded from eval.checkpoint");
            d
        }
        None => {
            let csv = MetricsCsv::new(run.file("diffusion_loss.csv"), &["step", "loss"]);
            train_denoiser(&cfg.diffusion, &data, |step, loss, _| {
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite training loss at step {step}"
                    )));
                }
                csv.append(&[step.into(), loss.into()])
            })?
        }
    };
    den.to_checkpoint().save(&run.file(DENOISER_CHECKPOINT))?;
    if cfg.recurrent.train_steps != cfg.diffusion.train_steps
        || cfg.recurrent.batch_size != cfg.diffusion.batch_size
    {
        run.note("recurrent and diffusion training budgets differ");
    }
    run.note(format!(
        "recurrent baseline ({:?} cell) reads measurements in visit order and predicts the whole map",
        cfg.recurrent.cell
    ));
    let csv = MetricsCsv::new(run.file("recurrent_loss.csv"), &["step", "loss"]);
    let rec = train_recurrent(&cfg.recurrent, &data, |step, loss| {
        csv.append(&[step.into(), loss.into()])
    })?;
    rec.to_checkpoint().save(&run.file(RECURRENT_CHECKPOINT))?;

    let cell = cfg.env.cell_size_m;
    let diff_maps = diffusion_estimates(&den, &schedule, &held, cfg)?;
    let rec_maps = held
        .measurements
        .iter()
        .map(|ms| rec.predict(ms, &cfg.env))
        .collect::<Result<Vec<_>>>()?;
    let fill_maps = held
        .measurements
        .iter()
        .map(|ms| mean_fill(ms, cell))
        .collect::<Result<Vec<_>>>()?;
    let idw_maps = held
        .measurements
        .iter()
        .map(|ms| idw_interpolate(ms, cell, cfg.eval.idw_power))
        .collect::<Result<Vec<_>>>()?;
    let methods: [(&str, &[SnrMap]); 4] = [
        ("diffusion", &diff_maps),
        ("recurrent", &rec_maps),
        ("mean_fill", &fill_maps),
        ("idw", &idw_maps),
    ];
    let scores = methods
        .iter()
        .map(|(_, maps)| held_out_rmse(maps, &held))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<Field>> = (0..held.len())
        .map(|i| {
            let mut r: Vec<Field> =
                vec![held.pool.seeds[i].into(), held.measurements[i].len().into()];
            r.extend(scores.iter().map(|s| Field::from(s[i])));
            r
        })
        .collect();
    write_table(
        &run.file("compare.csv"),
        &[
            "env_seed",
            "observed_cells",
            "diffusion_db",
            "recurrent_db",
            "mean_fill_db",
            "idw_db",
        ],
        &rows,
    )?;
    let summary: Vec<Vec<Field>> = methods
        .iter()
        .zip(&scores)
        .map(|((name, _), s)| vec![(*name).into(), mean(s).into(), std_dev(s).into()])
        .collect();
    write_table(
        &run.file("summary.csv"),
        &["method", "mean_rmse_db", "std_rmse_db"],
        &summary,
    )?;
    export_examples(run, cfg, &held, &methods)
}

fn sweep_energy(run: &mut RunDir, cfg: &ExperimentConfig, den: &Denoiser) -> Result<()> {
    let sw = &cfg.sweep;
    let set = ScenarioSet::build(&cfg.env, sw.scenario_seed_start, sw.envs)?;
    let est = DiffusionEstimator {
        denoiser: den,
        schedule: cfg.diffusion.schedule()?,
        n_avg: sw.n_avg,
    };
    let mut ev = Evaluator::new(&set, &est, cfg.energy, cfg.data.noise_sigma_db)?;
    ev.reps = sw.reps;
    ev.seed = sw.eval_seed;
    let rows = sweep_energy_fraction(&mut ev, &sw.rho_grid, sw.row_spacing)?;
    let table: Vec<Vec<Field>> = rows
        .iter()
        .map(|r| {
            vec![
                r.rho.into(),
                r.est_diff_db.into(),
                r.rate_bits.into(),
                r.est_diff_std.into(),
                r.rate_std.into(),
            ]
        })
        .collect();
    write_table(&run.file("sweep.csv"), &SweepRow::COLUMNS, &table)?;
    let diffs: Vec<f64> = rows.iter().map(|r| r.est_diff_db).collect();
    let best = rows.iter().fold(
        &rows[0],
        |b, r| if r.rate_bits > b.rate_bits { r } else { b },
    );
    run.note(format!(
        "spearman(rho, est_diff_db) = {:.4}; max-rate rho = {}",
        spearman(&sw.rho_grid, &diffs),
        best.rho
    ));
    Ok(())
}

fn action_json(a: &Action, j: f64) -> serde_json::Value {
    json!({"rho": a.rho, "spacing_u": a.spacing_u, "spacing": a.spacing(), "mean_rate_bits": j})
}

fn train_policy(run: &mut RunDir, cfg: &ExperimentConfig, den: &Denoiser) -> Result<()> {
    let pc = &cfg.policy;
    let set = ScenarioSet::build(&cfg.env, pc.scenario_seed_start, pc.scenarios)?;
    let est = DiffusionEstimator {
        denoiser: den,
        schedule: cfg.diffusion.schedule()?,
        n_avg: pc.n_avg,
    };
    // One evaluator for every method: its cache only skips repeated estimates.
    let mut ev = Evaluator::new(&set, &est, cfg.energy, cfg.data.noise_sigma_db)?;
    ev.seed = pc.eval_seed;

    run.note("policies are state-free: one action is scored on every scenario of the set");
    let grid = exhaustive_grid(&mut ev, &pc.rho_grid, &pc.spacing_grid)?;
    let rows: Vec<Vec<Field>> = grid
        .rows
        .iter()
        .map(|r| {
            vec![
                r.rho.into(),
                r.spacing_u.into(),
                r.spacing.into(),
                r.rate_bits.into(),
                r.est_diff_db.into(),
            ]
        })
        .collect();
    write_table(
        &run.file("grid.csv"),
        &["rho", "spacing_u", "spacing", "rate_bits", "est_diff_db"],
        &rows,
    )?;

    ev.reset_evaluations();
    let gdm = train_gdm_policy(&cfg.gdm, &mut ev)?;
    let gdm_evals = ev.evaluations();
    let rows: Vec<Vec<Field>> = gdm
        .history
        .iter()
        .map(|h| {
            vec![
                h.iteration.into(),
                h.best_j.into(),
                h.mean_j.into(),
                h.best_so_far.into(),
                h.best_action.rho.into(),
                h.best_action.spacing_u.into(),
            ]
        })
        .collect();
    write_table(
        &run.file("gdm_history.csv"),
        &[
            "iteration",
            "best_j",
            "mean_j",
            "best_so_far",
            "rho",
            "spacing_u",
        ],
        &rows,
    )?;

    let gdm_budget = cfg.gdm.iterations * cfg.gdm.candidates;
    let mut ddpg_cfg = cfg.ddpg.clone();
    let random_budget = if pc.equal_budget {
        ddpg_cfg.episodes = gdm_budget;
        gdm_budget
    } else {
        pc.random_budget
    };
    ev.reset_evaluations();
    let ddpg = ddpg_baseline(&ddpg_cfg, &mut ev)?;
    let ddpg_evals = ev.evaluations();
    let mut best = f64::NEG_INFINITY;
    let rows: Vec<Vec<Field>> = ddpg
        .episode_j
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            best = best.max(j);
            vec![(k + 1).into(), j.into(), best.into()]
        })
        .collect();
    write_table(
        &run.file("ddpg_curve.csv"),
        &["episode", "j", "best_so_far"],
        &rows,
    )?;

    ev.reset_evaluations();
    let rs = random_search(&mut ev, random_budget, cfg.seed)?;
    let rs_evals = ev.evaluations();
    let rows: Vec<Vec<Field>> = rs
        .best_so_far
        .iter()
        .enumerate()
        .map(|(k, &b)| vec![(k + 1).into(), b.into()])
        .collect();
    write_table(
        &run.file("random_search.csv"),
        &["evaluation", "best_so_far"],
        &rows,
    )?;

    write_json(
        &run.file("best_actions.json"),
        &json!({
            "oracle_grid": action_json(&grid.best_action, grid.best_j),
            "gdm": action_json(&gdm.best_action, gdm.best_j),
            "ddpg": action_json(&ddpg.best_action, ddpg.best_j),
            "random_search": action_json(&rs.best_action, rs.best_j),
            "budget": {"gdm": gdm_budget, "ddpg": ddpg_cfg.episodes, "random_search": random_budget},
            "scenario_evaluations": {"gdm": gdm_evals, "ddpg": ddpg_evals, "random_search": rs_evals},
        }),
    )
}
