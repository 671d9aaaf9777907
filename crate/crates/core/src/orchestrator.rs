//! The outer learning loop and the baseline protocols.
//!
//! Every protocol produces one [`IterationRecord`] per iteration. Within an
//! iteration the K generate → train → evaluate pipelines run in parallel;
//! their results are collected in rollout order, so scheduling never changes
//! the history.

use std::io::Write;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AmtmFeed, ExperimentConfig, PolicyInit, Protocol, Task};
use crate::error::{Error, Result};
use crate::mtm::{self, InitMode, MtmSpec, MtmState, TrainConfig};
use crate::param_space::ParamVector;
use crate::policy::{PolicyConfig, PolicyState, RolloutBatch};
use crate::seed::{self, rng_from, Stream};
use crate::sim::gmm::GmmWorld;
use crate::sim::{self, traffic, LabeledDataset, SimulatorSpec};
use crate::stats;

/// Where "real" data (validation, test, validation-params training) comes
/// from.
#[derive(Debug, Clone, PartialEq)]
pub enum RealSource {
    Gmm(GmmWorld),
    Traffic(ParamVector),
}

/// Everything fixed for the duration of an experiment: the simulator, the
/// main task model architecture and the frozen evaluation sets.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    pub sim: SimulatorSpec,
    pub real: RealSource,
    pub mtm: MtmSpec,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
}

impl TaskEnv {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let data_seed = cfg.evaluation.data_seed;
        let (sim, real, n_val, n_test) = match cfg.task {
            Task::Gmm => {
                let world = cfg.gmm_world()?;
                (
                    SimulatorSpec::Gmm(world.clone()),
                    RealSource::Gmm(world),
                    cfg.gmm.validation_size,
                    cfg.gmm.test_size,
                )
            }
            Task::Traffic => {
                let theta = match &cfg.traffic.real_theta {
                    Some(v) => ParamVector::new(v.clone())?,
                    None => traffic::real_theta(),
                };
                (
                    SimulatorSpec::Traffic(cfg.traffic_sim()),
                    RealSource::Traffic(theta),
                    cfg.traffic.validation_size,
                    cfg.traffic.test_size,
                )
            }
        };
        let validation = real_dataset(&sim, &real, n_val, seed::derive(data_seed, Stream::Validation, 0))?;
        let test = real_dataset(&sim, &real, n_test, seed::derive(data_seed, Stream::Test, 0))?;
        Ok(Self {
            sim,
            real,
            mtm: cfg.mtm_spec(),
            validation,
            test,
        })
    }

    pub fn sample_real(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        real_dataset(&self.sim, &self.real, n, seed)
    }

    /// Parameters of the validation distribution, when it is itself a
    /// simulator setting.
    pub fn real_theta(&self) -> Option<&ParamVector> {
        match &self.real {
            RealSource::Traffic(theta) => Some(theta),
            RealSource::Gmm(_) => None,
        }
    }
}

fn real_dataset(sim: &SimulatorSpec, real: &RealSource, n: usize, seed: u64) -> Result<LabeledDataset> {
    match (real, sim) {
        (RealSource::Gmm(world), _) => world.sample_real(n, seed),
        (RealSource::Traffic(theta), SimulatorSpec::Traffic(t)) => t.generate_counting(theta, n, seed),
        (RealSource::Traffic(_), SimulatorSpec::Gmm(_)) => Err(Error::InvalidArgument(
            "traffic parameters paired with the gmm simulator".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub thetas: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Baseline the advantages were computed against.
    pub baseline: f64,
    /// Policy mean in effect while this iteration's thetas were drawn.
    pub policy_mean: Vec<f64>,
    pub amtm_validation: Option<f64>,
    pub amtm_test: Option<f64>,
    /// Highest single reward seen up to and including this iteration.
    pub best_so_far: f64,
    pub wall_time_secs: f64,
}

impl IterationRecord {
    pub fn mean_reward(&self) -> f64 {
        stats::mean(&self.rewards)
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentHistory {
    pub protocol: Protocol,
    pub task: Task,
    pub records: Vec<IterationRecord>,
    pub final_policy_mean: Vec<f64>,
    pub best_theta: Vec<f64>,
    pub best_reward: f64,
    pub datasets_generated: usize,
}

impl ExperimentHistory {
    pub fn mean_rewards(&self) -> Vec<f64> {
        self.records.iter().map(IterationRecord::mean_reward).collect()
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_so_far).collect()
    }

    pub fn amtm_validation(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.amtm_validation).collect()
    }

    pub fn amtm_test(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.amtm_test).collect()
    }

    /// The history with wall-clock measurements zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut h = self.clone();
        for r in &mut h.records {
            r.wall_time_secs = 0.0;
        }
        h
    }
}

/// Column header of the per-iteration CSV. Vector-valued columns are
/// `;`-separated; `thetas` separates rollouts with `|`. Empty AMTM columns
/// mean the accumulated model was not tracked.
pub const CSV_HEADER: &str = "iteration,mean_reward,max_reward,min_reward,baseline,best_so_far,amtm_validation,amtm_test,wall_time_secs,rewards,advantages,policy_mean,thetas";

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";")
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

pub fn write_csv_header<W: Write>(w: &mut W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    Ok(())
}

pub fn write_csv_row<W: Write>(w: &mut W, r: &IterationRecord) -> Result<()> {
    let min = r.rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let thetas = r.thetas.iter().map(|t| join(t)).collect::<Vec<_>>().join("|");
    writeln!(
        w,
        "{},{:e},{:e},{:e},{:e},{:e},{},{},{:.6},{},{},{},{}",
        r.iteration,
        r.mean_reward(),
        r.max_reward(),
        min,
        r.baseline,
        r.best_so_far,
        opt(r.amtm_validation),
        opt(r.amtm_test),
        r.wall_time_secs,
        join(&r.rewards),
        join(&r.advantages),
        join(&r.policy_mean),
        thetas
    )?;
    Ok(())
}

pub fn write_history_csv<W: Write>(mut w: W, history: &ExperimentHistory) -> Result<()> {
    write_csv_header(&mut w)?;
    for r in &history.records {
        write_csv_row(&mut w, r)?;
    }
    Ok(())
}

/// One trained-and-evaluated rollout.
struct Rollout {
    data: LabeledDataset,
    model: MtmState,
    reward: f64,
}

/// Accumulated main task model: fine-tuned every iteration, observed only.
struct Amtm {
    model: Option<MtmState>,
    feed: AmtmFeed,
}

impl Amtm {
    fn step(&mut self, env: &TaskEnv, cfg: &TrainConfig, rollouts: &[Rollout], seed: u64) -> Result<(f64, f64)> {
        let retain = TrainConfig {
            mode: InitMode::Retain,
            ..*cfg
        };
        let data = match self.feed {
            AmtmFeed::Best => {
                let best = argmax(rollouts.iter().map(|r| r.reward));
                rollouts[best].data.clone()
            }
            AmtmFeed::First => rollouts[0].data.clone(),
            AmtmFeed::All => {
                let parts: Vec<&LabeledDataset> = rollouts.iter().map(|r| &r.data).collect();
                LabeledDataset::concat(&parts)?
            }
        };
        let model = mtm::train(self.model.as_ref(), &env.mtm, &data, &retain, seed)?;
        let val = mtm::evaluate(&model, &env.validation)?;
        let test = mtm::evaluate(&model, &env.test)?;
        self.model = Some(model);
        Ok((val, test))
    }
}

/// Index of the first maximum.
fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

enum DataSource<'a> {
    Sim(&'a ParamVector),
    Real,
}

fn run_rollout(
    env: &TaskEnv,
    source: DataSource<'_>,
    m: usize,
    train_cfg: &TrainConfig,
    previous: Option<&MtmState>,
    seed: u64,
) -> Result<Rollout> {
    let data_seed = seed::derive(seed, Stream::Data, 0);
    let data = match source {
        DataSource::Sim(theta) => sim::generate(&env.sim, theta, m, data_seed)?,
        DataSource::Real => env.sample_real(m, data_seed)?,
    };
    let model = mtm::train(
        previous,
        &env.mtm,
        &data,
        train_cfg,
        seed::derive(seed, Stream::ModelInit, 0),
    )?;
    let reward = mtm::evaluate(&model, &env.validation)?;
    Ok(Rollout { data, model, reward })
}

/// Called with each record as soon as it is complete.
pub type Observer<'a> = dyn FnMut(&IterationRecord) -> Result<()> + 'a;

/// Run the protocol named in `cfg` with a freshly built environment.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentHistory> {
    let env = TaskEnv::from_config(cfg)?;
    run_in(cfg, &env, &mut |_| Ok(()))
}

/// Run the protocol named in `cfg` against a prepared environment.
pub fn run_in(cfg: &ExperimentConfig, env: &TaskEnv, observer: &mut Observer<'_>) -> Result<ExperimentHistory> {
    cfg.validate()?;
    match cfg.protocol {
        Protocol::Lts => run_lts(cfg, env, observer),
        Protocol::RandomParams => run_random_params(cfg, env, observer),
        Protocol::RandomSearch => run_random_search(cfg, env, observer),
        Protocol::FixedParams => {
            let theta = ParamVector::new(cfg.baseline.fixed_theta.clone().expect("checked by validate"))?;
            run_fixed_params(cfg, env, Some(&theta), observer)
        }
        Protocol::ValidationParams => run_fixed_params(cfg, env, None, observer),
    }
}

fn gaussian_around(center: &[f64], scale: f64, seed: u64) -> Result<ParamVector> {
    let mut rng = rng_from(seed);
    ParamVector::new(
        center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + scale * z
            })
            .collect(),
    )
}

/// Starting policy mean for the LTS protocol.
pub fn initial_mean(cfg: &ExperimentConfig) -> Result<ParamVector> {
    let dim = cfg.schema_for_task()?.total_dim();
    match cfg.policy.init {
        PolicyInit::Adversarial => match cfg.task {
            Task::Traffic => Ok(traffic::adversarial_theta()),
            Task::Gmm => Err(Error::Config {
                field: "policy.init".into(),
                message: "the gmm task has no adversarial preset".into(),
            }),
        },
        PolicyInit::Standard => {
            let center = cfg.policy.init_mean.clone().unwrap_or_else(|| vec![0.0; dim]);
            gaussian_around(
                &center,
                cfg.policy.init_scale,
                seed::derive(cfg.seed, Stream::PolicyInit, 0),
            )
        }
    }
}

fn prior_mean(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let dim = cfg.schema_for_task()?.total_dim();
    Ok(cfg.baseline.prior_mean.clone().unwrap_or_else(|| vec![0.0; dim]))
}

/// Learning to simulate: sample K parameter vectors from the policy, train
/// one model per simulated dataset, reward each by validation performance,
/// and take a policy-gradient step.
pub fn run_lts(cfg: &ExperimentConfig, env: &TaskEnv, observer: &mut Observer<'_>) -> Result<ExperimentHistory> {
    let policy = PolicyState::new(initial_mean(cfg)?, cfg.policy.policy_config())?;
    policy_loop(cfg, env, policy, Protocol::Lts, observer)
}

/// Fresh draws from the wide prior every iteration. The loop is the LTS loop
/// with a frozen mean, so the baseline and advantages are still recorded.
pub fn run_random_params(
    cfg: &ExperimentConfig,
    env: &TaskEnv,
    observer: &mut Observer<'_>,
) -> Result<ExperimentHistory> {
    let prior = PolicyConfig {
        sigma_sq: cfg.baseline.prior_std * cfg.baseline.prior_std,
        learning_rate: 0.0,
        baseline_decay: cfg.policy.baseline_decay,
    };
    let policy = PolicyState::new(ParamVector::new(prior_mean(cfg)?)?, prior)?;
    policy_loop(cfg, env, policy, Protocol::RandomParams, observer)
}

fn policy_loop(
    cfg: &ExperimentConfig,
    env: &TaskEnv,
    mut policy: PolicyState,
    protocol: Protocol,
    observer: &mut Observer<'_>,
) -> Result<ExperimentHistory> {
    let k = cfg.rollouts;
    let mut models: Vec<Option<MtmState>> = vec![None; k];
    let mut amtm = cfg.amtm.enabled.then(|| Amtm {
        model: None,
        feed: cfg.amtm.feed,
    });
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for t in 0..cfg.iterations {
        let started = Instant::now();
        let iter_seed = seed::derive(cfg.seed, Stream::Iteration, t as u64);
        let step = || -> Result<(IterationRecord, PolicyState, Vec<Rollout>)> {
            let mut rng = rng_from(seed::derive(iter_seed, Stream::Policy, 0));
            let thetas = policy.sample_batch(k, &mut rng)?;
            let rollouts: Vec<Rollout> = thetas
                .par_iter()
                .enumerate()
                .map(|(i, theta)| {
                    run_rollout(
                        env,
                        DataSource::Sim(theta),
                        cfg.dataset_size,
                        &cfg.mtm,
                        models[i].as_ref(),
                        seed::derive(iter_seed, Stream::Rollout, i as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
            let batch = RolloutBatch::new(&policy, thetas, rewards)?;
            let next = policy.update(&batch)?;
            let record = IterationRecord {
                iteration: t,
                thetas: batch.thetas.iter().map(|th| th.values().to_vec()).collect(),
                rewards: batch.rewards.clone(),
                advantages: batch.advantages.clone(),
                baseline: batch.baseline_used,
                policy_mean: policy.mean().to_vec(),
                amtm_validation: None,
                amtm_test: None,
                best_so_far: 0.0,
                wall_time_secs: 0.0,
            };
            Ok((record, next, rollouts))
        };
        let (mut record, next, rollouts) = step().map_err(|e| e.at_iteration(t))?;
        if let Some(a) = amtm.as_mut() {
            let (v, s) = a
                .step(env, &cfg.mtm, &rollouts, seed::derive(iter_seed, Stream::Amtm, 0))
                .map_err(|e| e.at_iteration(t))?;
            record.amtm_validation = Some(v);
            record.amtm_test = Some(s);
        }
        let i = argmax(record.rewards.iter().copied());
        if record.rewards[i] > best.0 {
            best = (record.rewards[i], record.thetas[i].clone());
        }
        record.best_so_far = best.0;
        if cfg.mtm.mode == InitMode::Retain {
            for (slot, r) in models.iter_mut().zip(rollouts) {
                *slot = Some(r.model);
            }
        }
        policy = next;
        record.wall_time_secs = started.elapsed().as_secs_f64();
        observer(&record).map_err(|e| e.at_iteration(t))?;
        records.push(record);
    }
    Ok(ExperimentHistory {
        protocol,
        task: cfg.task,
        records,
        final_policy_mean: policy.mean().to_vec(),
        best_theta: best.1,
        best_reward: best.0,
        datasets_generated: cfg.iterations * k,
    })
}

/// `T` independent prior draws, each trained from scratch and validated; the
/// running best is kept. Each draw's baseline is the best reward before it.
pub fn run_random_search(
    cfg: &ExperimentConfig,
    env: &TaskEnv,
    observer: &mut Observer<'_>,
) -> Result<ExperimentHistory> {
    let center = prior_mean(cfg)?;
    let scratch = TrainConfig {
        mode: InitMode::Scratch,
        ..cfg.mtm
    };
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for t in 0..cfg.iterations {
        let started = Instant::now();
        let iter_seed = seed::derive(cfg.seed, Stream::Iteration, t as u64);
        let step = || -> Result<(Vec<f64>, f64)> {
            let theta = gaussian_around(
                &center,
                cfg.baseline.prior_std,
                seed::derive(iter_seed, Stream::Policy, 0),
            )?;
            let r = run_rollout(
                env,
                DataSource::Sim(&theta),
                cfg.dataset_size,
                &scratch,
                None,
                seed::derive(iter_seed, Stream::Rollout, 0),
            )?;
            if !r.reward.is_finite() {
                return Err(Error::NonFiniteReward {
                    index: 0,
                    value: r.reward,
                });
            }
            Ok((theta.into_inner(), r.reward))
        };
        let (theta, reward) = step().map_err(|e| e.at_iteration(t))?;
        let baseline = if t == 0 { reward } else { best.0 };
        if reward > best.0 {
            best = (reward, theta.clone());
        }
        let record = IterationRecord {
            iteration: t,
            thetas: vec![theta],
            rewards: vec![reward],
            advantages: vec![reward - baseline],
            baseline,
            policy_mean: center.clone(),
            amtm_validation: None,
            amtm_test: None,
            best_so_far: best.0,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        observer(&record).map_err(|e| e.at_iteration(t))?;
        records.push(record);
    }
    Ok(ExperimentHistory {
        protocol: Protocol::RandomSearch,
        task: cfg.task,
        records,
        final_policy_mean: center,
        best_theta: best.1,
        best_reward: best.0,
        datasets_generated: cfg.iterations,
    })
}

/// One dataset per iteration from a fixed source: the simulator at `theta`,
/// or the validation distribution itself when `theta` is `None`. In retain
/// mode the trained model carries over, and with AMTM tracking enabled it is
/// evaluated on the test set as well.
pub fn run_fixed_params(
    cfg: &ExperimentConfig,
    env: &TaskEnv,
    theta: Option<&ParamVector>,
    observer: &mut Observer<'_>,
) -> Result<ExperimentHistory> {
    let dim = env.sim.schema().total_dim();
    if let Some(th) = theta {
        if th.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "fixed parameters",
                expected: dim,
                actual: th.len(),
            });
        }
    }
    let theta_record: Vec<f64> = match theta {
        Some(th) => th.values().to_vec(),
        None => env.real_theta().map(|t| t.values().to_vec()).unwrap_or_default(),
    };
    let decay = cfg.policy.baseline_decay;
    let mut model: Option<MtmState> = None;
    let mut amtm = cfg.amtm.enabled.then(|| Amtm {
        model: None,
        feed: AmtmFeed::First,
    });
    let mut baseline: Option<f64> = None;
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut best = f64::NEG_INFINITY;
    for t in 0..cfg.iterations {
        let started = Instant::now();
        let iter_seed = seed::derive(cfg.seed, Stream::Iteration, t as u64);
        let source = match theta {
            Some(th) => DataSource::Sim(th),
            None => DataSource::Real,
        };
        let rollout = run_rollout(
            env,
            source,
            cfg.dataset_size,
            &cfg.mtm,
            model.as_ref(),
            seed::derive(iter_seed, Stream::Rollout, 0),
        )
        .map_err(|e| e.at_iteration(t))?;
        if !rollout.reward.is_finite() {
            return Err(Error::NonFiniteReward {
                index: 0,
                value: rollout.reward,
            }
            .at_iteration(t));
        }
        let reward = rollout.reward;
        let b = baseline.unwrap_or(reward);
        baseline = Some(decay * b + (1.0 - decay) * reward);
        best = best.max(reward);
        let mut record = IterationRecord {
            iteration: t,
            thetas: vec![theta_record.clone()],
            rewards: vec![reward],
            advantages: vec![reward - b],
            baseline: b,
            policy_mean: theta_record.clone(),
            amtm_validation: None,
            amtm_test: None,
            best_so_far: best,
            wall_time_secs: 0.0,
        };
        if let Some(a) = amtm.as_mut() {
            if cfg.mtm.mode == InitMode::Retain {
                // The trained model already is the accumulated one.
                record.amtm_validation = Some(reward);
                record.amtm_test = Some(mtm::evaluate(&rollout.model, &env.test).map_err(|e| e.at_iteration(t))?);
            } else {
                let (v, s) = a
                    .step(
                        env,
                        &cfg.mtm,
                        std::slice::from_ref(&rollout),
                        seed::derive(iter_seed, Stream::Amtm, 0),
                    )
                    .map_err(|e| e.at_iteration(t))?;
                record.amtm_validation = Some(v);
                record.amtm_test = Some(s);
            }
        }
        if cfg.mtm.mode == InitMode::Retain {
            model = Some(rollout.model);
        }
        record.wall_time_secs = started.elapsed().as_secs_f64();
        observer(&record).map_err(|e| e.at_iteration(t))?;
        records.push(record);
    }
    Ok(ExperimentHistory {
        protocol: if theta.is_some() {
            Protocol::FixedParams
        } else {
            Protocol::ValidationParams
        },
        task: cfg.task,
        records,
        final_policy_mean: theta_record.clone(),
        best_theta: theta_record,
        best_reward: best,
        datasets_generated: cfg.iterations,
    })
}

/// Outcome numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub protocol: Protocol,
    pub task: Task,
    pub seed: u64,
    pub iterations: usize,
    /// Mean validation reward of the last iteration.
    pub last_reward: f64,
    /// Mean validation reward averaged over the trailing window.
    pub final_reward: f64,
    pub best_reward: f64,
    pub best_theta: Vec<f64>,
    pub final_policy_mean: Vec<f64>,
    pub final_amtm_validation: Option<f64>,
    pub final_amtm_test: Option<f64>,
    /// Test reward of a fresh model trained on data from the final
    /// parameters (see [`final_parameters`]).
    pub retrain_test_reward: f64,
    /// See [`final_validation_reward`].
    pub final_validation_reward: f64,
    pub datasets_generated: usize,
}

/// The parameters a run "ends with": the policy mean for LTS, the best draw
/// for random search and random parameters, the fixed setting otherwise.
pub fn final_parameters(history: &ExperimentHistory) -> Option<Vec<f64>> {
    match history.protocol {
        Protocol::Lts => Some(history.final_policy_mean.clone()),
        Protocol::RandomSearch | Protocol::RandomParams => Some(history.best_theta.clone()),
        Protocol::FixedParams => Some(history.final_policy_mean.clone()),
        Protocol::ValidationParams => None,
    }
}

/// Train a fresh model on a larger dataset drawn at the run's final
/// parameters and report its test reward.
pub fn retrain_test_reward(cfg: &ExperimentConfig, env: &TaskEnv, history: &ExperimentHistory) -> Result<f64> {
    let n = cfg.evaluation.retrain_size;
    let epochs = cfg.evaluation.retrain_epochs;
    fresh_model_reward(cfg, env, history, n, epochs, 0, &env.test)
}

/// Validation reward of a fresh model trained at the run's final parameters
/// with the run's own dataset size and epoch count. Unlike the best reward
/// of a search, this is a single unselected estimate for every protocol.
pub fn final_validation_reward(cfg: &ExperimentConfig, env: &TaskEnv, history: &ExperimentHistory) -> Result<f64> {
    fresh_model_reward(cfg, env, history, cfg.dataset_size, cfg.mtm.epochs, 1, &env.validation)
}

fn fresh_model_reward(
    cfg: &ExperimentConfig,
    env: &TaskEnv,
    history: &ExperimentHistory,
    n: usize,
    epochs: usize,
    index: u64,
    eval: &LabeledDataset,
) -> Result<f64> {
    let seed = seed::derive(cfg.seed, Stream::Retrain, index);
    let train_cfg = TrainConfig {
        epochs,
        mode: InitMode::Scratch,
        ..cfg.mtm
    };
    let data = match final_parameters(history) {
        Some(theta) if !theta.is_empty() => sim::generate(&env.sim, &ParamVector::new(theta)?, n, seed)?,
        _ => env.sample_real(n, seed)?,
    };
    let model = mtm::train(
        None,
        &env.mtm,
        &data,
        &train_cfg,
        seed::derive(seed, Stream::ModelInit, 0),
    )?;
    mtm::evaluate(&model, eval)
}

pub fn summarize(cfg: &ExperimentConfig, env: &TaskEnv, history: &ExperimentHistory) -> Result<Summary> {
    let rewards = history.mean_rewards();
    let last = history.records.last();
    Ok(Summary {
        name: cfg.name.clone(),
        protocol: history.protocol,
        task: history.task,
        seed: cfg.seed,
        iterations: history.records.len(),
        last_reward: *rewards.last().unwrap_or(&f64::NAN),
        final_reward: stats::tail_mean(&rewards, cfg.evaluation.final_window),
        best_reward: history.best_reward,
        best_theta: history.best_theta.clone(),
        final_policy_mean: history.final_policy_mean.clone(),
        final_amtm_validation: last.and_then(|r| r.amtm_validation),
        final_amtm_test: last.and_then(|r| r.amtm_test),
        retrain_test_reward: retrain_test_reward(cfg, env, history)?,
        final_validation_reward: final_validation_reward(cfg, env, history)?,
        datasets_generated: history.datasets_generated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(task);
        cfg.iterations = 3;
        cfg.rollouts = 2;
        cfg.dataset_size = 20;
        cfg.mtm.epochs = 2;
        cfg.gmm.validation_size = 40;
        cfg.gmm.test_size = 40;
        cfg.traffic.validation_size = 20;
        cfg.traffic.test_size = 20;
        cfg.traffic.hidden = 8;
        cfg.evaluation.retrain_size = 20;
        cfg.evaluation.retrain_epochs = 1;
        cfg
    }

    #[test]
    fn frozen_policy_keeps_its_mean() {
        let mut cfg = small(Task::Gmm);
        cfg.iterations = 1;
        cfg.rollouts = 1;
        cfg.policy.sigma_sq = 0.0;
        cfg.policy.learning_rate = 0.0;
        let h = run(&cfg).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.final_policy_mean, h.records[0].policy_mean);
        assert_eq!(h.records[0].thetas[0], h.records[0].policy_mean);
    }

    #[test]
    fn dataset_counts_follow_protocol() {
        for (protocol, per_iter) in [
            (Protocol::Lts, 2),
            (Protocol::RandomParams, 2),
            (Protocol::RandomSearch, 1),
            (Protocol::ValidationParams, 1),
        ] {
            let mut cfg = small(Task::Gmm);
            cfg.protocol = protocol;
            cfg.amtm.enabled = true;
            let h = run(&cfg).unwrap();
            assert_eq!(h.records.len(), 3);
            assert_eq!(h.datasets_generated, 3 * per_iter, "{protocol:?}");
            assert!(h.amtm_test().is_some() || protocol == Protocol::RandomSearch);
        }
    }

    #[test]
    fn advantages_replay_from_history() {
        let mut cfg = small(Task::Traffic);
        cfg.policy.learning_rate = 1.0;
        let h = run(&cfg).unwrap();
        for r in &h.records {
            for (a, rew) in r.advantages.iter().zip(&r.rewards) {
                assert_eq!(*a, rew - r.baseline);
            }
        }
        // The baseline recursion is replayable too.
        let decay = cfg.policy.baseline_decay;
        for w in h.records.windows(2) {
            let expected = decay * w[0].baseline + (1.0 - decay) * w[0].mean_reward();
            assert!((w[1].baseline - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_carry_the_iteration() {
        let cfg = small(Task::Traffic);
        let env = TaskEnv::from_config(&cfg).unwrap();
        let mut calls = 0;
        let err = run_in(&cfg, &env, &mut |_| {
            calls += 1;
            if calls == 2 {
                Err(Error::Validation("stop".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Iteration { iteration: 1, .. }), "{err}");
    }

    #[test]
    fn csv_has_one_row_per_iteration() {
        let cfg = small(Task::Gmm);
        let h = run(&cfg).unwrap();
        let mut out = Vec::new();
        write_history_csv(&mut out, &h).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let cols = CSV_HEADER.split(',').count();
        for l in &lines {
            assert_eq!(l.split(',').count(), cols);
        }
    }
}
