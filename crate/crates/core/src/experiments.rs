//! Named experiment presets.
//!
//! A preset is a matrix of labelled variants, each run over a list of seeds.
//! Running one yields per-run [`RunOutcome`]s and a comparison table with one
//! row per variant.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PolicyInit, Protocol, Task};
use crate::error::{Error, Result};
use crate::orchestrator::{self, ExperimentHistory, Summary, TaskEnv};
use crate::stats;

pub const PRESETS: [&str; 7] = [
    "toy_gmm",
    "toy_gmm_1comp",
    "traffic_lts",
    "traffic_adversarial",
    "traffic_epoch_ablation",
    "traffic_M_ablation",
    "seeds_repro",
];

/// GMM task with the tuned LTS settings and `components` simulator
/// components per class.
pub fn gmm_config(components: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Task::Gmm);
    cfg.name = format!("gmm_{components}comp");
    cfg.gmm.sim_components = components;
    cfg.iterations = 200;
    cfg.rollouts = 4;
    cfg.dataset_size = 200;
    cfg.mtm.epochs = 20;
    cfg.policy.sigma_sq = 0.5;
    cfg.policy.learning_rate = 2.0;
    cfg.policy.init_scale = 1.0;
    // Start with broad components: mean 0, variance logits 2.
    cfg.policy.init_mean = Some((0..2 * components).flat_map(|_| [0.0, 0.0, 2.0, 2.0]).collect());
    cfg
}

/// Traffic counting task with the tuned LTS settings.
pub fn traffic_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Task::Traffic);
    cfg.name = "traffic".into();
    cfg.iterations = 100;
    cfg.rollouts = 4;
    cfg.dataset_size = 200;
    cfg.mtm.epochs = 20;
    cfg.mtm.step_size = 0.01;
    cfg.traffic.hidden = 16;
    cfg.policy.sigma_sq = 0.05;
    cfg.policy.learning_rate = 0.5;
    cfg.amtm.enabled = true;
    cfg
}

fn with_protocol(mut cfg: ExperimentConfig, protocol: Protocol) -> ExperimentConfig {
    cfg.protocol = protocol;
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: ExperimentConfig,
}

impl Variant {
    fn new(label: impl Into<String>, config: ExperimentConfig) -> Self {
        let label = label.into();
        let mut config = config;
        config.name = label.replace(' ', "_");
        Self { label, config }
    }
}

/// Which number of a run a preset's table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Test reward of a model retrained at the final parameters.
    RetrainTest,
    /// Trailing mean of the per-iteration mean validation reward.
    FinalReward,
    /// Trailing mean of the accumulated model's test reward.
    AmtmTest,
    /// Validation reward of a fresh model trained at the final parameters.
    FinalValidation,
    /// Trailing mean of the accumulated model's validation reward.
    AmtmValidation,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::RetrainTest => "retrain_test_reward",
            Metric::FinalReward => "final_reward",
            Metric::AmtmTest => "amtm_test_reward",
            Metric::FinalValidation => "final_validation_reward",
            Metric::AmtmValidation => "amtm_validation_reward",
        }
    }

    pub fn of(self, outcome: &RunOutcome) -> f64 {
        match self {
            Metric::RetrainTest => outcome.summary.retrain_test_reward,
            Metric::FinalReward => outcome.final_reward(),
            Metric::AmtmTest => outcome.amtm_test_tail().unwrap_or(f64::NAN),
            Metric::FinalValidation => outcome.summary.final_validation_reward,
            Metric::AmtmValidation => outcome.amtm_validation_tail().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetPlan {
    pub name: String,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metric>,
}

pub fn plan(name: &str) -> Result<PresetPlan> {
    let (variants, seeds, metrics) = match name {
        "toy_gmm" => (
            vec![
                Variant::new("1 gaussian", gmm_config(1)),
                Variant::new("2 gaussians", gmm_config(2)),
                Variant::new("val params", with_protocol(gmm_config(2), Protocol::ValidationParams)),
            ],
            vec![0, 1, 2],
            vec![Metric::RetrainTest, Metric::FinalReward],
        ),
        "toy_gmm_1comp" => (
            vec![Variant::new("1 gaussian", gmm_config(1))],
            vec![0, 1, 2],
            vec![Metric::RetrainTest, Metric::FinalReward],
        ),
        "traffic_lts" => (
            vec![
                Variant::new("lts", traffic_config()),
                Variant::new("random params", with_protocol(traffic_config(), Protocol::RandomParams)),
                Variant::new("random search", with_protocol(traffic_config(), Protocol::RandomSearch)),
                Variant::new(
                    "val params",
                    with_protocol(traffic_config(), Protocol::ValidationParams),
                ),
            ],
            vec![0, 1, 2, 3, 4],
            vec![
                Metric::AmtmTest,
                Metric::FinalValidation,
                Metric::FinalReward,
                Metric::RetrainTest,
            ],
        ),
        "traffic_adversarial" => {
            let mut adv = traffic_config();
            adv.policy.init = PolicyInit::Adversarial;
            (
                vec![
                    Variant::new("standard init", traffic_config()),
                    Variant::new("adversarial init", adv),
                ],
                vec![0, 1, 2],
                vec![Metric::FinalReward, Metric::AmtmTest],
            )
        }
        "traffic_epoch_ablation" => (
            [1, 3, 7, 10]
                .into_iter()
                .map(|xi| {
                    let mut cfg = traffic_config();
                    cfg.mtm.epochs = xi;
                    Variant::new(format!("epochs {xi}"), cfg)
                })
                .collect(),
            vec![0],
            vec![Metric::AmtmValidation, Metric::FinalReward, Metric::RetrainTest],
        ),
        "traffic_M_ablation" => (
            [20, 50, 100, 200]
                .into_iter()
                .map(|m| {
                    let mut cfg = traffic_config();
                    cfg.dataset_size = m;
                    Variant::new(format!("M {m}"), cfg)
                })
                .collect(),
            vec![0],
            vec![Metric::RetrainTest, Metric::FinalReward],
        ),
        "seeds_repro" => (
            vec![Variant::new("lts", traffic_config())],
            vec![0, 1, 2],
            vec![Metric::FinalReward, Metric::AmtmTest],
        ),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(PresetPlan {
        name: name.to_string(),
        variants,
        seeds,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub history: ExperimentHistory,
}

impl RunOutcome {
    pub fn final_reward(&self) -> f64 {
        self.summary.final_reward
    }

    pub fn amtm_test_tail(&self) -> Option<f64> {
        let a = self.history.amtm_test()?;
        Some(stats::tail_mean(&a, self.config.evaluation.final_window))
    }

    pub fn amtm_validation_tail(&self) -> Option<f64> {
        let a = self.history.amtm_validation()?;
        Some(stats::tail_mean(&a, self.config.evaluation.final_window))
    }

    /// First iteration at which the 5-iteration trailing average of the mean
    /// reward reaches `level`.
    pub fn iterations_to(&self, level: f64) -> Option<usize> {
        let smooth = stats::moving_average(&self.history.mean_rewards(), 5);
        stats::first_reaching(&smooth, level)
    }
}

/// Run one configuration with the given seed, including the summary.
pub fn run_one(label: &str, config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let mut config = config.clone();
    config.seed = seed;
    let env = TaskEnv::from_config(&config)?;
    let history = orchestrator::run_in(&config, &env, &mut |_| Ok(()))?;
    let summary = orchestrator::summarize(&config, &env, &history)?;
    Ok(RunOutcome {
        label: label.to_string(),
        seed,
        config,
        summary,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub metric: Metric,
    pub values: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetReport {
    pub name: String,
    pub seeds: Vec<u64>,
    pub outcomes: Vec<RunOutcome>,
    pub rows: Vec<TableRow>,
}

impl PresetReport {
    pub fn outcomes_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RunOutcome> + 'a {
        self.outcomes.iter().filter(move |o| o.label == label)
    }

    pub fn row(&self, label: &str, metric: Metric) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label && r.metric == metric)
    }

    /// Tidy CSV: one line per variant and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("preset,variant,metric,median,mean,std,values\n");
        for r in &self.rows {
            let values: Vec<String> = r.values.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{}",
                self.name,
                r.label,
                r.metric.name(),
                r.median,
                r.mean,
                r.std,
                values.join(";")
            );
        }
        out
    }

    /// Fixed-width text table of medians.
    pub fn to_text(&self) -> String {
        let metrics: Vec<Metric> = {
            let mut m: Vec<Metric> = Vec::new();
            for r in &self.rows {
                if !m.contains(&r.metric) {
                    m.push(r.metric);
                }
            }
            m
        };
        let labels: Vec<&str> = {
            let mut l: Vec<&str> = Vec::new();
            for r in &self.rows {
                if !l.contains(&r.label.as_str()) {
                    l.push(&r.label);
                }
            }
            l
        };
        let mut out = format!("{} (median over seeds {:?})\n", self.name, self.seeds);
        let _ = write!(out, "{:<20}", "variant");
        for m in &metrics {
            let _ = write!(out, " {:>24}", m.name());
        }
        out.push('\n');
        for l in labels {
            let _ = write!(out, "{l:<20}");
            for m in &metrics {
                match self.row(l, *m) {
                    Some(r) => {
                        let _ = write!(out, " {:>24.4}", r.median);
                    }
                    None => {
                        let _ = write!(out, " {:>24}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn table(plan: &PresetPlan, outcomes: &[RunOutcome]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for v in &plan.variants {
        for &metric in &plan.metrics {
            let values: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.label == v.label)
                .map(|o| metric.of(o))
                .collect();
            if values.is_empty() || values.iter().any(|x| x.is_nan()) {
                continue;
            }
            rows.push(TableRow {
                label: v.label.clone(),
                metric,
                median: stats::median(&values),
                mean: stats::mean(&values),
                std: stats::std_dev(&values),
                values,
            });
        }
    }
    rows
}

/// Run every variant of `plan` for every seed, calling `progress` after each
/// run.
pub fn run_plan(plan: &PresetPlan, progress: &mut dyn FnMut(&RunOutcome)) -> Result<PresetReport> {
    let mut outcomes = Vec::new();
    for v in &plan.variants {
        for &seed in &plan.seeds {
            let o = run_one(&v.label, &v.config, seed)?;
            progress(&o);
            outcomes.push(o);
        }
    }
    let rows = table(plan, &outcomes);
    Ok(PresetReport {
        name: plan.name.clone(),
        seeds: plan.seeds.clone(),
        outcomes,
        rows,
    })
}

/// Shorten every variant of a plan, e.g. for smoke tests.
pub fn shorten(plan: &mut PresetPlan, iterations: usize) {
    for v in &mut plan.variants {
        v.config.iterations = iterations;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_plans_valid_configs() {
        for name in PRESETS {
            let p = plan(name).unwrap();
            assert!(!p.variants.is_empty() && !p.seeds.is_empty());
            for v in &p.variants {
                v.config.validate().unwrap();
            }
        }
        assert!(plan("nope").is_err());
    }

    #[test]
    fn ablation_grids() {
        let p = plan("traffic_M_ablation").unwrap();
        let ms: Vec<usize> = p.variants.iter().map(|v| v.config.dataset_size).collect();
        assert_eq!(ms, [20, 50, 100, 200]);
        let p = plan("traffic_epoch_ablation").unwrap();
        let xs: Vec<usize> = p.variants.iter().map(|v| v.config.mtm.epochs).collect();
        assert_eq!(xs, [1, 3, 7, 10]);
        let p = plan("toy_gmm").unwrap();
        let labels: Vec<&str> = p.variants.iter().map(|v| v.label.as_str()).collect();
        assert_eq!(labels, ["1 gaussian", "2 gaussians", "val params"]);
    }

    #[test]
    fn short_plan_produces_a_table() {
        let mut p = plan("toy_gmm").unwrap();
        shorten(&mut p, 2);
        p.seeds = vec![0];
        for v in &mut p.variants {
            v.config.gmm.validation_size = 50;
            v.config.gmm.test_size = 50;
            v.config.evaluation.retrain_size = 50;
        }
        let mut n = 0;
        let report = run_plan(&p, &mut |_| n += 1).unwrap();
        assert_eq!(n, 3);
        assert_eq!(report.rows.len(), 6);
        assert!(report.to_text().contains("2 gaussians"));
        assert_eq!(report.to_csv().lines().count(), 7);
    }
}
