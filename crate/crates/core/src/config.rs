//! Experiment configuration.
//!
//! Configs are TOML files with flat sections mirroring the modules. Every
//! field except `task` has a default. Command-line overrides use dotted keys
//! (`policy.learning_rate=2.0`); the right-hand side is parsed as a TOML value
//! and falls back to a bare string.
//!
//! ```toml
//! name = "gmm_lts"
//! task = "gmm"              # gmm | traffic
//! protocol = "lts"          # lts | random_params | random_search | fixed_params | validation_params
//! seed = 0
//! iterations = 200          # T
//! rollouts = 4              # K
//! dataset_size = 200        # M
//!
//! [policy]
//! sigma_sq = 0.05
//! learning_rate = 0.01
//! baseline_decay = 0.9
//! init = "standard"         # standard | adversarial
//! init_scale = 0.5
//!
//! [mtm]
//! epochs = 20               # ξ
//! batch_size = 32
//! step_size = 0.5
//! mode = "scratch"          # scratch | retain
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mtm::{InitMode, MtmSpec, TrainConfig};
use crate::param_space::{BlockKind, ParamSchema};
use crate::policy::PolicyConfig;
use crate::sim::gmm::{self, GaussianComponent, GmmWorld};
use crate::sim::traffic::{self, NoiseModel, TrafficSim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Gmm,
    Traffic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Policy-gradient learning of the simulator parameters.
    #[default]
    Lts,
    /// Fresh draws from a wide prior every iteration, no learning.
    RandomParams,
    /// Independent prior draws, each trained and validated; keep the best.
    RandomSearch,
    /// One fixed parameter vector (`baseline.fixed_theta`) every iteration.
    FixedParams,
    /// Data drawn from the distribution the validation set comes from.
    ValidationParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    /// `init_mean + init_scale · N(0, I)`.
    #[default]
    Standard,
    /// Task-specific deliberately poor starting point.
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AmtmFeed {
    /// Dataset of the highest-reward rollout of the iteration.
    #[default]
    Best,
    /// All K datasets of the iteration.
    All,
    /// Dataset of the first rollout, without selection.
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub sigma_sq: f64,
    pub learning_rate: f64,
    pub baseline_decay: f64,
    pub init: PolicyInit,
    pub init_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<Vec<f64>>,
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = PolicyConfig::default();
        Self {
            sigma_sq: p.sigma_sq,
            learning_rate: p.learning_rate,
            baseline_decay: p.baseline_decay,
            init: PolicyInit::Standard,
            init_scale: 0.5,
            init_mean: None,
        }
    }
}

impl PolicySection {
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            sigma_sq: self.sigma_sq,
            learning_rate: self.learning_rate,
            baseline_decay: self.baseline_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmtmSection {
    pub enabled: bool,
    pub feed: AmtmFeed,
}

impl Default for AmtmSection {
    fn default() -> Self {
        Self {
            enabled: false,
            feed: AmtmFeed::Best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Standard deviation of the random-parameter / random-search prior.
    pub prior_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_theta: Option<Vec<f64>>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            prior_std: 1.0,
            prior_mean: None,
            fixed_theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Seed of the frozen validation and test sets.
    pub data_seed: u64,
    /// Dataset size used when retraining from final parameters.
    pub retrain_size: usize,
    pub retrain_epochs: usize,
    /// Fraction of trailing iterations averaged into "final" rewards.
    pub final_window: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            data_seed: 7919,
            retrain_size: 400,
            retrain_epochs: 20,
            final_window: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub class0: Vec<GaussianComponent>,
    pub class1: Vec<GaussianComponent>,
    pub prior_class1: f64,
    pub sim_components: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub max_support: usize,
}

impl Default for GmmSection {
    fn default() -> Self {
        let [class0, class1] = gmm::standard_components();
        Self {
            class0,
            class1,
            prior_class1: 0.5,
            sim_components: 2,
            validation_size: 500,
            test_size: 1000,
            gamma: 0.5,
            lambda: 1e-3,
            max_support: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub schema_preset: String,
    pub noise_stds: NoiseModel,
    pub validation_size: usize,
    pub test_size: usize,
    pub hidden: usize,
    /// Parameters of the validation/test distribution; defaults to the
    /// built-in preset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_theta: Option<Vec<f64>>,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            schema_preset: traffic::SCHEMA_PRESET.into(),
            noise_stds: NoiseModel::default(),
            validation_size: 500,
            test_size: 1000,
            hidden: 64,
            real_theta: None,
        }
    }
}

/// One schema block as written in a config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub name: String,
    pub kind: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub task: Task,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub mtm: TrainConfig,
    #[serde(default)]
    pub amtm: AmtmSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub gmm: GmmSection,
    #[serde(default)]
    pub traffic: TrafficSection,
    /// Optional explicit statement of the parameter schema; checked against
    /// the simulator's schema when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Vec<BlockSpec>>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_iterations() -> usize {
    200
}
fn default_rollouts() -> usize {
    4
}
fn default_dataset_size() -> usize {
    200
}

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Defaults for `task` with every other field at its default.
    pub fn new(task: Task) -> Self {
        Self {
            name: default_name(),
            task,
            protocol: Protocol::default(),
            seed: 0,
            iterations: default_iterations(),
            rollouts: default_rollouts(),
            dataset_size: default_dataset_size(),
            policy: PolicySection::default(),
            mtm: TrainConfig::default(),
            amtm: AmtmSection::default(),
            baseline: BaselineSection::default(),
            evaluation: EvaluationSection::default(),
            gmm: GmmSection::default(),
            traffic: TrafficSection::default(),
            schema: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parse `text` and apply `key=value` overrides before validation.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| field_err(&error_field(e.message()), e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| field_err(&error_field(e.message()), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialized form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            return Err(field_err("seed", "must fit in a signed 64-bit integer"));
        }
        if self.evaluation.data_seed > i64::MAX as u64 {
            return Err(field_err("evaluation.data_seed", "must fit in a signed 64-bit integer"));
        }
        if self.iterations == 0 {
            return Err(field_err("iterations", "must be at least 1"));
        }
        if self.rollouts == 0 {
            return Err(field_err("rollouts", "must be at least 1"));
        }
        if self.dataset_size == 0 {
            return Err(field_err("dataset_size", "must be at least 1"));
        }
        self.policy
            .policy_config()
            .validate()
            .map_err(|e| field_err("policy", e.to_string()))?;
        if !(self.policy.init_scale >= 0.0) {
            return Err(field_err("policy.init_scale", "must be non-negative"));
        }
        self.mtm.validate().map_err(|e| field_err("mtm", e.to_string()))?;
        if !(self.baseline.prior_std >= 0.0) {
            return Err(field_err("baseline.prior_std", "must be non-negative"));
        }
        if self.evaluation.retrain_size == 0 || self.evaluation.retrain_epochs == 0 {
            return Err(field_err("evaluation", "retrain size and epochs must be at least 1"));
        }
        if !(self.evaluation.final_window > 0.0 && self.evaluation.final_window <= 1.0) {
            return Err(field_err("evaluation.final_window", "must lie in (0, 1]"));
        }
        if self.protocol == Protocol::FixedParams && self.baseline.fixed_theta.is_none() {
            return Err(field_err(
                "baseline.fixed_theta",
                "required by the fixed_params protocol",
            ));
        }
        match self.task {
            Task::Gmm => {
                if self.gmm.sim_components == 0 {
                    return Err(field_err("gmm.sim_components", "must be at least 1"));
                }
                if self.gmm.validation_size == 0 || self.gmm.test_size == 0 {
                    return Err(field_err("gmm", "validation and test sets must be non-empty"));
                }
                if self.policy.init == PolicyInit::Adversarial {
                    return Err(field_err("policy.init", "the gmm task has no adversarial preset"));
                }
            }
            Task::Traffic => {
                if self.traffic.schema_preset != traffic::SCHEMA_PRESET {
                    return Err(field_err(
                        "traffic.schema_preset",
                        format!("unknown preset `{}`", self.traffic.schema_preset),
                    ));
                }
                if self.traffic.validation_size == 0 || self.traffic.test_size == 0 {
                    return Err(field_err("traffic", "validation and test sets must be non-empty"));
                }
                if self.traffic.noise_stds.0.iter().any(|s| !(*s >= 0.0)) {
                    return Err(field_err("traffic.noise_stds", "must be non-negative"));
                }
            }
        }
        let dim = self.schema_for_task()?.total_dim();
        for (field, v) in [
            ("policy.init_mean", &self.policy.init_mean),
            ("baseline.prior_mean", &self.baseline.prior_mean),
            ("baseline.fixed_theta", &self.baseline.fixed_theta),
            ("traffic.real_theta", &self.traffic.real_theta),
        ] {
            if let Some(v) = v {
                if field == "traffic.real_theta" && self.task != Task::Traffic {
                    continue;
                }
                if v.len() != dim {
                    return Err(field_err(field, format!("expected {dim} values, got {}", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(field_err(field, "values must be finite"));
                }
            }
        }
        if let Some(blocks) = &self.schema {
            check_schema_spec(blocks, &self.schema_for_task()?)?;
        }
        Ok(())
    }

    pub fn gmm_world(&self) -> Result<GmmWorld> {
        GmmWorld::new(
            [self.gmm.class0.clone(), self.gmm.class1.clone()],
            self.gmm.prior_class1,
            self.gmm.sim_components,
        )
        .map_err(|e| field_err("gmm", e.to_string()))
    }

    pub fn traffic_sim(&self) -> TrafficSim {
        TrafficSim::new(self.traffic.noise_stds)
    }

    pub fn schema_for_task(&self) -> Result<ParamSchema> {
        Ok(match self.task {
            Task::Gmm => self.gmm_world()?.sim_schema().clone(),
            Task::Traffic => traffic::schema(),
        })
    }

    pub fn mtm_spec(&self) -> MtmSpec {
        match self.task {
            Task::Gmm => MtmSpec::KernelClassifier {
                gamma: self.gmm.gamma,
                lambda: self.gmm.lambda,
                max_support: self.gmm.max_support,
            },
            Task::Traffic => MtmSpec::CountRegressor {
                hidden: self.traffic.hidden,
            },
        }
    }

    pub fn is_retain(&self) -> bool {
        self.mtm.mode == InitMode::Retain
    }
}

fn check_schema_spec(blocks: &[BlockSpec], schema: &ParamSchema) -> Result<()> {
    if blocks.len() != schema.blocks().len() {
        return Err(field_err(
            "schema",
            format!("expected {} blocks, got {}", schema.blocks().len(), blocks.len()),
        ));
    }
    for (spec, block) in blocks.iter().zip(schema.blocks()) {
        let kind = match block.kind {
            BlockKind::Categorical { .. } => "categorical",
            BlockKind::Bernoulli => "bernoulli",
            BlockKind::GaussianMean { .. } => "gaussian_mean",
            BlockKind::GaussianVariance { .. } => "gaussian_variance",
        };
        if spec.name != block.name || spec.kind != kind || spec.size != block.width {
            return Err(field_err(
                "schema",
                format!(
                    "block `{}` ({} × {}) does not match simulator block `{}` ({} × {})",
                    spec.name, spec.kind, spec.size, block.name, kind, block.width
                ),
            ));
        }
    }
    Ok(())
}

/// Best-effort extraction of the offending field name from a serde message.
fn error_field(message: &str) -> String {
    for marker in ["missing field `", "unknown field `", "unknown variant `"] {
        if let Some(start) = message.find(marker) {
            let rest = &message[start + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    "<config>".into()
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| field_err(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| field_err(key, "empty override key"))?;
    let mut cursor = table;
    for part in parts {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| field_err(key, format!("`{part}` is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
