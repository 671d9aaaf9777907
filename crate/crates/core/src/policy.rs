//! Gaussian sampling policy over simulator parameters.
//!
//! The policy is `N(mean, sigma_sq * I)` with a fixed isotropic variance;
//! only the mean is learned. Updates follow the score-function estimator
//!
//! ```text
//! grad ≈ 1/K Σ_k (θ_k − mean) / sigma_sq · (R_k − b)
//! ```
//!
//! with `b` an exponential moving average of past mean rewards.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Fixed exploration variance of every coordinate.
    pub sigma_sq: f64,
    pub learning_rate: f64,
    /// EMA decay of the reward baseline, in `[0, 1)`.
    pub baseline_decay: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            sigma_sq: 0.05,
            learning_rate: 0.01,
            baseline_decay: 0.9,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_sq must be finite and non-negative, got {}",
                self.sigma_sq
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::InvalidArgument(format!(
                "baseline_decay must lie in [0, 1), got {}",
                self.baseline_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    mean: Vec<f64>,
    sigma_sq: f64,
    /// `None` until the first update; the first batch then uses its own mean
    /// reward as baseline.
    baseline: Option<f64>,
    baseline_decay: f64,
    learning_rate: f64,
    iteration: usize,
}

impl PolicyState {
    pub fn new(mean: ParamVector, config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            mean: mean.into_inner(),
            sigma_sq: config.sigma_sq,
            baseline: None,
            baseline_decay: config.baseline_decay,
            learning_rate: config.learning_rate,
            iteration: 0,
        })
    }

    /// Start from an explicit baseline instead of the first batch mean.
    pub fn with_baseline(mut self, baseline: f64) -> Self {
        self.baseline = Some(baseline);
        self
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_vector(&self) -> ParamVector {
        ParamVector::new(self.mean.clone()).expect("policy mean stays finite")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn baseline_decay(&self) -> f64 {
        self.baseline_decay
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draw `k` i.i.d. parameter vectors from the policy.
    pub fn sample_batch<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<ParamVector>> {
        if k == 0 {
            return Err(Error::InvalidArgument("cannot sample an empty batch".into()));
        }
        let sigma = self.sigma_sq.sqrt();
        (0..k)
            .map(|_| {
                let values = self
                    .mean
                    .iter()
                    .map(|&m| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + sigma * z
                    })
                    .collect();
                ParamVector::new(values)
            })
            .collect()
    }

    /// `∇_mean log N(theta; mean, sigma_sq I) = (theta − mean) / sigma_sq`.
    pub fn score_gradient(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        self.check_dim(theta, "score_gradient")?;
        Ok(theta
            .values()
            .iter()
            .zip(&self.mean)
            .map(|(t, m)| (t - m) / self.sigma_sq)
            .collect())
    }

    pub fn log_density(&self, theta: &ParamVector) -> Result<f64> {
        self.check_dim(theta, "log_density")?;
        let sq: f64 = theta
            .values()
            .iter()
            .zip(&self.mean)
            .map(|(t, m)| (t - m) * (t - m))
            .sum();
        let d = self.mean.len() as f64;
        Ok(-0.5 * sq / self.sigma_sq - 0.5 * d * (2.0 * std::f64::consts::PI * self.sigma_sq).ln())
    }

    /// One ascent step on the expected reward followed by the baseline update.
    pub fn update(&self, batch: &RolloutBatch) -> Result<PolicyState> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("cannot update from an empty batch".into()));
        }
        if let Some((index, &value)) = batch.rewards.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            return Err(Error::NonFiniteReward { index, value });
        }
        let k = batch.len() as f64;
        let mut step = vec![0.0; self.mean.len()];
        // A zero learning rate freezes the mean even when sigma_sq is zero.
        let thetas = if self.learning_rate == 0.0 {
            &[][..]
        } else {
            &batch.thetas[..]
        };
        for (theta, &advantage) in thetas.iter().zip(&batch.advantages) {
            let score = self.score_gradient(theta)?;
            for (s, g) in step.iter_mut().zip(score) {
                *s += g * advantage;
            }
        }
        let mean = self
            .mean
            .iter()
            .zip(&step)
            .map(|(m, s)| m + self.learning_rate * s / k)
            .collect();
        let reward_mean = batch.rewards.iter().sum::<f64>() / k;
        let baseline = self.baseline_decay * batch.baseline_used + (1.0 - self.baseline_decay) * reward_mean;
        Ok(PolicyState {
            mean,
            baseline: Some(baseline),
            iteration: self.iteration + 1,
            ..self.clone()
        })
    }

    fn check_dim(&self, theta: &ParamVector, context: &'static str) -> Result<()> {
        if theta.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.mean.len(),
                actual: theta.len(),
            });
        }
        Ok(())
    }
}

/// The K sampled parameter vectors of one iteration with their rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub thetas: Vec<ParamVector>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Baseline in effect before this batch's update.
    pub baseline_used: f64,
}

impl RolloutBatch {
    /// Pair thetas with rewards and compute advantages against the policy's
    /// current baseline.
    pub fn new(policy: &PolicyState, thetas: Vec<ParamVector>, rewards: Vec<f64>) -> Result<Self> {
        if thetas.len() != rewards.len() {
            return Err(Error::DimensionMismatch {
                context: "rollout batch",
                expected: thetas.len(),
                actual: rewards.len(),
            });
        }
        if thetas.is_empty() {
            return Err(Error::InvalidArgument("empty rollout batch".into()));
        }
        if let Some((index, &value)) = rewards.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            return Err(Error::NonFiniteReward { index, value });
        }
        let baseline_used = policy
            .baseline()
            .unwrap_or_else(|| rewards.iter().sum::<f64>() / rewards.len() as f64);
        let advantages = rewards.iter().map(|r| r - baseline_used).collect();
        Ok(Self {
            thetas,
            rewards,
            advantages,
            baseline_used,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}
