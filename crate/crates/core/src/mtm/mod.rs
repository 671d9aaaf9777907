//! Main task models: the learners trained on simulated data whose validation
//! performance is the policy's reward.

pub mod kernel;
pub mod mlp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, rng_from, Stream};
use crate::sim::{LabeledDataset, Labels, CAR_TYPES};

pub use kernel::KernelClassifier;
pub use mlp::CountRegressor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Re-initialize parameters before every training call.
    #[default]
    Scratch,
    /// Continue from the previous state.
    Retain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub mode: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            step_size: 0.5,
            mode: InitMode::Scratch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid step size {}", self.step_size)));
        }
        Ok(())
    }
}

/// Architecture and fixed hyperparameters of a main task model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum MtmSpec {
    KernelClassifier {
        gamma: f64,
        lambda: f64,
        max_support: usize,
    },
    CountRegressor {
        hidden: usize,
    },
}

impl MtmSpec {
    pub fn default_kernel() -> Self {
        MtmSpec::KernelClassifier {
            gamma: 0.5,
            lambda: 1e-3,
            max_support: 2000,
        }
    }

    pub fn default_regressor() -> Self {
        MtmSpec::CountRegressor { hidden: 64 }
    }

    /// A freshly initialized model for `n_features` inputs.
    pub fn fresh(&self, n_features: usize, seed: u64) -> Result<MtmState> {
        match *self {
            MtmSpec::KernelClassifier {
                gamma,
                lambda,
                max_support,
            } => Ok(MtmState::Kernel(KernelClassifier::new(
                gamma,
                lambda,
                n_features,
                max_support,
            )?)),
            MtmSpec::CountRegressor { hidden } => Ok(MtmState::Counter(CountRegressor::new(
                n_features,
                hidden,
                &mut rng_from(seed),
            )?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MtmState {
    Kernel(KernelClassifier),
    Counter(CountRegressor),
}

/// Train for `cfg.epochs` passes over `data`. In scratch mode (or without a
/// previous state) the model is initialized from `seed`; in retain mode
/// training continues from `previous`.
pub fn train(
    previous: Option<&MtmState>,
    spec: &MtmSpec,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<MtmState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut state = match (cfg.mode, previous) {
        (InitMode::Retain, Some(prev)) => prev.clone(),
        _ => spec.fresh(data.n_features(), seed::derive(seed, Stream::ModelInit, 0))?,
    };
    let mut rng = rng_from(seed::derive(seed, Stream::Shuffle, 0));
    match &mut state {
        MtmState::Kernel(m) => m.fit(data, cfg.epochs, cfg.batch_size, cfg.step_size, &mut rng)?,
        MtmState::Counter(m) => m.fit(data, cfg.epochs, cfg.batch_size, cfg.step_size, &mut rng)?,
    }
    Ok(state)
}

/// Reward of a trained model on `data`: accuracy for the classifier, negative
/// mean ℓ1 count error for the regressor.
pub fn evaluate(state: &MtmState, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    match state {
        MtmState::Kernel(m) => m.accuracy(data),
        MtmState::Counter(m) => Ok(-m.loss(data)?),
    }
}

/// Mean ℓ1 error of a fixed per-type prediction, independent of inputs.
pub fn constant_prediction_reward(data: &LabeledDataset, prediction: [f64; CAR_TYPES]) -> Result<f64> {
    let Labels::Counts(counts) = data.labels() else {
        return Err(Error::InvalidArgument("needs count labels".into()));
    };
    let total: f64 = counts
        .iter()
        .map(|c| {
            c.iter()
                .zip(&prediction)
                .map(|(&t, p)| (p - f64::from(t)).abs())
                .sum::<f64>()
        })
        .sum();
    Ok(-total / (counts.len() * CAR_TYPES) as f64)
}

const BLOB_MAGIC: &[u8; 4] = b"LTSM";
const BLOB_VERSION: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Blob("truncated".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Blob("length overflow".into()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > self.bytes.len() / 8 {
            return Err(Error::Blob("truncated".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend((xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend(x.to_le_bytes());
    }
}

impl MtmState {
    /// Versioned little-endian encoding:
    /// `"LTSM" | version u16 | kind u8 | fields...`, vectors length-prefixed.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(BLOB_MAGIC);
        out.extend(BLOB_VERSION.to_le_bytes());
        match self {
            MtmState::Kernel(m) => {
                out.push(0);
                out.extend(m.gamma.to_le_bytes());
                out.extend(m.lambda.to_le_bytes());
                out.extend((m.dim as u64).to_le_bytes());
                out.extend((m.max_support as u64).to_le_bytes());
                put_f64s(&mut out, &m.support);
                put_f64s(&mut out, &m.coeffs);
                out.extend(m.bias.to_le_bytes());
            }
            MtmState::Counter(m) => {
                out.push(1);
                out.extend((m.input as u64).to_le_bytes());
                out.extend((m.hidden as u64).to_le_bytes());
                put_f64s(&mut out, &m.params);
                out.extend(m.adam.t.to_le_bytes());
                put_f64s(&mut out, &m.adam.m);
                put_f64s(&mut out, &m.adam.v);
            }
        }
        out
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        if r.take(4)? != BLOB_MAGIC {
            return Err(Error::Blob("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != BLOB_VERSION {
            return Err(Error::Blob(format!("unsupported version {version}")));
        }
        let state = match r.take(1)?[0] {
            0 => {
                let gamma = r.f64()?;
                let lambda = r.f64()?;
                let dim = r.usize()?;
                let max_support = r.usize()?;
                let support = r.f64s()?;
                let coeffs = r.f64s()?;
                let bias = r.f64()?;
                if dim == 0 || support.len() != coeffs.len() * dim {
                    return Err(Error::Blob("inconsistent support set".into()));
                }
                MtmState::Kernel(KernelClassifier {
                    gamma,
                    lambda,
                    dim,
                    support,
                    coeffs,
                    bias,
                    max_support,
                })
            }
            1 => {
                let input = r.usize()?;
                let hidden = r.usize()?;
                let params = r.f64s()?;
                let t = r.u64()?;
                let m = r.f64s()?;
                let v = r.f64s()?;
                let n = hidden * input + hidden + CAR_TYPES * hidden + CAR_TYPES;
                if params.len() != n || m.len() != n || v.len() != n {
                    return Err(Error::Blob("inconsistent layer sizes".into()));
                }
                MtmState::Counter(CountRegressor {
                    input,
                    hidden,
                    params,
                    adam: mlp::AdamState { m, v, t },
                })
            }
            k => return Err(Error::Blob(format!("unknown model kind {k}"))),
        };
        if !r.bytes.is_empty() {
            return Err(Error::Blob("trailing bytes".into()));
        }
        Ok(state)
    }
}
