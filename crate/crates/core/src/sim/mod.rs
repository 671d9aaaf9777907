//! Data-generating simulators.
//!
//! A simulator maps a parameter vector to a labelled dataset by ancestral
//! sampling. Sample `i` of a dataset generated with seed `s` draws from its
//! own stream seeded with `seed::derive(s, Stream::Sample, i)`, so datasets
//! are reproducible and per-sample generation is order independent.

pub mod gmm;
pub mod traffic;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::{DecodedParams, ParamSchema, ParamVector};
use crate::seed::{self, Stream};

pub use gmm::GmmWorld;
pub use traffic::TrafficSim;

/// Number of car types in the traffic scenes.
pub const CAR_TYPES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    GmmClassification,
    TrafficCounting,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Binary class ids.
    Classes(Vec<u8>),
    /// Per-type car counts.
    Counts(Vec<[u32; CAR_TYPES]>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Counts(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    /// Distribution parameters the samples were drawn from; `None` for data
    /// drawn from a world that is not expressed in a schema.
    pub decoded: Option<DecodedParams>,
}

/// Row-major feature matrix with aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Labels,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, n_features: usize, labels: Labels, meta: DatasetMeta) -> Result<Self> {
        if n_features == 0 || features.len() != n_features * labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset features",
                expected: n_features * labels.len(),
                actual: features.len(),
            });
        }
        Ok(Self {
            features,
            n_features,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_features)
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Copy of the dataset with rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut features = Vec::with_capacity(self.features.len());
        for &i in order {
            features.extend_from_slice(self.row(i));
        }
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(order.iter().map(|&i| c[i]).collect()),
            Labels::Counts(c) => Labels::Counts(order.iter().map(|&i| c[i]).collect()),
        };
        Self {
            features,
            n_features: self.n_features,
            labels,
            meta: self.meta.clone(),
        }
    }

    /// Concatenate datasets with matching feature width and label kind.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut features = Vec::new();
        let mut labels = match first.labels {
            Labels::Classes(_) => Labels::Classes(Vec::new()),
            Labels::Counts(_) => Labels::Counts(Vec::new()),
        };
        for part in parts {
            if part.n_features != first.n_features {
                return Err(Error::DimensionMismatch {
                    context: "dataset concat",
                    expected: first.n_features,
                    actual: part.n_features,
                });
            }
            features.extend_from_slice(&part.features);
            match (&mut labels, &part.labels) {
                (Labels::Classes(a), Labels::Classes(b)) => a.extend_from_slice(b),
                (Labels::Counts(a), Labels::Counts(b)) => a.extend_from_slice(b),
                _ => return Err(Error::InvalidArgument("mixed label kinds".into())),
            }
        }
        Self::new(features, first.n_features, labels, first.meta.clone())
    }

    /// Write the dataset as CSV: feature columns `f0..f{D-1}` followed by
    /// `label` (classification) or `count_1..count_5` (counting).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.n_features).map(|j| format!("f{j}")).collect();
        match &self.labels {
            Labels::Classes(_) => header.push("label".into()),
            Labels::Counts(_) => header.extend((1..=CAR_TYPES).map(|t| format!("count_{t}"))),
        }
        out.write_record(&header)?;
        for (i, row) in self.rows().enumerate() {
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            match &self.labels {
                Labels::Classes(c) => record.push(c[i].to_string()),
                Labels::Counts(c) => record.extend(c[i].iter().map(|v| v.to_string())),
            }
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A simulator together with its fixed structural settings.
#[derive(Debug, Clone, PartialEq)]
pub enum SimulatorSpec {
    Gmm(GmmWorld),
    Traffic(TrafficSim),
}

impl SimulatorSpec {
    pub fn schema(&self) -> &ParamSchema {
        match self {
            SimulatorSpec::Gmm(w) => w.sim_schema(),
            SimulatorSpec::Traffic(t) => t.schema(),
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            SimulatorSpec::Gmm(_) => TaskKind::GmmClassification,
            SimulatorSpec::Traffic(_) => TaskKind::TrafficCounting,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            SimulatorSpec::Gmm(_) => gmm::N_FEATURES,
            SimulatorSpec::Traffic(_) => traffic::N_FEATURES,
        }
    }
}

/// Draw `m` samples from the simulator at `theta`.
pub fn generate(spec: &SimulatorSpec, theta: &ParamVector, m: usize, seed: u64) -> Result<LabeledDataset> {
    if m == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    match spec {
        SimulatorSpec::Gmm(world) => world.generate_sim(theta, m, seed),
        SimulatorSpec::Traffic(sim) => sim.generate_counting(theta, m, seed),
    }
}

/// Seed of the `index`-th sample of a dataset generated with `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, Stream::Sample, index as u64)
}
