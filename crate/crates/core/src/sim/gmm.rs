//! Two-class Gaussian-mixture toy world.
//!
//! The "real" distribution `p(x, y)` is a fixed mixture per class. The
//! learnable simulator `q(x, y | θ)` has fewer diagonal Gaussian components
//! per class with uniform mixture weights and class prior ½; θ carries only
//! their means and (softplus-encoded) variances.
//!
//! Per-sample draw order, shared by both samplers: one uniform for the class,
//! one uniform for the component, then one standard normal per coordinate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::{decode, softplus_inverse, ParamSchema, ParamVector};
use crate::seed::rng_from;
use crate::sim::{sample_seed, DatasetMeta, LabeledDataset, Labels};

pub const N_FEATURES: usize = 2;
pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub mean: [f64; 2],
    pub variance: [f64; 2],
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmWorld {
    real: [Vec<GaussianComponent>; N_CLASSES],
    prior_class1: f64,
    sim_components: usize,
    sim_schema: ParamSchema,
}

impl GmmWorld {
    /// `real[c]` lists the components of class `c`; their weights are
    /// normalized here.
    pub fn new(real: [Vec<GaussianComponent>; N_CLASSES], prior_class1: f64, sim_components: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&prior_class1) {
            return Err(Error::InvalidArgument(format!(
                "class prior must be a probability, got {prior_class1}"
            )));
        }
        if sim_components == 0 {
            return Err(Error::InvalidArgument(
                "simulator needs at least one component per class".into(),
            ));
        }
        let mut real = real;
        for (c, comps) in real.iter_mut().enumerate() {
            if comps.is_empty() {
                return Err(Error::InvalidArgument(format!("class {c} has no components")));
            }
            let total: f64 = comps.iter().map(|g| g.weight).sum();
            if !(total > 0.0) || comps.iter().any(|g| g.weight < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "class {c} has invalid component weights"
                )));
            }
            for g in comps.iter_mut() {
                if g.variance.iter().any(|&v| !(v >= 0.0)) {
                    return Err(Error::InvalidArgument(format!("class {c} has a negative variance")));
                }
                g.weight /= total;
            }
        }
        Ok(Self {
            real,
            prior_class1,
            sim_components,
            sim_schema: sim_schema(sim_components)?,
        })
    }

    /// The default world of [`standard_components`].
    pub fn standard(sim_components: usize) -> Result<Self> {
        Self::new(standard_components(), 0.5, sim_components)
    }

    pub fn real_components(&self, class: usize) -> &[GaussianComponent] {
        &self.real[class]
    }

    pub fn prior_class1(&self) -> f64 {
        self.prior_class1
    }

    pub fn sim_components(&self) -> usize {
        self.sim_components
    }

    pub fn sim_schema(&self) -> &ParamSchema {
        &self.sim_schema
    }

    /// Draw `n` labelled points from the real world.
    pub fn sample_real(&self, n: usize, seed: u64) -> Result<LabeledDataset> {
        if n == 0 {
            return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
        }
        let mut features = Vec::with_capacity(n * N_FEATURES);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = rng_from(sample_seed(seed, i));
            let class = usize::from(rng.random::<f64>() < self.prior_class1);
            let v: f64 = rng.random();
            let comps = &self.real[class];
            let mut acc = 0.0;
            let mut chosen = comps.len() - 1;
            for (j, g) in comps.iter().enumerate() {
                acc += g.weight;
                if v < acc {
                    chosen = j;
                    break;
                }
            }
            let g = &comps[chosen];
            features.extend(draw_point(&mut rng, g.mean, g.variance));
            labels.push(class as u8);
        }
        LabeledDataset::new(
            features,
            N_FEATURES,
            Labels::Classes(labels),
            DatasetMeta { seed, decoded: None },
        )
    }

    /// Draw `m` points from the simulator at `theta`.
    pub fn generate_sim(&self, theta: &ParamVector, m: usize, seed: u64) -> Result<LabeledDataset> {
        if m == 0 {
            return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
        }
        let decoded = decode(&self.sim_schema, theta)?;
        let mut comps = [Vec::new(), Vec::new()];
        for (c, class_comps) in comps.iter_mut().enumerate() {
            for j in 0..self.sim_components {
                let mean = decoded.gaussian_mean(&mean_name(c, j))?;
                let var = decoded.gaussian_variance(&var_name(c, j))?;
                class_comps.push(([mean[0], mean[1]], [var[0], var[1]]));
            }
        }
        let n = self.sim_components;
        let mut features = Vec::with_capacity(m * N_FEATURES);
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            let mut rng = rng_from(sample_seed(seed, i));
            let class = usize::from(rng.random::<f64>() < 0.5);
            let v: f64 = rng.random();
            let j = ((v * n as f64) as usize).min(n - 1);
            let (mean, var) = comps[class][j];
            features.extend(draw_point(&mut rng, mean, var));
            labels.push(class as u8);
        }
        LabeledDataset::new(
            features,
            N_FEATURES,
            Labels::Classes(labels),
            DatasetMeta {
                seed,
                decoded: Some(decoded),
            },
        )
    }

    /// Encode explicit `(mean, variance)` pairs, `per_class[c][j]`, as a θ
    /// for the simulator.
    pub fn encode_sim(&self, per_class: &[Vec<([f64; 2], [f64; 2])>; N_CLASSES]) -> Result<ParamVector> {
        let mut values = Vec::with_capacity(self.sim_schema.total_dim());
        for (c, comps) in per_class.iter().enumerate() {
            if comps.len() != self.sim_components {
                return Err(Error::DimensionMismatch {
                    context: "gmm encode",
                    expected: self.sim_components,
                    actual: comps.len(),
                });
            }
            for (mean, var) in comps {
                if var.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::InvalidArgument(format!("class {c} variance must be positive")));
                }
                values.extend_from_slice(mean);
                values.extend(var.iter().map(|&v| softplus_inverse(v)));
            }
        }
        ParamVector::new(values)
    }
}

fn draw_point<R: Rng>(rng: &mut R, mean: [f64; 2], variance: [f64; 2]) -> [f64; 2] {
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    [mean[0] + variance[0].sqrt() * z0, mean[1] + variance[1].sqrt() * z1]
}

pub fn mean_name(class: usize, comp: usize) -> String {
    format!("class{class}_comp{comp}_mean")
}

pub fn var_name(class: usize, comp: usize) -> String {
    format!("class{class}_comp{comp}_var")
}

fn sim_schema(components: usize) -> Result<ParamSchema> {
    let mut b = ParamSchema::builder();
    for c in 0..N_CLASSES {
        for j in 0..components {
            b = b.gaussian_mean(mean_name(c, j), 2).gaussian_variance(var_name(c, j), 2);
        }
    }
    b.build()
}

/// Two classes laid out like XOR: class 0 holds the (+,+) quadrant and a
/// pair of components in (−,−), class 1 mirrors it in x.
pub fn standard_components() -> [Vec<GaussianComponent>; N_CLASSES] {
    let g = |x: f64, y: f64, weight: f64| GaussianComponent {
        mean: [x, y],
        variance: [0.25, 0.25],
        weight,
    };
    [
        vec![g(2.0, 2.0, 2.0), g(-2.0, -2.0, 1.0), g(-2.5, -1.5, 1.0)],
        vec![g(-2.0, 2.0, 2.0), g(2.0, -2.0, 1.0), g(2.5, -1.5, 1.0)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mean0: [f64; 2], mean1: [f64; 2], var: f64) -> GmmWorld {
        let g = |m: [f64; 2]| GaussianComponent {
            mean: m,
            variance: [var, var],
            weight: 1.0,
        };
        GmmWorld::new([vec![g(mean0)], vec![g(mean1)]], 0.5, 2).unwrap()
    }

    #[test]
    fn schema_has_mean_and_variance_per_component() {
        let w = GmmWorld::standard(2).unwrap();
        assert_eq!(w.sim_schema().total_dim(), 2 * 2 * 4);
        let w1 = GmmWorld::standard(1).unwrap();
        assert_eq!(w1.sim_schema().total_dim(), 2 * 4);
    }

    #[test]
    fn weights_are_normalized() {
        let w = GmmWorld::standard(2).unwrap();
        for c in 0..2 {
            let s: f64 = w.real_components(c).iter().map(|g| g.weight).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_samples_sit_on_means() {
        let w = single([0.0, 0.0], [10.0, 10.0], 0.0);
        let d = w.sample_real(200, 5).unwrap();
        let Labels::Classes(labels) = d.labels() else {
            unreachable!()
        };
        for (row, &y) in d.rows().zip(labels) {
            let expected = if y == 0 { [0.0, 0.0] } else { [10.0, 10.0] };
            assert_eq!(row, expected);
        }
    }

    #[test]
    fn separated_classes_are_solved_by_nearest_mean() {
        let w = single([0.0, 0.0], [10.0, 10.0], 1e-4);
        let d = w.sample_real(500, 9).unwrap();
        let Labels::Classes(labels) = d.labels() else {
            unreachable!()
        };
        let correct = d
            .rows()
            .zip(labels)
            .filter(|(r, &y)| {
                let d0 = r[0] * r[0] + r[1] * r[1];
                let d1 = (r[0] - 10.0).powi(2) + (r[1] - 10.0).powi(2);
                u8::from(d1 < d0) == y
            })
            .count();
        assert_eq!(correct, 500);
    }

    #[test]
    fn class_zero_clusters_where_encoded() {
        let w = GmmWorld::standard(2).unwrap();
        let theta = w
            .encode_sim(&[
                vec![([5.0, 5.0], [1e-6, 1e-6]), ([5.0, 5.0], [1e-6, 1e-6])],
                vec![([-5.0, 0.0], [1.0, 1.0]), ([0.0, -5.0], [1.0, 1.0])],
            ])
            .unwrap();
        let d = w.generate_sim(&theta, 300, 1).unwrap();
        let Labels::Classes(labels) = d.labels() else {
            unreachable!()
        };
        for (row, &y) in d.rows().zip(labels) {
            if y == 0 {
                assert!((row[0] - 5.0).abs() < 0.01 && (row[1] - 5.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_sized() {
        let w = GmmWorld::standard(2).unwrap();
        let theta = ParamVector::zeros(w.sim_schema().total_dim());
        let a = w.generate_sim(&theta, 50, 77).unwrap();
        let b = w.generate_sim(&theta, 50, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(w.generate_sim(&theta, 1, 3).unwrap().len(), 1);
        assert!(w.generate_sim(&theta, 0, 3).is_err());
    }

    #[test]
    fn wrong_theta_length_is_rejected() {
        let w = GmmWorld::standard(2).unwrap();
        assert!(w.generate_sim(&ParamVector::zeros(3), 5, 0).is_err());
    }
}
