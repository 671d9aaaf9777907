//! RBF-kernel binary classifier trained by subgradient descent on the
//! regularized hinge loss in the kernel expansion
//!
//! ```text
//! f(x) = Σ_j α_j k(s_j, x) + b,    k(u, v) = exp(−γ ‖u − v‖²)
//! J(α, b) = λ/2 · αᵀ K α + 1/N Σ_i max(0, 1 − y_i f(x_i))
//! ```
//!
//! with labels mapped to `y ∈ {−1, +1}`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::sim::{LabeledDataset, Labels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelClassifier {
    pub(crate) gamma: f64,
    pub(crate) lambda: f64,
    pub(crate) dim: usize,
    /// Row-major support points.
    pub(crate) support: Vec<f64>,
    pub(crate) coeffs: Vec<f64>,
    pub(crate) bias: f64,
    pub(crate) max_support: usize,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

fn signed_labels(data: &LabeledDataset) -> Result<Vec<f64>> {
    match data.labels() {
        Labels::Classes(c) => Ok(c.iter().map(|&y| if y == 1 { 1.0 } else { -1.0 }).collect()),
        Labels::Counts(_) => Err(Error::InvalidArgument("kernel classifier needs class labels".into())),
    }
}

/// Kernel values between the support set and a batch of points, stored
/// row-major as `points × support`.
struct Gram {
    values: Vec<f64>,
    support: usize,
}

impl Gram {
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.support..(i + 1) * self.support]
    }
}

impl KernelClassifier {
    pub fn new(gamma: f64, lambda: f64, dim: usize, max_support: usize) -> Result<Self> {
        if !(gamma > 0.0) || !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma and lambda must be positive (got {gamma}, {lambda})"
            )));
        }
        Ok(Self {
            gamma,
            lambda,
            dim,
            support: Vec::new(),
            coeffs: Vec::new(),
            bias: 0.0,
            max_support: max_support.max(1),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .chunks_exact(self.dim)
            .zip(&self.coeffs)
            .map(|(s, a)| a * rbf(self.gamma, s, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.decision(x) > 0.0)
    }

    fn check_dim(&self, data: &LabeledDataset) -> Result<()> {
        if data.n_features() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "kernel classifier input",
                expected: self.dim,
                actual: data.n_features(),
            });
        }
        Ok(())
    }

    /// Make the rows of `data` part of the kernel expansion. On a fresh model
    /// the support set becomes exactly `data`; on a retained one the rows are
    /// appended and the oldest points are evicted past `max_support`.
    pub(crate) fn attach(&mut self, data: &LabeledDataset) {
        self.support.extend_from_slice(data.features());
        self.coeffs.extend(std::iter::repeat(0.0).take(data.len()));
        let excess = self.coeffs.len().saturating_sub(self.max_support);
        if excess > 0 {
            self.coeffs.drain(..excess);
            self.support.drain(..excess * self.dim);
        }
    }

    /// Drop support points whose coefficient is exactly zero; they do not
    /// contribute to `f`.
    fn prune(&mut self) {
        let keep: Vec<bool> = self.coeffs.iter().map(|&a| a != 0.0).collect();
        if keep.iter().all(|&k| k) {
            return;
        }
        let mut support = Vec::with_capacity(self.support.len());
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (j, s) in self.support.chunks_exact(self.dim).enumerate() {
            if keep[j] {
                support.extend_from_slice(s);
                coeffs.push(self.coeffs[j]);
            }
        }
        self.support = support;
        self.coeffs = coeffs;
    }

    fn gram(&self, data: &LabeledDataset) -> Gram {
        let p = self.support_len();
        let mut values = Vec::with_capacity(p * data.len());
        for x in data.rows() {
            values.extend(self.support.chunks_exact(self.dim).map(|s| rbf(self.gamma, s, x)));
        }
        Gram { values, support: p }
    }

    fn support_gram(&self) -> Gram {
        let p = self.support_len();
        let mut values = vec![0.0; p * p];
        let pts: Vec<&[f64]> = self.support.chunks_exact(self.dim).collect();
        for i in 0..p {
            values[i * p + i] = 1.0;
            for j in 0..i {
                let k = rbf(self.gamma, pts[i], pts[j]);
                values[i * p + j] = k;
                values[j * p + i] = k;
            }
        }
        Gram { values, support: p }
    }

    /// `K α` over the support set.
    fn reg_direction(&self, kss: &Gram) -> Vec<f64> {
        (0..self.support_len())
            .map(|j| kss.row(j).iter().zip(&self.coeffs).map(|(k, a)| k * a).sum())
            .collect()
    }

    /// Full-batch objective `J(α, b)` on `data`.
    pub fn objective(&self, data: &LabeledDataset) -> Result<f64> {
        self.check_dim(data)?;
        let y = signed_labels(data)?;
        let kss = self.support_gram();
        let ka = self.reg_direction(&kss);
        let reg: f64 = 0.5 * self.lambda * self.coeffs.iter().zip(&ka).map(|(a, k)| a * k).sum::<f64>();
        let hinge: f64 = data
            .rows()
            .zip(&y)
            .map(|(x, yi)| (1.0 - yi * self.decision(x)).max(0.0))
            .sum::<f64>()
            / data.len() as f64;
        Ok(reg + hinge)
    }

    /// Full-batch (sub)gradient of [`objective`](Self::objective) as
    /// `(∂J/∂α, ∂J/∂b)`.
    pub fn gradient(&self, data: &LabeledDataset) -> Result<(Vec<f64>, f64)> {
        self.check_dim(data)?;
        let y = signed_labels(data)?;
        let kss = self.support_gram();
        let kxd = self.gram(data);
        let all: Vec<usize> = (0..data.len()).collect();
        Ok(self.batch_gradient(&kss, &kxd, &y, &all))
    }

    fn batch_gradient(&self, kss: &Gram, kxd: &Gram, y: &[f64], batch: &[usize]) -> (Vec<f64>, f64) {
        let mut grad: Vec<f64> = self.reg_direction(kss).into_iter().map(|v| self.lambda * v).collect();
        let mut grad_b = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let row = kxd.row(i);
            let f: f64 = row.iter().zip(&self.coeffs).map(|(k, a)| k * a).sum::<f64>() + self.bias;
            if y[i] * f < 1.0 {
                let w = y[i] * scale;
                for (g, k) in grad.iter_mut().zip(row) {
                    *g -= w * k;
                }
                grad_b -= w;
            }
        }
        (grad, grad_b)
    }

    /// Run `epochs` passes of mini-batch subgradient descent over `data`.
    pub(crate) fn fit(
        &mut self,
        data: &LabeledDataset,
        epochs: usize,
        batch_size: usize,
        step: f64,
        rng: &mut Rng,
    ) -> Result<()> {
        self.check_dim(data)?;
        let y = signed_labels(data)?;
        self.attach(data);
        let kxd = self.gram(data);
        // With a fresh model the support set is the data itself.
        let kss = if self.support_len() == data.len() && self.support == data.features() {
            Gram {
                values: kxd.values.clone(),
                support: kxd.support,
            }
        } else {
            self.support_gram()
        };
        let batch_size = batch_size.clamp(1, data.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..epochs {
            order.shuffle(rng);
            for batch in order.chunks(batch_size) {
                let (grad, grad_b) = self.batch_gradient(&kss, &kxd, &y, batch);
                for (a, g) in self.coeffs.iter_mut().zip(&grad) {
                    *a -= step * g;
                }
                self.bias -= step * grad_b;
            }
        }
        self.prune();
        Ok(())
    }

    /// Fraction of correctly classified rows.
    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        self.check_dim(data)?;
        let Labels::Classes(labels) = data.labels() else {
            return Err(Error::InvalidArgument("kernel classifier needs class labels".into()));
        };
        if data.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
        }
        let correct = data.rows().zip(labels).filter(|(x, &y)| self.predict(x) == y).count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Overwrite `(α, b)` from a flat vector `[α.., b]`; used by gradient
    /// checks.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.coeffs.len() + 1 {
            return Err(Error::DimensionMismatch {
                context: "kernel classifier params",
                expected: self.coeffs.len() + 1,
                actual: params.len(),
            });
        }
        self.coeffs.copy_from_slice(&params[..params.len() - 1]);
        self.bias = params[params.len() - 1];
        Ok(())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.coeffs.clone();
        p.push(self.bias);
        p
    }

    /// A model whose support set is `data` with the given `(α, b)`.
    pub fn with_support(&self, data: &LabeledDataset, params: &[f64]) -> Result<Self> {
        self.check_dim(data)?;
        let mut m = Self {
            support: Vec::new(),
            coeffs: Vec::new(),
            bias: 0.0,
            ..self.clone()
        };
        m.support = data.features().to_vec();
        m.coeffs = vec![0.0; data.len()];
        m.set_params(params)?;
        Ok(m)
    }
}
