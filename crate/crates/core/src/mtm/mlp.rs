//! One-hidden-layer count regressor: `y = W2 tanh(W1 x + b1) + b2`, trained
//! with Adam on the mean ℓ1 loss over samples and car types.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng as SeedRng;
use crate::sim::{LabeledDataset, Labels, CAR_TYPES};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) t: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRegressor {
    pub(crate) input: usize,
    pub(crate) hidden: usize,
    /// `[W1 (hidden × input) | b1 | W2 (outputs × hidden) | b2]`
    pub(crate) params: Vec<f64>,
    pub(crate) adam: AdamState,
}

fn param_count(input: usize, hidden: usize) -> usize {
    hidden * input + hidden + CAR_TYPES * hidden + CAR_TYPES
}

impl CountRegressor {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("regressor layers must be non-empty".into()));
        }
        let n = param_count(input, hidden);
        let mut params = vec![0.0; n];
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        for w in &mut params[..hidden * input] {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / (hidden + CAR_TYPES) as f64).sqrt();
        let w2 = hidden * input + hidden;
        for w in &mut params[w2..w2 + CAR_TYPES * hidden] {
            *w = rng.random_range(-a2..a2);
        }
        Ok(Self {
            input,
            hidden,
            params,
            adam: AdamState::new(n),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "regressor params",
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(CAR_TYPES * self.hidden);
        (w1, b1, w2, b2)
    }

    fn hidden_activations(&self, x: &[f64], h: &mut [f64]) {
        let (w1, b1, _, _) = self.split();
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
            *hj = z.tanh();
        }
    }

    fn output(&self, h: &[f64]) -> [f64; CAR_TYPES] {
        let (_, _, w2, b2) = self.split();
        let mut y = [0.0; CAR_TYPES];
        for (t, yt) in y.iter_mut().enumerate() {
            let row = &w2[t * self.hidden..(t + 1) * self.hidden];
            *yt = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + b2[t];
        }
        y
    }

    pub fn predict(&self, x: &[f64]) -> [f64; CAR_TYPES] {
        let mut h = vec![0.0; self.hidden];
        self.hidden_activations(x, &mut h);
        self.output(&h)
    }

    fn check<'a>(&self, data: &'a LabeledDataset) -> Result<&'a [[u32; CAR_TYPES]]> {
        if data.n_features() != self.input {
            return Err(Error::DimensionMismatch {
                context: "regressor input",
                expected: self.input,
                actual: data.n_features(),
            });
        }
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        match data.labels() {
            Labels::Counts(c) => Ok(c),
            Labels::Classes(_) => Err(Error::InvalidArgument("count regressor needs count labels".into())),
        }
    }

    /// Mean over rows and car types of `|prediction − count|`.
    pub fn loss(&self, data: &LabeledDataset) -> Result<f64> {
        let counts = self.check(data)?;
        let total: f64 = data
            .rows()
            .zip(counts)
            .map(|(x, c)| {
                let y = self.predict(x);
                y.iter().zip(c).map(|(p, &t)| (p - f64::from(t)).abs()).sum::<f64>()
            })
            .sum();
        Ok(total / (data.len() * CAR_TYPES) as f64)
    }

    /// Gradient of [`loss`](Self::loss) over the whole dataset, laid out like
    /// [`params`](Self::params).
    pub fn loss_gradient(&self, data: &LabeledDataset) -> Result<Vec<f64>> {
        let counts = self.check(data)?;
        let all: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(data, counts, &all, &mut grad);
        Ok(grad)
    }

    fn accumulate_gradient(
        &self,
        data: &LabeledDataset,
        counts: &[[u32; CAR_TYPES]],
        batch: &[usize],
        grad: &mut [f64],
    ) {
        let (input, hidden) = (self.input, self.hidden);
        let (_, _, w2, _) = self.split();
        let o_w1 = 0;
        let o_b1 = hidden * input;
        let o_w2 = o_b1 + hidden;
        let o_b2 = o_w2 + CAR_TYPES * hidden;
        let scale = 1.0 / (batch.len() * CAR_TYPES) as f64;
        let mut h = vec![0.0; hidden];
        let mut dz = vec![0.0; hidden];
        for &i in batch {
            let x = data.row(i);
            self.hidden_activations(x, &mut h);
            let y = self.output(&h);
            let mut dy = [0.0; CAR_TYPES];
            for t in 0..CAR_TYPES {
                let diff = y[t] - f64::from(counts[i][t]);
                dy[t] = if diff > 0.0 {
                    scale
                } else if diff < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
            for (j, dzj) in dz.iter_mut().enumerate() {
                let mut back = 0.0;
                for t in 0..CAR_TYPES {
                    back += w2[t * hidden + j] * dy[t];
                }
                *dzj = back * (1.0 - h[j] * h[j]);
            }
            for t in 0..CAR_TYPES {
                if dy[t] == 0.0 {
                    continue;
                }
                let row = &mut grad[o_w2 + t * hidden..o_w2 + (t + 1) * hidden];
                for (g, hj) in row.iter_mut().zip(&h) {
                    *g += dy[t] * hj;
                }
                grad[o_b2 + t] += dy[t];
            }
            for (j, &d) in dz.iter().enumerate() {
                let row = &mut grad[o_w1 + j * input..o_w1 + (j + 1) * input];
                for (g, xv) in row.iter_mut().zip(x) {
                    *g += d * xv;
                }
                grad[o_b1 + j] += d;
            }
        }
    }

    pub(crate) fn fit(
        &mut self,
        data: &LabeledDataset,
        epochs: usize,
        batch_size: usize,
        step: f64,
        rng: &mut SeedRng,
    ) -> Result<()> {
        let counts = self.check(data)?.to_vec();
        let batch_size = batch_size.clamp(1, data.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; self.params.len()];
        for _ in 0..epochs {
            order.shuffle(rng);
            for batch in order.chunks(batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                self.accumulate_gradient(data, &counts, batch, &mut grad);
                self.adam_step(&grad, step);
            }
        }
        Ok(())
    }

    fn adam_step(&mut self, grad: &[f64], step: f64) {
        let a = &mut self.adam;
        a.t += 1;
        let bc1 = 1.0 - BETA1.powi(a.t as i32);
        let bc2 = 1.0 - BETA2.powi(a.t as i32);
        for (((p, g), m), v) in self.params.iter_mut().zip(grad).zip(&mut a.m).zip(&mut a.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= step * mh / (vh.sqrt() + EPS);
        }
    }
}
