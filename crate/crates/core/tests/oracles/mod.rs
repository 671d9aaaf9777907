//! Reference implementations used only by tests.
//!
//! Nothing here calls into the library's numerical code paths. Seeds are
//! re-derived with a local SplitMix64 and samplers redo their own decoding,
//! so agreement with the library is evidence rather than tautology.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcome of one oracle comparison.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub computed: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, computed: Vec<f64>, tolerance: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            computed,
            tolerance,
            pass,
        }
    }

    pub fn assert_pass(&self) {
        assert!(
            self.pass,
            "oracle `{}` failed: {:?} (tolerance {})",
            self.name, self.computed, self.tolerance
        );
    }
}

/// Central finite differences of `f` at `x`, one coordinate at a time.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Result<Vec<f64>, String> {
    if !(eps > 0.0) {
        return Err(format!("step must be positive, got {eps}"));
    }
    let mut p = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        p[i] = x[i] + eps;
        let up = f(&p);
        p[i] = x[i] - eps;
        let down = f(&p);
        p[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(format!("non-finite evaluation at coordinate {i}: {up}, {down}"));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// `max_i |a_i − b_i| / max_i |b_i|` (or the absolute difference when `b`
/// vanishes).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Sample mean and standard error of `statistic` over `n` draws.
pub fn mc_expectation(n: usize, mut statistic: impl FnMut(usize) -> f64) -> (f64, f64) {
    assert!(n >= 1000, "Monte Carlo estimates need at least 10^3 draws");
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n {
        let v = statistic(i);
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed: stream tag 4, as documented for dataset generation.
pub fn reference_sample_seed(seed: u64, index: u64) -> u64 {
    let a = splitmix64(seed ^ splitmix64(4));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn reference_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

pub fn reference_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn reference_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Independent GMM simulator sampler. `theta` is laid out per class, per
/// component as `[mean x, mean y, var logit x, var logit y]`; classes are
/// equiprobable and components uniform.
pub fn reference_gmm_sample(theta: &[f64], components: usize, m: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<u8>) {
    assert_eq!(theta.len(), 2 * components * 4);
    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(reference_sample_seed(seed, i as u64));
        let u: f64 = rng.random();
        let class = if u < 0.5 { 1 } else { 0 };
        let v: f64 = rng.random();
        let mut j = (v * components as f64).floor() as usize;
        if j >= components {
            j = components - 1;
        }
        let base = (class * components + j) * 4;
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let sx = reference_softplus(theta[base + 2]).sqrt();
        let sy = reference_softplus(theta[base + 3]).sqrt();
        xs.push([theta[base] + sx * z0, theta[base + 1] + sy * z1]);
        ys.push(class as u8);
    }
    (xs, ys)
}

/// Decoded traffic-scene probabilities computed from a 22-entry θ laid out
/// as `[car, type × 5, house, length × 11, weather × 4]`.
pub struct SceneProbs {
    pub car: f64,
    pub types: Vec<f64>,
    pub house: f64,
    pub lengths: Vec<f64>,
    pub weather: Vec<f64>,
}

pub fn reference_scene_probs(theta: &[f64]) -> SceneProbs {
    assert_eq!(theta.len(), 22);
    SceneProbs {
        car: reference_sigmoid(theta[0]),
        types: reference_softmax(&theta[1..6]),
        house: reference_sigmoid(theta[6]),
        lengths: reference_softmax(&theta[7..18]),
        weather: reference_softmax(&theta[18..22]),
    }
}

/// Analytic expected road length (lengths 8..=18).
pub fn expected_length(p: &SceneProbs) -> f64 {
    p.lengths.iter().enumerate().map(|(i, q)| (8 + i) as f64 * q).sum()
}

/// Upper tail probability of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z)
}

/// Pearson χ² goodness-of-fit p-value of `counts` against `expected_probs`.
pub fn chi_square_p(counts: &[u64], expected_probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(expected_probs)
        .map(|(&c, &p)| {
            let e = n as f64 * p;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (counts.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// Two-sided Mann-Kendall trend test p-value (no tie correction beyond
/// treating ties as zero contributions).
pub fn mann_kendall_p(xs: &[f64]) -> f64 {
    let n = xs.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (xs[j] - xs[i]).signum() * f64::from(u8::from(xs[j] != xs[i]));
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    };
    2.0 * normal_sf(z.abs())
}

/// The single-step policy update written out by hand: mean ψ, rollouts θ_k
/// with rewards R_k, baseline b.
pub fn hand_policy_step(
    psi: &[f64],
    sigma_sq: f64,
    eta: f64,
    thetas: &[Vec<f64>],
    rewards: &[f64],
    b: f64,
) -> Vec<f64> {
    let k = thetas.len() as f64;
    let mut out = psi.to_vec();
    for (d, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (theta, r) in thetas.iter().zip(rewards) {
            acc += (theta[d] - psi[d]) / sigma_sq * (r - b);
        }
        *o += eta * acc / k;
    }
    out
}
