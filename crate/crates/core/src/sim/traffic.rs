//! Block-based traffic scene model rendered as feature vectors.
//!
//! A scene is a straight road of `length` blocks (8..=18) ending in an L, T
//! or X intersection. Every block independently holds a car with probability
//! `car_presence` (its type drawn from `car_type`) and a house with
//! probability `house_presence`. Weather is drawn from `weather`.
//!
//! Rendering produces a 133-dim vector:
//!
//! ```text
//! [ slot 0: car one-hot (5) | house | occupied ] ... [ slot 17 ] | intersection (3) | weather (4)
//! ```
//!
//! Slots past the scene length are zero. The 126 per-slot channels then get
//! additive Gaussian noise whose std depends on the weather.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::{decode, DecodedParams, ParamSchema, ParamVector};
use crate::seed::rng_from;
use crate::sim::{sample_seed, DatasetMeta, LabeledDataset, Labels, CAR_TYPES};

pub const MIN_LENGTH: usize = 8;
pub const MAX_LENGTH: usize = 18;
pub const LENGTH_CHOICES: usize = MAX_LENGTH - MIN_LENGTH + 1;
pub const WEATHER_TYPES: usize = 4;
pub const SLOT_CHANNELS: usize = CAR_TYPES + 2;
pub const BLOCK_FEATURES: usize = MAX_LENGTH * SLOT_CHANNELS;
pub const N_FEATURES: usize = BLOCK_FEATURES + 3 + WEATHER_TYPES;

pub const CAR_PRESENCE: &str = "car_presence";
pub const CAR_TYPE: &str = "car_type";
pub const HOUSE_PRESENCE: &str = "house_presence";
pub const LENGTH: &str = "length";
pub const WEATHER: &str = "weather";

/// Schema preset name used in configs.
pub const SCHEMA_PRESET: &str = "traffic_v1";

pub fn schema() -> ParamSchema {
    ParamSchema::builder()
        .bernoulli(CAR_PRESENCE)
        .categorical(CAR_TYPE, CAR_TYPES)
        .bernoulli(HOUSE_PRESENCE)
        .categorical(LENGTH, LENGTH_CHOICES)
        .categorical(WEATHER, WEATHER_TYPES)
        .build()
        .expect("traffic schema tiles")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Intersection {
    L,
    T,
    X,
}

impl Intersection {
    pub fn index(self) -> usize {
        match self {
            Intersection::L => 0,
            Intersection::T => 1,
            Intersection::X => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    /// Car type in `1..=5`, if a car occupies the block.
    pub car: Option<u8>,
    pub house: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub intersection: Intersection,
    pub blocks: Vec<Block>,
    /// Weather type in `1..=4`.
    pub weather: u8,
}

impl SceneDescription {
    pub fn length(&self) -> usize {
        self.blocks.len()
    }

    pub fn counts(&self) -> CountLabel {
        let mut counts = [0u32; CAR_TYPES];
        for block in &self.blocks {
            if let Some(t) = block.car {
                counts[usize::from(t) - 1] += 1;
            }
        }
        CountLabel(counts)
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_LENGTH..=MAX_LENGTH).contains(&self.blocks.len()) {
            return Err(Error::Validation(format!(
                "scene length {} out of range",
                self.blocks.len()
            )));
        }
        if !(1..=WEATHER_TYPES as u8).contains(&self.weather) {
            return Err(Error::Validation(format!("weather {} out of range", self.weather)));
        }
        if self
            .blocks
            .iter()
            .any(|b| matches!(b.car, Some(t) if !(1..=CAR_TYPES as u8).contains(&t)))
        {
            return Err(Error::Validation("car type out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountLabel(pub [u32; CAR_TYPES]);

impl CountLabel {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

fn draw_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Sample a scene: length, intersection, then per block car presence, car
/// type (only when present) and house presence, then weather.
pub fn sample_scene<R: Rng + ?Sized>(decoded: &DecodedParams, rng: &mut R) -> Result<SceneDescription> {
    let p_car = decoded.bernoulli(CAR_PRESENCE)?;
    let car_types = decoded.categorical(CAR_TYPE)?;
    let p_house = decoded.bernoulli(HOUSE_PRESENCE)?;
    let lengths = decoded.categorical(LENGTH)?;
    let weathers = decoded.categorical(WEATHER)?;
    if car_types.len() != CAR_TYPES || lengths.len() != LENGTH_CHOICES || weathers.len() != WEATHER_TYPES {
        return Err(Error::Schema("decoded parameters do not match traffic_v1".into()));
    }

    let length = MIN_LENGTH + draw_categorical(rng, lengths);
    let intersection = match rng.random_range(0..3) {
        0 => Intersection::L,
        1 => Intersection::T,
        _ => Intersection::X,
    };
    let blocks = (0..length)
        .map(|_| {
            let car = if rng.random::<f64>() < p_car {
                Some(draw_categorical(rng, car_types) as u8 + 1)
            } else {
                None
            };
            let house = rng.random::<f64>() < p_house;
            Block { car, house }
        })
        .collect();
    let weather = draw_categorical(rng, weathers) as u8 + 1;
    Ok(SceneDescription {
        intersection,
        blocks,
        weather,
    })
}

/// Per-weather observation noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseModel(pub [f64; WEATHER_TYPES]);

impl Default for NoiseModel {
    fn default() -> Self {
        Self([0.1, 0.3, 0.6, 1.0])
    }
}

impl NoiseModel {
    pub fn std_for(&self, weather: u8) -> f64 {
        self.0[usize::from(weather) - 1]
    }
}

/// Noise-free feature vector of a scene.
pub fn clean_features(scene: &SceneDescription) -> Vec<f64> {
    let mut x = vec![0.0; N_FEATURES];
    for (slot, block) in scene.blocks.iter().enumerate() {
        let base = slot * SLOT_CHANNELS;
        if let Some(t) = block.car {
            x[base + usize::from(t) - 1] = 1.0;
        }
        if block.house {
            x[base + CAR_TYPES] = 1.0;
        }
        x[base + CAR_TYPES + 1] = 1.0;
    }
    x[BLOCK_FEATURES + scene.intersection.index()] = 1.0;
    x[BLOCK_FEATURES + 3 + usize::from(scene.weather) - 1] = 1.0;
    x
}

pub fn render_features<R: Rng + ?Sized>(scene: &SceneDescription, noise: &NoiseModel, rng: &mut R) -> Vec<f64> {
    let mut x = clean_features(scene);
    let std = noise.std_for(scene.weather);
    for v in &mut x[..BLOCK_FEATURES] {
        let z: f64 = rng.sample(StandardNormal);
        *v += std * z;
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSim {
    schema: ParamSchema,
    noise: NoiseModel,
}

impl Default for TrafficSim {
    fn default() -> Self {
        Self::new(NoiseModel::default())
    }
}

impl TrafficSim {
    pub fn new(noise: NoiseModel) -> Self {
        Self {
            schema: schema(),
            noise,
        }
    }

    pub fn schema(&self) -> &ParamSchema {
        &self.schema
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Sample and render `m` scenes labelled with their per-type car counts.
    pub fn generate_counting(&self, theta: &ParamVector, m: usize, seed: u64) -> Result<LabeledDataset> {
        if m == 0 {
            return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
        }
        let decoded = decode(&self.schema, theta)?;
        let mut features = Vec::with_capacity(m * N_FEATURES);
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            let mut rng = rng_from(sample_seed(seed, i));
            let scene = sample_scene(&decoded, &mut rng)?;
            features.extend(render_features(&scene, &self.noise, &mut rng));
            labels.push(scene.counts().0);
        }
        LabeledDataset::new(
            features,
            N_FEATURES,
            Labels::Counts(labels),
            DatasetMeta {
                seed,
                decoded: Some(decoded),
            },
        )
    }
}

/// Logits built from explicit probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneProbabilities {
    pub car_presence: f64,
    pub car_type: [f64; CAR_TYPES],
    pub house_presence: f64,
    pub length: [f64; LENGTH_CHOICES],
    pub weather: [f64; WEATHER_TYPES],
}

impl SceneProbabilities {
    pub fn encode(&self) -> Result<ParamVector> {
        let ln = |p: f64| p.ln();
        let mut v = Vec::with_capacity(22);
        v.push(crate::param_space::logit(self.car_presence));
        v.extend(self.car_type.iter().map(|&p| ln(p)));
        v.push(crate::param_space::logit(self.house_presence));
        v.extend(self.length.iter().map(|&p| ln(p)));
        v.extend(self.weather.iter().map(|&p| ln(p)));
        ParamVector::new(v)
    }
}

/// The distribution validation and test scenes are drawn from: moderately
/// crowded roads, unbalanced car types, mixed weather.
pub fn real_params() -> SceneProbabilities {
    SceneProbabilities {
        car_presence: 0.6,
        car_type: [0.35, 0.25, 0.2, 0.15, 0.05],
        house_presence: 0.5,
        length: [1.0 / LENGTH_CHOICES as f64; LENGTH_CHOICES],
        weather: [0.4, 0.3, 0.2, 0.1],
    }
}

pub fn real_theta() -> ParamVector {
    real_params().encode().expect("finite preset")
}

/// Deliberately poor starting point: nearly all cars are the type rarest in
/// the validation data and nearly all scenes have the noisiest weather.
pub fn adversarial_theta() -> ParamVector {
    let real = real_params();
    let rarest = argmin(&real.car_type);
    let noisiest = WEATHER_TYPES - 1;
    let mut v = vec![0.0; schema().total_dim()];
    let s = schema();
    v[s.block(CAR_TYPE).unwrap().offset + rarest] = 5.0;
    v[s.block(WEATHER).unwrap().offset + noisiest] = 5.0;
    ParamVector::new(v).expect("finite preset")
}

fn argmin(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
