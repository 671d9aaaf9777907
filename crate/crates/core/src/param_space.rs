//! The parameter vector shared by the policy and the simulators.
//!
//! The policy only ever sees an unconstrained real vector. A [`ParamSchema`]
//! partitions that vector into named blocks, and [`decode`] maps each block
//! onto the parameters of one internal distribution of the simulator:
//!
//! | kind                | width | decoding                      |
//! |---------------------|-------|-------------------------------|
//! | categorical(k)      | k     | softmax                       |
//! | bernoulli           | 1     | logistic sigmoid              |
//! | gaussian_mean(d)    | d     | identity                      |
//! | gaussian_variance(d)| d     | softplus                      |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]` so that
/// log-densities stay finite downstream.
pub const PROB_FLOOR: f64 = 1e-12;

/// Smallest variance produced by the softplus transform.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    Categorical { arity: usize },
    Bernoulli,
    GaussianMean { dims: usize },
    GaussianVariance { dims: usize },
}

impl BlockKind {
    /// Number of reals the block consumes.
    pub fn width(&self) -> usize {
        match *self {
            BlockKind::Categorical { arity } => arity,
            BlockKind::Bernoulli => 1,
            BlockKind::GaussianMean { dims } | BlockKind::GaussianVariance { dims } => dims,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    #[serde(flatten)]
    pub kind: BlockKind,
    pub offset: usize,
    pub width: usize,
}

impl ParamBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSchema {
    blocks: Vec<ParamBlock>,
    total_dim: usize,
}

impl ParamSchema {
    /// Build a schema from explicit blocks, rejecting anything that does not
    /// tile `0..total_dim`.
    pub fn from_blocks(blocks: Vec<ParamBlock>) -> Result<Self> {
        let total_dim = blocks.iter().map(|b| b.width).sum();
        let schema = Self { blocks, total_dim };
        validate_schema(&schema)?;
        Ok(schema)
    }

    pub fn builder() -> SchemaBuilder {
        SchemaBuilder::default()
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }
}

/// Appends blocks with offsets assigned contiguously.
#[derive(Debug, Default)]
pub struct SchemaBuilder {
    blocks: Vec<ParamBlock>,
    next: usize,
}

impl SchemaBuilder {
    pub fn block(mut self, name: impl Into<String>, kind: BlockKind) -> Self {
        let width = kind.width();
        self.blocks.push(ParamBlock {
            name: name.into(),
            kind,
            offset: self.next,
            width,
        });
        self.next += width;
        self
    }

    pub fn categorical(self, name: impl Into<String>, arity: usize) -> Self {
        self.block(name, BlockKind::Categorical { arity })
    }

    pub fn bernoulli(self, name: impl Into<String>) -> Self {
        self.block(name, BlockKind::Bernoulli)
    }

    pub fn gaussian_mean(self, name: impl Into<String>, dims: usize) -> Self {
        self.block(name, BlockKind::GaussianMean { dims })
    }

    pub fn gaussian_variance(self, name: impl Into<String>, dims: usize) -> Self {
        self.block(name, BlockKind::GaussianVariance { dims })
    }

    pub fn build(self) -> Result<ParamSchema> {
        ParamSchema::from_blocks(self.blocks)
    }
}

/// Checks that blocks have the width their kind requires, are non-empty, and
/// tile the vector contiguously. Returns the first violation found.
pub fn validate_schema(schema: &ParamSchema) -> Result<()> {
    let mut cursor = 0usize;
    for block in &schema.blocks {
        if let BlockKind::Categorical { arity: 0 } = block.kind {
            return Err(Error::Schema(format!("categorical block `{}` has arity 0", block.name)));
        }
        if block.width == 0 {
            return Err(Error::Schema(format!("block `{}` has zero width", block.name)));
        }
        if block.width != block.kind.width() {
            return Err(Error::Schema(format!(
                "block `{}` has width {} but its kind needs {}",
                block.name,
                block.width,
                block.kind.width()
            )));
        }
        if block.offset < cursor {
            return Err(Error::Schema(format!(
                "block `{}` at offset {} overlaps the previous block ending at {}",
                block.name, block.offset, cursor
            )));
        }
        if block.offset > cursor {
            return Err(Error::Schema(format!(
                "gap before block `{}`: offset {} but previous block ends at {}",
                block.name, block.offset, cursor
            )));
        }
        cursor += block.width;
    }
    if cursor != schema.total_dim {
        return Err(Error::Schema(format!(
            "blocks cover {} reals but total_dim is {}",
            cursor, schema.total_dim
        )));
    }
    Ok(())
}

/// A point in simulator-parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "parameter entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DecodedValue {
    Categorical(Vec<f64>),
    Bernoulli(f64),
    GaussianMean(Vec<f64>),
    GaussianVariance(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedBlock {
    pub name: String,
    pub value: DecodedValue,
}

/// Distribution parameters, one entry per schema block, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedParams {
    pub blocks: Vec<DecodedBlock>,
}

impl DecodedParams {
    pub fn get(&self, name: &str) -> Result<&DecodedValue> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &b.value)
            .ok_or_else(|| Error::Schema(format!("no decoded block named `{name}`")))
    }

    pub fn categorical(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            DecodedValue::Categorical(p) => Ok(p),
            other => Err(kind_error(name, "categorical", other)),
        }
    }

    pub fn bernoulli(&self, name: &str) -> Result<f64> {
        match self.get(name)? {
            DecodedValue::Bernoulli(p) => Ok(*p),
            other => Err(kind_error(name, "bernoulli", other)),
        }
    }

    pub fn gaussian_mean(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            DecodedValue::GaussianMean(m) => Ok(m),
            other => Err(kind_error(name, "gaussian_mean", other)),
        }
    }

    pub fn gaussian_variance(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            DecodedValue::GaussianVariance(v) => Ok(v),
            other => Err(kind_error(name, "gaussian_variance", other)),
        }
    }
}

fn kind_error(name: &str, wanted: &str, got: &DecodedValue) -> Error {
    Error::Schema(format!("block `{name}` is not {wanted} (found {got:?})"))
}

/// Numerically stable softmax, clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]`
/// and renormalized.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    if logits.len() == 1 {
        return vec![1.0];
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p = (*p / z).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    }
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    probs
}

pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `ln(1 + e^x)`, floored at [`VARIANCE_FLOOR`].
pub fn softplus(x: f64) -> f64 {
    (x.max(0.0) + (-x.abs()).exp().ln_1p()).max(VARIANCE_FLOOR)
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn decode(schema: &ParamSchema, theta: &ParamVector) -> Result<DecodedParams> {
    let values = theta.values();
    if values.len() != schema.total_dim() {
        return Err(Error::DimensionMismatch {
            context: "decode",
            expected: schema.total_dim(),
            actual: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "parameter entry {i} is not finite ({})",
            values[i]
        )));
    }
    let blocks = schema
        .blocks()
        .iter()
        .map(|block| {
            let raw = &values[block.range()];
            let value = match block.kind {
                BlockKind::Categorical { .. } => DecodedValue::Categorical(softmax(raw)),
                BlockKind::Bernoulli => DecodedValue::Bernoulli(sigmoid(raw[0])),
                BlockKind::GaussianMean { .. } => DecodedValue::GaussianMean(raw.to_vec()),
                BlockKind::GaussianVariance { .. } => {
                    DecodedValue::GaussianVariance(raw.iter().map(|&x| softplus(x)).collect())
                }
            };
            DecodedBlock {
                name: block.name.clone(),
                value,
            }
        })
        .collect();
    Ok(DecodedParams { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mixed_schema() -> ParamSchema {
        ParamSchema::builder()
            .categorical("cat", 4)
            .bernoulli("flag")
            .gaussian_mean("mu", 2)
            .gaussian_variance("var", 2)
            .build()
            .unwrap()
    }

    #[test]
    fn uniform_logits_decode_to_uniform() {
        let schema = ParamSchema::builder().categorical("c", 4).build().unwrap();
        let d = decode(&schema, &ParamVector::zeros(4)).unwrap();
        for p in d.categorical("c").unwrap() {
            assert_eq!(*p, 0.25);
        }
    }

    #[test]
    fn bernoulli_zero_logit_is_half() {
        let schema = ParamSchema::builder().bernoulli("b").build().unwrap();
        let d = decode(&schema, &ParamVector::zeros(1)).unwrap();
        assert_eq!(d.bernoulli("b").unwrap(), 0.5);
    }

    #[test]
    fn variance_of_zero_is_ln_two() {
        let schema = ParamSchema::builder().gaussian_variance("v", 1).build().unwrap();
        let d = decode(&schema, &ParamVector::zeros(1)).unwrap();
        let v = d.gaussian_variance("v").unwrap()[0];
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((v - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-6, 0.05, 0.5, 1.0, 7.0, 45.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn contiguous_blocks_validate() {
        let blocks = vec![
            ParamBlock {
                name: "a".into(),
                kind: BlockKind::Categorical { arity: 3 },
                offset: 0,
                width: 3,
            },
            ParamBlock {
                name: "b".into(),
                kind: BlockKind::Bernoulli,
                offset: 3,
                width: 1,
            },
        ];
        let schema = ParamSchema::from_blocks(blocks).unwrap();
        assert_eq!(schema.total_dim(), 4);
    }

    #[test]
    fn overlapping_blocks_are_rejected() {
        let blocks = vec![
            ParamBlock {
                name: "a".into(),
                kind: BlockKind::Categorical { arity: 3 },
                offset: 0,
                width: 3,
            },
            ParamBlock {
                name: "b".into(),
                kind: BlockKind::Bernoulli,
                offset: 2,
                width: 1,
            },
        ];
        let err = ParamSchema::from_blocks(blocks).unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
    }

    #[test]
    fn gapped_blocks_are_rejected() {
        let blocks = vec![
            ParamBlock {
                name: "a".into(),
                kind: BlockKind::Bernoulli,
                offset: 0,
                width: 1,
            },
            ParamBlock {
                name: "b".into(),
                kind: BlockKind::Bernoulli,
                offset: 2,
                width: 1,
            },
        ];
        let err = ParamSchema::from_blocks(blocks).unwrap_err();
        assert!(err.to_string().contains("gap"), "{err}");
    }

    #[test]
    fn zero_arity_categorical_is_rejected() {
        let blocks = vec![ParamBlock {
            name: "empty".into(),
            kind: BlockKind::Categorical { arity: 0 },
            offset: 0,
            width: 0,
        }];
        let err = ParamSchema::from_blocks(blocks).unwrap_err();
        assert!(err.to_string().contains("arity 0"), "{err}");
    }

    #[test]
    fn decode_rejects_wrong_length_and_non_finite() {
        let schema = mixed_schema();
        assert!(matches!(
            decode(&schema, &ParamVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ParamVector::new(vec![0.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn decoded_params_satisfy_invariants(raw in proptest::collection::vec(-1e3f64..1e3, 9)) {
            let schema = mixed_schema();
            let d = decode(&schema, &ParamVector::new(raw).unwrap()).unwrap();
            let cat = d.categorical("cat").unwrap();
            let sum: f64 = cat.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(cat.iter().all(|&p| p > 0.0 && p < 1.0));
            let b = d.bernoulli("flag").unwrap();
            prop_assert!(b > 0.0 && b < 1.0);
            prop_assert!(d.gaussian_variance("var").unwrap().iter().all(|&v| v > 0.0));
        }

        #[test]
        fn softmax_is_shift_invariant(
            raw in proptest::collection::vec(-50f64..50.0, 9),
            c in -100f64..100.0,
        ) {
            let schema = mixed_schema();
            let base = decode(&schema, &ParamVector::new(raw.clone()).unwrap()).unwrap();
            let mut shifted = raw;
            for v in &mut shifted[0..4] {
                *v += c;
            }
            let moved = decode(&schema, &ParamVector::new(shifted).unwrap()).unwrap();
            let a = base.categorical("cat").unwrap();
            let b = moved.categorical("cat").unwrap();
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn decode_is_bit_deterministic(raw in proptest::collection::vec(-1e3f64..1e3, 9)) {
            let schema = mixed_schema();
            let theta = ParamVector::new(raw).unwrap();
            prop_assert_eq!(decode(&schema, &theta).unwrap(), decode(&schema, &theta).unwrap());
        }
    }
}
