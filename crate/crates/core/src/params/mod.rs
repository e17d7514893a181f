//! Model representation, local training, canonical serialization, and model
//! hashing. Every other part of the system treats models as the opaque byte
//! strings produced here, so this module is the root of hash agreement:
//! all of it is bit-deterministic given inputs and seeds.

mod codec;
mod idx;
mod synthetic;
mod train;

pub use codec::{
    canonical_deserialize, canonical_encoded_len, canonical_serialize, model_hash, CodecError,
    MODEL_MAGIC,
};
pub use idx::{load_idx, write_idx_images, write_idx_labels, IdxError};
pub use synthetic::{gen_synthetic, gen_synthetic_skewed};
pub use train::{accuracy, evaluate, init_model, local_train, loss_and_grad};

use thiserror::Error;

use crate::digest::{sha256_parts, Hash32};

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parameter values must be finite")]
    NonFiniteValue,
    #[error("model length {got} does not match spec parameter count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("model spec digest does not match the spec in use")]
    SpecDigestMismatch,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("training diverged (non-finite weight) at step {step}")]
    Diverged { step: usize },
}

/// Which family of model the parameter vector parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Single linear layer followed by softmax.
    Logistic,
    /// Fully connected layers with ReLU hidden activations and a softmax
    /// output.
    Mlp,
}

/// Hidden-layer activation. Only ReLU is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Architecture description. `layer_dims` runs from the input dimension to
/// the class count; a logistic spec has exactly those two entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    kind: ModelKind,
    layer_dims: Vec<usize>,
    activation: Activation,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, classes: usize) -> Result<Self, ParamsError> {
        Self::new(ModelKind::Logistic, vec![input_dim, classes])
    }

    pub fn mlp(layer_dims: Vec<usize>) -> Result<Self, ParamsError> {
        Self::new(ModelKind::Mlp, layer_dims)
    }

    pub fn new(kind: ModelKind, layer_dims: Vec<usize>) -> Result<Self, ParamsError> {
        if layer_dims.len() < 2 {
            return Err(ParamsError::InvalidSpec(format!(
                "need at least input and output dims, got {} entries",
                layer_dims.len()
            )));
        }
        if kind == ModelKind::Logistic && layer_dims.len() != 2 {
            return Err(ParamsError::InvalidSpec(format!(
                "logistic model takes exactly [input, classes], got {} entries",
                layer_dims.len()
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(ParamsError::InvalidSpec("all layer dims must be >= 1".into()));
        }
        Ok(Self { kind, layer_dims, activation: Activation::Relu })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().expect("layer_dims len >= 2")
    }

    /// Weights then biases, layer by layer: sum of `in*out + out`.
    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Digest of the canonical spec encoding; stamped into every
    /// `ParameterVector` so mixed-architecture aggregation is detectable.
    pub fn digest(&self) -> Hash32 {
        let kind = [match self.kind {
            ModelKind::Logistic => 0u8,
            ModelKind::Mlp => 1u8,
        }];
        let act = [match self.activation {
            Activation::Relu => 0u8,
        }];
        let ndims = (self.layer_dims.len() as u32).to_le_bytes();
        let mut dims = Vec::with_capacity(self.layer_dims.len() * 8);
        for &d in &self.layer_dims {
            dims.extend_from_slice(&(d as u64).to_le_bytes());
        }
        sha256_parts(&[&kind, &act, &ndims, &dims])
    }
}

/// Flat, ordered model weights: for each layer the weight matrix in
/// row-major order (rows indexed by the layer input) followed by the biases.
///
/// Invariants: the length matches the owning spec's parameter count and
/// every value is finite. Construction enforces both; training re-checks
/// after every step.
#[derive(Clone, PartialEq)]
pub struct ParameterVector {
    spec_digest: Hash32,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(spec: &ModelSpec, values: Vec<f64>) -> Result<Self, ParamsError> {
        if values.len() != spec.param_count() {
            return Err(ParamsError::LengthMismatch {
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        Self::from_parts(spec.digest(), values)
    }

    /// Builds a vector from a digest and raw values. The count-vs-spec
    /// invariant cannot be checked here; callers must have derived both
    /// from a validated source.
    pub(crate) fn from_parts(spec_digest: Hash32, values: Vec<f64>) -> Result<Self, ParamsError> {
        if values.is_empty() {
            return Err(ParamsError::LengthMismatch { expected: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ParamsError::NonFiniteValue);
        }
        Ok(Self { spec_digest, values })
    }

    pub fn spec_digest(&self) -> Hash32 {
        self.spec_digest
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn matches(&self, spec: &ModelSpec) -> bool {
        self.spec_digest == spec.digest() && self.values.len() == spec.param_count()
    }
}

// Weights stay out of debug output; an averaged model is fine to show by
// digest, individual local models must never leak through logs.
impl std::fmt::Debug for ParameterVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "ParameterVector(len={}, spec={:?})",
            self.values.len(),
            self.spec_digest
        )
    }
}

/// Labeled feature matrix owned by one cluster.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    n: usize,
    d: usize,
    cluster_id: u32,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u32>,
        d: usize,
        cluster_id: u32,
    ) -> Result<Self, ParamsError> {
        if d == 0 {
            return Err(ParamsError::InvalidDataset("feature dim must be >= 1".into()));
        }
        if labels.is_empty() {
            return Err(ParamsError::InvalidDataset("dataset must hold at least one row".into()));
        }
        if features.len() != labels.len() * d {
            return Err(ParamsError::InvalidDataset(format!(
                "feature matrix is {} values, expected {} rows x {} dims",
                features.len(),
                labels.len(),
                d
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ParamsError::InvalidDataset("features must be finite".into()));
        }
        let n = labels.len();
        Ok(Self { features, labels, n, d, cluster_id })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn cluster_id(&self) -> u32 {
        self.cluster_id
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Copies the given rows into a new dataset (used for minibatches).
    pub fn subset(&self, indices: &[usize]) -> Result<Self, ParamsError> {
        if indices.is_empty() {
            return Err(ParamsError::EmptyBatch);
        }
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.d, self.cluster_id)
    }

    /// Pools several datasets into one (centralized-baseline input).
    pub fn pooled(parts: &[Dataset]) -> Result<Self, ParamsError> {
        let first = parts
            .first()
            .ok_or_else(|| ParamsError::InvalidDataset("nothing to pool".into()))?;
        let d = first.d;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.d != d {
                return Err(ParamsError::DimensionMismatch(format!(
                    "pooling dim {} with dim {}",
                    d, p.d
                )));
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Self::new(features, labels, d, first.cluster_id)
    }
}

/// Local-training knobs. A zero learning rate is allowed and makes training
/// an exact no-op, which keeps "no step" expressible and testable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

impl HyperParams {
    pub fn new(
        learning_rate: f64,
        batch_size: usize,
        local_epochs: usize,
        seed: u64,
    ) -> Result<Self, ParamsError> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(ParamsError::InvalidHyperParams(
                "learning rate must be finite and >= 0".into(),
            ));
        }
        if batch_size == 0 {
            return Err(ParamsError::InvalidHyperParams("batch size must be >= 1".into()));
        }
        if local_epochs == 0 {
            return Err(ParamsError::InvalidHyperParams("local epochs must be >= 1".into()));
        }
        Ok(Self { learning_rate, batch_size, local_epochs, seed })
    }
}
