//! Minimal deterministic neural-network core.
//!
//! A model is an ordered list of [`LayerParams`]: dense, valid-padding
//! stride-1 2D convolution, or an elementwise affine ("other") layer that is
//! trainable but never pruned. Hidden dense/conv layers are followed by ReLU;
//! the final layer produces linear logits and softmax lives inside the loss.
//!
//! Parameters are stored as `f32`. All numerical kernels are generic over
//! [`Real`] so gradients can be cross-checked in `f64`.

mod adam;
pub mod checkpoint;
mod ops;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

pub use adam::{AdamConfig, OptimizerState};
pub use ops::{
    evaluate, forward, last_layer_cosine_similarity, loss_and_gradient, predict, train_step,
    train_step_in_place, Batch,
};

/// Floating point type the kernels run on.
pub trait Real: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Other,
}

impl LayerKind {
    /// Only dense and convolutional layers take part in unlearning masks.
    pub fn is_prunable(self) -> bool {
        matches!(self, LayerKind::Dense | LayerKind::Conv2d)
    }

    pub fn code(self) -> u8 {
        match self {
            LayerKind::Dense => 0,
            LayerKind::Conv2d => 1,
            LayerKind::Other => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LayerKind::Dense),
            1 => Some(LayerKind::Conv2d),
            2 => Some(LayerKind::Other),
            _ => None,
        }
    }
}

/// One layer's parameters.
///
/// `shape` is the weight tensor shape: `[out, in]` for dense,
/// `[filters, channels, k, k]` for conv2d and `[features]` for the
/// elementwise affine layer. Weights are row-major over that shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub kind: LayerKind,
    pub shape: Vec<usize>,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn zeros(kind: LayerKind, shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        let bias_len = shape.first().copied().unwrap_or(0);
        Self {
            kind,
            shape,
            weights: vec![T::zero(); n],
            biases: vec![T::zero(); bias_len],
        }
    }

    /// Checks the weight/bias lengths against the declared shape.
    pub fn validate(&self) -> Result<()> {
        let expected_rank = match self.kind {
            LayerKind::Dense => 2,
            LayerKind::Conv2d => 4,
            LayerKind::Other => 1,
        };
        if self.shape.len() != expected_rank {
            return Err(Error::Config(format!(
                "{:?} layer needs a rank-{expected_rank} shape, got {:?}",
                self.kind, self.shape
            )));
        }
        if self.kind == LayerKind::Conv2d && self.shape[2] != self.shape[3] {
            return Err(Error::Config(format!(
                "conv2d kernels must be square, got {:?}",
                self.shape
            )));
        }
        let n: usize = self.shape.iter().product();
        if self.weights.len() != n {
            return Err(Error::Config(format!(
                "weight count {} does not match shape {:?}",
                self.weights.len(),
                self.shape
            )));
        }
        if self.biases.len() != self.shape[0] {
            return Err(Error::Config(format!(
                "bias count {} does not match shape {:?}",
                self.biases.len(),
                self.shape
            )));
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample `input` shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let flat: usize = input.iter().product();
        match self.kind {
            LayerKind::Dense => {
                if flat != self.shape[1] {
                    return Err(Error::Config(format!(
                        "dense layer expects {} inputs, got shape {input:?}",
                        self.shape[1]
                    )));
                }
                Ok(vec![self.shape[0]])
            }
            LayerKind::Conv2d => {
                let (c, k) = (self.shape[1], self.shape[2]);
                if input.len() != 3 || input[0] != c || input[1] < k || input[2] < k {
                    return Err(Error::Config(format!(
                        "conv2d layer with {c} channels and kernel {k} cannot take shape {input:?}"
                    )));
                }
                Ok(vec![self.shape[0], input[1] - k + 1, input[2] - k + 1])
            }
            LayerKind::Other => {
                if flat != self.shape[0] {
                    return Err(Error::Config(format!(
                        "affine layer expects {} features, got shape {input:?}",
                        self.shape[0]
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.is_finite())
    }

    fn same_structure<U>(&self, other: &LayerParams<U>) -> bool {
        self.kind == other.kind
            && self.shape == other.shape
            && self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
    }
}

/// Ordered list of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn new(layers: Vec<LayerParams<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        for layer in &layers {
            layer.validate()?;
        }
        Ok(Self { layers })
    }

    /// Same kinds, shapes and order.
    pub fn is_congruent<U>(&self, other: &ModelParams<U>) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_structure(b))
    }

    pub fn ensure_congruent<U>(&self, other: &ModelParams<U>) -> Result<()> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(Error::Config(
                "models are not structurally congruent".into(),
            ))
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.kind, l.shape.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |xs: &[T]| -> Vec<U> {
            xs.iter()
                .map(|&x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect()
        };
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    kind: l.kind,
                    shape: l.shape.clone(),
                    weights: conv(&l.weights),
                    biases: conv(&l.biases),
                })
                .collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.shape[0])
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Validates an input shape against the whole layer chain and returns
    /// the logit shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, layer| layer.output_shape(&shape))
    }

    /// Indices of dense/conv layers, in order.
    pub fn prunable_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.is_prunable())
            .map(|(i, _)| i)
    }
}

/// Reference architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    /// dense (ReLU dense)* for flat vector inputs. `input_affine` prepends a
    /// trainable elementwise scale/shift layer.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        num_classes: usize,
        #[serde(default)]
        input_affine: bool,
    },
    /// One conv2d + ReLU followed by a dense head, for `[C, H, W]` inputs.
    Conv {
        channels: usize,
        height: usize,
        width: usize,
        filters: usize,
        kernel: usize,
        num_classes: usize,
    },
}

impl ModelSpec {
    pub fn input_shape(&self) -> Vec<usize> {
        match *self {
            ModelSpec::Mlp { input_dim, .. } => vec![input_dim],
            ModelSpec::Conv {
                channels,
                height,
                width,
                ..
            } => vec![channels, height, width],
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            ModelSpec::Mlp { num_classes, .. } | ModelSpec::Conv { num_classes, .. } => num_classes,
        }
    }

    /// Glorot-uniform weights, zero biases; affine layers start at identity.
    pub fn init(&self, seed: u64) -> Result<ModelParams> {
        let mut rng = rng::from_seed(seed);
        let mut layers = Vec::new();
        let mut glorot = |shape: Vec<usize>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut layer = LayerParams::<f32>::zeros(
                if shape.len() == 4 {
                    LayerKind::Conv2d
                } else {
                    LayerKind::Dense
                },
                shape,
            );
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..=limit) as f32;
            }
            layer
        };
        match self {
            ModelSpec::Mlp {
                input_dim,
                hidden,
                num_classes,
                input_affine,
            } => {
                if *input_dim == 0 || *num_classes < 2 || hidden.contains(&0) {
                    return Err(Error::Config(format!("degenerate mlp spec {self:?}")));
                }
                if *input_affine {
                    let mut affine = LayerParams::zeros(LayerKind::Other, vec![*input_dim]);
                    affine.weights.fill(1.0);
                    layers.push(affine);
                }
                let mut fan_in = *input_dim;
                for &width in hidden.iter().chain(std::iter::once(num_classes)) {
                    layers.push(glorot(vec![width, fan_in], fan_in, width));
                    fan_in = width;
                }
            }
            ModelSpec::Conv {
                channels,
                height,
                width,
                filters,
                kernel,
                num_classes,
            } => {
                if *kernel == 0 || kernel > height || kernel > width || *num_classes < 2 {
                    return Err(Error::Config(format!("degenerate conv spec {self:?}")));
                }
                let k2 = kernel * kernel;
                layers.push(glorot(
                    vec![*filters, *channels, *kernel, *kernel],
                    channels * k2,
                    filters * k2,
                ));
                let flat = filters * (height - kernel + 1) * (width - kernel + 1);
                layers.push(glorot(vec![*num_classes, flat], flat, *num_classes));
            }
        }
        let model = ModelParams::new(layers)?;
        model.output_shape(&self.input_shape())?;
        Ok(model)
    }
}
