//! Layers with hand-written forward and backward passes.
//!
//! A forward pass records one cache entry per layer on the
//! [`ForwardContext`] tape; `backward` consumes them in reverse order. Nested
//! residual blocks push their children's caches before their own, so a
//! strict last-in-first-out walk recovers every entry.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod loss;
mod pool;
mod residual;

pub use activation::{Dropout, Flatten, GlobalAvgPool, Relu};
pub use batchnorm::BatchNorm;
pub use conv::{Conv2d, Padding};
pub use dense::{Activation, Dense};
pub use loss::{sigmoid_bce, softmax_cross_entropy, LossOutput};
pub use pool::MaxPool;
pub use residual::Bottleneck;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{layer}: expected input of rank {expected}, got shape {actual:?}")]
    Rank {
        layer: String,
        expected: usize,
        actual: Vec<usize>,
    },
    #[error("{layer}: expected {expected} input channels/features, got {actual}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },
    #[error("{layer}: kernel {kernel} exceeds padded input {padded}")]
    KernelTooLarge {
        layer: String,
        kernel: usize,
        padded: usize,
    },
    #[error("{layer}: {size}x{size} pooling with stride {size} needs spatial dims divisible by {size}, got {height}x{width}")]
    UntiledPool {
        layer: String,
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("{layer}: dropout rate must lie in [0, 1), got {rate}")]
    DropoutRate { layer: String, rate: f64 },
    #[error("{layer}: batch normalization in training mode needs a batch of at least 2, got {batch}")]
    BatchTooSmall { layer: String, batch: usize },
    #[error("{layer}: branch output {branch:?} does not match shortcut output {shortcut:?}")]
    ResidualShape {
        layer: String,
        branch: Vec<usize>,
        shortcut: Vec<usize>,
    },
    #[error("{layer}: no forward cache available for backward")]
    MissingCache { layer: String },
    #[error("{layer}: upstream gradient shape {actual:?} differs from forward output {expected:?}")]
    UpstreamShape {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("expected {expected} labels, got {actual}")]
    LabelCount { expected: usize, actual: usize },
    #[error("softmax needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid layer configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass state: mode, dropout randomness and the backward tape.
pub struct ForwardContext {
    mode: Mode,
    rng: ChaCha8Rng,
    record: bool,
    tape: Vec<Cache>,
}

impl ForwardContext {
    /// Training mode; dropout masks are drawn from `seed`.
    pub fn train(seed: u64) -> Self {
        ForwardContext {
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            record: true,
            tape: Vec::new(),
        }
    }

    /// Evaluation mode, recording caches so gradients can still be taken.
    pub fn eval() -> Self {
        ForwardContext {
            mode: Mode::Eval,
            rng: ChaCha8Rng::seed_from_u64(0),
            record: true,
            tape: Vec::new(),
        }
    }

    /// Evaluation mode without caches.
    pub fn inference() -> Self {
        ForwardContext {
            record: false,
            ..Self::eval()
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        debug_assert!(self.is_training(), "eval mode must not draw randomness");
        &mut self.rng
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    pub(crate) fn push(&mut self, cache: Cache) {
        if self.record {
            self.tape.push(cache);
        }
    }

    pub(crate) fn pop(&mut self, layer: &str) -> Result<Cache> {
        self.tape.pop().ok_or_else(|| NnError::MissingCache {
            layer: layer.to_string(),
        })
    }
}

/// Forward-pass state retained for the backward pass.
#[derive(Debug)]
pub(crate) enum Cache {
    Conv { input: Tensor, out_shape: Vec<usize> },
    Pool { input_shape: Vec<usize>, out_shape: Vec<usize>, argmax: Vec<usize> },
    Relu { positive: Vec<bool> },
    Dense { input: Tensor, positive: Option<Vec<bool>>, out_shape: Vec<usize> },
    Dropout { scale: Option<Vec<f64>> },
    BatchNorm { normalized: Tensor, inv_std: Vec<f64>, train: bool },
    Residual { positive: Vec<bool> },
    Reshape { input_shape: Vec<usize> },
    GlobalAvgPool { input_shape: Vec<usize> },
}

macro_rules! expect_cache {
    ($ctx:expr, $name:expr, $pat:pat => $body:expr) => {
        match $ctx.pop($name)? {
            $pat => $body,
            _ => {
                return Err(NnError::MissingCache {
                    layer: $name.to_string(),
                })
            }
        }
    };
}
pub(crate) use expect_cache;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Param {
    pub(crate) fn new(name: String, shape: &[usize], fill: f64, trainable: bool) -> Self {
        Param {
            name,
            value: Tensor::filled(shape, fill).expect("parameter shapes are nonzero"),
            trainable,
        }
    }
}

/// Parameter totals split by trainability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParamTally {
    pub trainable: u64,
    pub non_trainable: u64,
}

impl ParamTally {
    pub fn total(&self) -> u64 {
        self.trainable + self.non_trainable
    }
}

impl std::ops::Add for ParamTally {
    type Output = ParamTally;
    fn add(self, o: ParamTally) -> ParamTally {
        ParamTally {
            trainable: self.trainable + o.trainable,
            non_trainable: self.non_trainable + o.non_trainable,
        }
    }
}

impl std::iter::Sum for ParamTally {
    fn sum<I: Iterator<Item = ParamTally>>(iter: I) -> Self {
        iter.fold(ParamTally::default(), |a, b| a + b)
    }
}

/// Gradients returned by a layer's backward pass. `params` is aligned with
/// [`Layer::params`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub input: Tensor,
    pub params: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool(MaxPool),
    Relu(Relu),
    Dense(Dense),
    Dropout(Dropout),
    BatchNorm(BatchNorm),
    Residual(Box<Bottleneck>),
    Flatten(Flatten),
    GlobalAvgPool(GlobalAvgPool),
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv2d(l) => &l.name,
            Layer::MaxPool(l) => &l.name,
            Layer::Relu(l) => &l.name,
            Layer::Dense(l) => &l.name,
            Layer::Dropout(l) => &l.name,
            Layer::BatchNorm(l) => &l.name,
            Layer::Residual(l) => &l.name,
            Layer::Flatten(l) => &l.name,
            Layer::GlobalAvgPool(l) => &l.name,
        }
    }

    /// Type label in the style of the summary tables.
    pub fn type_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "Conv2D",
            Layer::MaxPool(_) => "MaxPooling2D",
            Layer::Relu(_) => "ReLU",
            Layer::Dense(_) => "Dense",
            Layer::Dropout(_) => "Dropout",
            Layer::BatchNorm(_) => "BatchNormalization",
            Layer::Residual(_) => "Bottleneck",
            Layer::Flatten(_) => "Flatten",
            Layer::GlobalAvgPool(_) => "GlobalAveragePooling2D",
        }
    }

    /// Per-sample output shape (no batch dimension) for a per-sample input
    /// shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::MaxPool(l) => l.output_shape(input),
            Layer::Relu(_) | Layer::Dropout(_) => Ok(input.to_vec()),
            Layer::Dense(l) => l.output_shape(input),
            Layer::BatchNorm(l) => l.output_shape(input),
            Layer::Residual(l) => l.output_shape(input),
            Layer::Flatten(_) => Ok(vec![input.iter().product()]),
            Layer::GlobalAvgPool(l) => l.output_shape(input),
        }
    }

    /// Parameter counts derived from hyperparameters alone.
    pub fn param_tally(&self) -> ParamTally {
        match self {
            Layer::Conv2d(l) => l.param_tally(),
            Layer::Dense(l) => l.param_tally(),
            Layer::BatchNorm(l) => l.param_tally(),
            Layer::Residual(l) => l.param_tally(),
            Layer::MaxPool(_)
            | Layer::Relu(_)
            | Layer::Dropout(_)
            | Layer::Flatten(_)
            | Layer::GlobalAvgPool(_) => ParamTally::default(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => l.params(),
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => l.params(),
            Layer::Residual(l) => l.params(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => l.params_mut(),
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => l.params_mut(),
            Layer::Residual(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    /// Number of convolution layers, including those nested in blocks.
    pub fn conv_count(&self) -> usize {
        match self {
            Layer::Conv2d(_) => 1,
            Layer::Residual(b) => b.layers().map(Layer::conv_count).sum(),
            _ => 0,
        }
    }

    /// He-normal weights, zero biases; normalization layers reset to the
    /// identity transform.
    pub fn initialize(&mut self, rng: &mut ChaCha8Rng) {
        let he = |p: &mut Param, fan_in: usize, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive fan-in");
            for w in p.value.data_mut() {
                *w = normal.sample(rng);
            }
        };
        match self {
            Layer::Conv2d(l) => {
                let fan_in = l.in_channels * l.kernel * l.kernel;
                he(&mut l.weight, fan_in, rng);
                if let Some(b) = &mut l.bias {
                    b.value.data_mut().fill(0.0);
                }
            }
            Layer::Dense(l) => {
                he(&mut l.weight, l.inputs, rng);
                l.bias.value.data_mut().fill(0.0);
            }
            Layer::BatchNorm(l) => l.reset(),
            Layer::Residual(b) => {
                for child in b.layers_mut() {
                    child.initialize(rng);
                }
            }
            _ => {}
        }
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        match self {
            Layer::Conv2d(l) => l.forward(input, ctx),
            Layer::MaxPool(l) => l.forward(input, ctx),
            Layer::Relu(l) => l.forward(input, ctx),
            Layer::Dense(l) => l.forward(input, ctx),
            Layer::Dropout(l) => l.forward(input, ctx),
            Layer::BatchNorm(l) => l.forward(input, ctx),
            Layer::Residual(l) => l.forward(input, ctx),
            Layer::Flatten(l) => l.forward(input, ctx),
            Layer::GlobalAvgPool(l) => l.forward(input, ctx),
        }
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        match self {
            Layer::Conv2d(l) => l.backward(ctx, upstream),
            Layer::MaxPool(l) => l.backward(ctx, upstream),
            Layer::Relu(l) => l.backward(ctx, upstream),
            Layer::Dense(l) => l.backward(ctx, upstream),
            Layer::Dropout(l) => l.backward(ctx, upstream),
            Layer::BatchNorm(l) => l.backward(ctx, upstream),
            Layer::Residual(l) => l.backward(ctx, upstream),
            Layer::Flatten(l) => l.backward(ctx, upstream),
            Layer::GlobalAvgPool(l) => l.backward(ctx, upstream),
        }
    }
}

pub(crate) fn expect_rank(layer: &str, t: &[usize], rank: usize) -> Result<()> {
    if t.len() != rank {
        return Err(NnError::Rank {
            layer: layer.to_string(),
            expected: rank,
            actual: t.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn expect_upstream(layer: &str, expected: &[usize], upstream: &Tensor) -> Result<()> {
    if upstream.shape() != expected {
        return Err(NnError::UpstreamShape {
            layer: layer.to_string(),
            expected: expected.to_vec(),
            actual: upstream.shape().to_vec(),
        });
    }
    Ok(())
}

/// Runs `layers` in order.
pub fn forward_all(layers: &mut [Layer], input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
    let mut h = input.clone();
    for layer in layers.iter_mut() {
        h = layer.forward(&h, ctx)?;
    }
    Ok(h)
}

/// Backpropagates through `layers` (which must have just run forward on
/// `ctx`). Parameter gradients come back in the order of the layers'
/// `params()`.
pub fn backward_all(
    layers: &[Layer],
    ctx: &mut ForwardContext,
    upstream: &Tensor,
) -> Result<LayerGrads> {
    let mut grad = upstream.clone();
    let mut per_layer = Vec::with_capacity(layers.len());
    for layer in layers.iter().rev() {
        let g = layer.backward(ctx, &grad)?;
        grad = g.input;
        per_layer.push(g.params);
    }
    Ok(LayerGrads {
        input: grad,
        params: per_layer.into_iter().rev().flatten().collect(),
    })
}
