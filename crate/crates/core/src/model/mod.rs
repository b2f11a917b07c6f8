//! Network assembly, parameter accounting, summaries and weight files.

mod builders;
mod summary;
mod weights;

pub use builders::{build_resnet50, build_small_cnn, build_vgg19, Architecture};
pub use summary::{format_shape, summarize};
pub use weights::{
    apply_weights, decode_weights, encode_weights, load_weights, save_weights, LoadReport, NamedTensor,
    WeightError, WEIGHT_MAGIC, WEIGHT_VERSION,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::{
    backward_all, forward_all, ForwardContext, Layer, NnError, Param, ParamTally,
};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("input size {size} must be a positive multiple of {multiple}")]
    InputSize { size: usize, multiple: usize },
    #[error("model needs at least one output, got {0}")]
    Outputs(usize),
    #[error("model {model} expects input {expected:?}, got {actual:?}")]
    Input {
        model: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// How the final layer's outputs are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// One logit per class, softmax cross-entropy.
    Softmax(usize),
    /// A single logit, sigmoid binary cross-entropy, threshold 0.5.
    Sigmoid,
}

/// A feature extractor (`base`) followed by a classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub base: Vec<Layer>,
    pub head: Vec<Layer>,
    /// Label names in output order; empty when unknown.
    pub class_names: Vec<String>,
    /// Base-layer gradients are computed but not applied during training.
    pub freeze_base: bool,
}

/// One summary row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub type_name: String,
    /// Per-sample output shape, channel-first.
    pub output_shape: Vec<usize>,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: u64,
    pub non_trainable: u64,
    pub total: u64,
    /// The base as a single row, then one row per head layer.
    pub per_layer: Vec<LayerCount>,
}

impl Model {
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.base.iter().chain(&self.head)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.base.iter_mut().chain(self.head.iter_mut())
    }

    fn chain(layers: &[Layer], input: &[usize]) -> Result<Vec<usize>, ModelError> {
        Ok(layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))?)
    }

    pub fn base_output_shape(&self) -> Result<Vec<usize>, ModelError> {
        Self::chain(&self.base, &self.input_shape)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>, ModelError> {
        Self::chain(&self.head, &self.base_output_shape()?)
    }

    /// Checks that consecutive layer shapes are compatible.
    pub fn validate(&self) -> Result<(), ModelError> {
        let out = self.output_shape()?;
        if out.len() != 1 || out[0] == 0 {
            return Err(ModelError::Outputs(out.iter().product()));
        }
        Ok(())
    }

    pub fn num_outputs(&self) -> usize {
        self.output_shape().map(|s| s[0]).unwrap_or(0)
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.num_outputs() {
            1 => HeadKind::Sigmoid,
            k => HeadKind::Softmax(k),
        }
    }

    /// Number of classes the head can distinguish.
    pub fn num_classes(&self) -> usize {
        match self.head_kind() {
            HeadKind::Sigmoid => 2,
            HeadKind::Softmax(k) => k,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn base_params(&self) -> Vec<&Param> {
        self.base.iter().flat_map(Layer::params).collect()
    }

    pub fn head_params(&self) -> Vec<&Param> {
        self.head.iter().flat_map(Layer::params).collect()
    }

    pub fn conv_count(&self) -> usize {
        self.layers().map(Layer::conv_count).sum()
    }

    /// Fresh weights drawn from `seed`.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in self.layers_mut() {
            layer.initialize(&mut rng);
        }
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor, ModelError> {
        if input.rank() != 4 || input.shape()[1..] != self.input_shape[..] {
            return Err(ModelError::Input {
                model: self.name.clone(),
                expected: self.input_shape.clone(),
                actual: input.shape().to_vec(),
            });
        }
        let features = forward_all(&mut self.base, input, ctx)?;
        Ok(forward_all(&mut self.head, &features, ctx)?)
    }

    /// Gradients for every parameter, aligned with [`Model::params`].
    pub fn backward(
        &self,
        ctx: &mut ForwardContext,
        upstream: &Tensor,
    ) -> Result<(Tensor, Vec<Tensor>), ModelError> {
        let head = backward_all(&self.head, ctx, upstream)?;
        let base = backward_all(&self.base, ctx, &head.input)?;
        Ok((base.input, base.params.into_iter().chain(head.params).collect()))
    }
}

/// Exact counts from layer hyperparameters; no tensor is inspected.
pub fn count_params(m: &Model) -> Result<ParamCount, ModelError> {
    let base_tally: ParamTally = m.base.iter().map(Layer::param_tally).sum();
    let mut per_layer = vec![LayerCount {
        name: m.name.clone(),
        type_name: "Functional".into(),
        output_shape: m.base_output_shape()?,
        params: base_tally.total(),
    }];
    let mut shape = m.base_output_shape()?;
    let mut total = base_tally;
    for layer in &m.head {
        shape = layer.output_shape(&shape)?;
        let tally = layer.param_tally();
        total = total + tally;
        per_layer.push(LayerCount {
            name: layer.name().to_string(),
            type_name: layer.type_name().to_string(),
            output_shape: shape.clone(),
            params: tally.total(),
        });
    }
    Ok(ParamCount {
        trainable: total.trainable,
        non_trainable: total.non_trainable,
        total: total.total(),
        per_layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_rejects_wrong_input() {
        let mut m = build_small_cnn(16, 1, 3, 0.5).unwrap();
        let x = Tensor::zeros(&[1, 1, 8, 8]);
        assert!(matches!(
            m.forward(&x, &mut ForwardContext::inference()),
            Err(ModelError::Input { .. })
        ));
    }

    #[test]
    fn head_kinds() {
        assert_eq!(build_small_cnn(16, 1, 1, 0.5).unwrap().head_kind(), HeadKind::Sigmoid);
        let m = build_small_cnn(16, 1, 4, 0.5).unwrap();
        assert_eq!(m.head_kind(), HeadKind::Softmax(4));
        assert_eq!(m.num_classes(), 4);
    }

    #[test]
    fn params_split_base_and_head() {
        let m = build_small_cnn(16, 1, 3, 0.5).unwrap();
        assert_eq!(m.params().len(), m.base_params().len() + m.head_params().len());
        assert_eq!(m.conv_count(), 2);
    }
}
