use super::{
    backward_all, expect_cache, expect_upstream, forward_all, BatchNorm, Cache, Conv2d,
    ForwardContext, Layer, LayerGrads, NnError, Padding, Param, ParamTally, Relu, Result,
};
use crate::tensor::Tensor;

/// Bottleneck residual unit: `relu(branch(x) + shortcut(x))`.
///
/// The branch is 1×1 reduce, 3×3, 1×1 expand, each followed by batch
/// normalization (ReLU between). The shortcut is the identity, or a strided
/// 1×1 projection with batch normalization when the shape changes. The
/// block's stride sits on the first 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub name: String,
    pub branch: Vec<Layer>,
    pub shortcut: Vec<Layer>,
}

impl Bottleneck {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        width: usize,
        out_channels: usize,
        stride: usize,
        project: bool,
    ) -> Result<Self> {
        let name = name.into();
        let p = |s: &str| format!("{name}/{s}");
        let branch = vec![
            Layer::Conv2d(Conv2d::new(p("conv1"), in_channels, width, 1, stride, Padding::Valid, true)?),
            Layer::BatchNorm(BatchNorm::new(p("bn1"), width)?),
            Layer::Relu(Relu::new(p("relu1"))),
            Layer::Conv2d(Conv2d::new(p("conv2"), width, width, 3, 1, Padding::Same, true)?),
            Layer::BatchNorm(BatchNorm::new(p("bn2"), width)?),
            Layer::Relu(Relu::new(p("relu2"))),
            Layer::Conv2d(Conv2d::new(p("conv3"), width, out_channels, 1, 1, Padding::Valid, true)?),
            Layer::BatchNorm(BatchNorm::new(p("bn3"), out_channels)?),
        ];
        let shortcut = if project {
            vec![
                Layer::Conv2d(Conv2d::new(
                    p("proj"),
                    in_channels,
                    out_channels,
                    1,
                    stride,
                    Padding::Valid,
                    true,
                )?),
                Layer::BatchNorm(BatchNorm::new(p("proj_bn"), out_channels)?),
            ]
        } else {
            Vec::new()
        };
        Ok(Bottleneck {
            name,
            branch,
            shortcut,
        })
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.branch.iter().chain(&self.shortcut)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.branch.iter_mut().chain(self.shortcut.iter_mut())
    }

    fn chain_shape(layers: &[Layer], input: &[usize]) -> Result<Vec<usize>> {
        layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let branch = Self::chain_shape(&self.branch, input)?;
        let shortcut = Self::chain_shape(&self.shortcut, input)?;
        if branch != shortcut {
            return Err(NnError::ResidualShape {
                layer: self.name.clone(),
                branch,
                shortcut,
            });
        }
        Ok(branch)
    }

    pub fn param_tally(&self) -> ParamTally {
        self.layers().map(Layer::param_tally).sum()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        let branch = forward_all(&mut self.branch, input, ctx)?;
        let shortcut = forward_all(&mut self.shortcut, input, ctx)?;
        if branch.shape() != shortcut.shape() {
            return Err(NnError::ResidualShape {
                layer: self.name.clone(),
                branch: branch.shape().to_vec(),
                shortcut: shortcut.shape().to_vec(),
            });
        }
        let sum = branch.add(&shortcut)?;
        ctx.push(Cache::Residual {
            positive: sum.data().iter().map(|&v| v > 0.0).collect(),
        });
        Ok(sum.map(|v| if v > 0.0 { v } else { 0.0 }))
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let positive = expect_cache!(ctx, &self.name, Cache::Residual { positive } => positive);
        if positive.len() != upstream.len() {
            expect_upstream(&self.name, &[positive.len()], upstream)?;
        }
        let mut grad = upstream.clone();
        for (g, keep) in grad.data_mut().iter_mut().zip(positive) {
            if !keep {
                *g = 0.0;
            }
        }
        // shortcut caches were pushed last, so they come off the tape first
        let shortcut = backward_all(&self.shortcut, ctx, &grad)?;
        let branch = backward_all(&self.branch, ctx, &grad)?;
        Ok(LayerGrads {
            input: branch.input.add(&shortcut.input)?,
            params: branch.params.into_iter().chain(shortcut.params).collect(),
        })
    }
}
