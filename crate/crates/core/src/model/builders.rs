use std::fmt;
use std::str::FromStr;

use super::{Model, ModelError};
use crate::nn::{
    Activation, BatchNorm, Bottleneck, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool, NnError,
    Padding, Relu,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Vgg19,
    Resnet50,
    /// Two conv/pool blocks and the standard head; sized for desk-scale runs.
    SmallCnn,
}

impl Architecture {
    pub fn build(
        self,
        input_hw: usize,
        num_outputs: usize,
        head_width: usize,
        dropout: f64,
    ) -> Result<Model, ModelError> {
        match self {
            Architecture::Vgg19 => build_vgg19(input_hw, num_outputs, head_width, dropout),
            Architecture::Resnet50 => build_resnet50(input_hw, num_outputs, head_width, dropout),
            Architecture::SmallCnn => build_small_cnn(input_hw, 1, num_outputs, dropout),
        }
    }

    pub fn default_input_size(self) -> usize {
        match self {
            Architecture::Vgg19 | Architecture::Resnet50 => 128,
            Architecture::SmallCnn => 32,
        }
    }

    pub fn input_multiple(self) -> usize {
        match self {
            Architecture::Vgg19 | Architecture::Resnet50 => 32,
            Architecture::SmallCnn => 4,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Vgg19 => "vgg19",
            Architecture::Resnet50 => "resnet50",
            Architecture::SmallCnn => "small",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vgg19" => Ok(Architecture::Vgg19),
            "resnet50" => Ok(Architecture::Resnet50),
            "small" => Ok(Architecture::SmallCnn),
            other => Err(format!("unknown model {other:?} (expected vgg19, resnet50 or small)")),
        }
    }
}

fn check_size(size: usize, multiple: usize) -> Result<(), ModelError> {
    if size == 0 || size % multiple != 0 {
        return Err(ModelError::InputSize { size, multiple });
    }
    Ok(())
}

/// flatten → dense(width, relu) → dropout → dense(outputs)
fn head(features: usize, head_width: usize, dropout: f64, outputs: usize) -> Result<Vec<Layer>, ModelError> {
    if outputs == 0 {
        return Err(ModelError::Outputs(outputs));
    }
    Ok(vec![
        Layer::Flatten(Flatten::new("flatten")),
        Layer::Dense(Dense::new("dense", features, head_width, Activation::Relu)?),
        Layer::Dropout(Dropout::new("dropout", dropout)?),
        Layer::Dense(Dense::new("dense_1", head_width, outputs, Activation::Linear)?),
    ])
}

fn finish(
    name: &str,
    input_shape: Vec<usize>,
    base: Vec<Layer>,
    head_width: usize,
    dropout: f64,
    outputs: usize,
) -> Result<Model, ModelError> {
    let mut model = Model {
        name: name.to_string(),
        input_shape,
        base,
        head: Vec::new(),
        class_names: Vec::new(),
        freeze_base: false,
    };
    let features: usize = model.base_output_shape()?.iter().product();
    model.head = head(features, head_width, dropout, outputs)?;
    model.validate()?;
    Ok(model)
}

/// VGG-19 feature stack (conv blocks 2-2-4-4-4 of 64/128/256/512/512
/// filters, 3×3 same padding, ReLU, five 2×2 max pools) over a 3-channel
/// input, followed by the dense head.
pub fn build_vgg19(
    input_hw: usize,
    num_outputs: usize,
    head_width: usize,
    dropout: f64,
) -> Result<Model, ModelError> {
    check_size(input_hw, 32)?;
    let mut base = Vec::new();
    let mut channels = 3;
    for (block, (convs, filters)) in [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)]
        .into_iter()
        .enumerate()
    {
        let b = block + 1;
        for i in 1..=convs {
            base.push(Layer::Conv2d(Conv2d::new(
                format!("vgg19/block{b}_conv{i}"),
                channels,
                filters,
                3,
                1,
                Padding::Same,
                true,
            )?));
            base.push(Layer::Relu(Relu::new(format!("vgg19/block{b}_relu{i}"))));
            channels = filters;
        }
        base.push(Layer::MaxPool(MaxPool::halving(format!("vgg19/block{b}_pool"))));
    }
    finish("vgg19", vec![3, input_hw, input_hw], base, head_width, dropout, num_outputs)
}

/// ResNet-50: 7×7/2 stem with batch normalization and ReLU, 3×3/2 max
/// pool, then bottleneck stages of 3, 4, 6 and 3 blocks ending at 256, 512,
/// 1024 and 2048 channels. Each stage opens with a projection block; stages
/// after the first halve the resolution.
pub fn build_resnet50(
    input_hw: usize,
    num_outputs: usize,
    head_width: usize,
    dropout: f64,
) -> Result<Model, ModelError> {
    check_size(input_hw, 32)?;
    let mut base = vec![
        Layer::Conv2d(Conv2d::new("resnet50/conv1", 3, 64, 7, 2, Padding::Explicit(3), true)?),
        Layer::BatchNorm(BatchNorm::new("resnet50/conv1_bn", 64)?),
        Layer::Relu(Relu::new("resnet50/conv1_relu")),
        Layer::MaxPool(MaxPool::new("resnet50/pool1", 3, 2, 1)?),
    ];
    let mut channels = 64;
    for (stage, (blocks, width)) in [(3, 64), (4, 128), (6, 256), (3, 512)].into_iter().enumerate() {
        let out = width * 4;
        for block in 0..blocks {
            let stride = if block == 0 && stage > 0 { 2 } else { 1 };
            base.push(Layer::Residual(Box::new(Bottleneck::new(
                format!("resnet50/conv{}_block{}", stage + 2, block + 1),
                channels,
                width,
                out,
                stride,
                block == 0,
            )?)));
            channels = out;
        }
    }
    finish("resnet50", vec![3, input_hw, input_hw], base, head_width, dropout, num_outputs)
}

/// Two conv(3×3, same) → ReLU → 2×2 max-pool blocks with 8 and 16 filters,
/// then flatten → dense(32, relu) → dropout → dense(outputs).
pub fn build_small_cnn(
    input_hw: usize,
    channels: usize,
    num_outputs: usize,
    dropout: f64,
) -> Result<Model, ModelError> {
    check_size(input_hw, 4)?;
    if channels == 0 {
        return Err(NnError::Config("zero input channels".into()).into());
    }
    let base = vec![
        Layer::Conv2d(Conv2d::new("small/conv1", channels, 8, 3, 1, Padding::Same, true)?),
        Layer::Relu(Relu::new("small/relu1")),
        Layer::MaxPool(MaxPool::halving("small/pool1")),
        Layer::Conv2d(Conv2d::new("small/conv2", 8, 16, 3, 1, Padding::Same, true)?),
        Layer::Relu(Relu::new("small/relu2")),
        Layer::MaxPool(MaxPool::halving("small/pool2")),
    ];
    finish("small", vec![channels, input_hw, input_hw], base, 32, dropout, num_outputs)
}
