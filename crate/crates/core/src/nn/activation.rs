//! Parameter-free layers.

use rand::Rng;

use super::{
    expect_cache, expect_rank, expect_upstream, Cache, ForwardContext, LayerGrads, NnError, Result,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Relu {
    pub name: String,
}

impl Relu {
    pub fn new(name: impl Into<String>) -> Self {
        Relu { name: name.into() }
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        ctx.push(Cache::Relu {
            positive: input.data().iter().map(|&v| v > 0.0).collect(),
        });
        Ok(input.map(|v| if v > 0.0 { v } else { 0.0 }))
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let positive = expect_cache!(ctx, &self.name, Cache::Relu { positive } => positive);
        if positive.len() != upstream.len() {
            return Err(NnError::UpstreamShape {
                layer: self.name.clone(),
                expected: vec![positive.len()],
                actual: upstream.shape().to_vec(),
            });
        }
        let mut grad = upstream.clone();
        for (g, keep) in grad.data_mut().iter_mut().zip(positive) {
            if !keep {
                *g = 0.0;
            }
        }
        Ok(LayerGrads {
            input: grad,
            params: Vec::new(),
        })
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` during
/// training so evaluation is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub name: String,
    pub rate: f64,
}

impl Dropout {
    pub fn new(name: impl Into<String>, rate: f64) -> Result<Self> {
        let name = name.into();
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::DropoutRate { layer: name, rate });
        }
        Ok(Dropout { name, rate })
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        if !ctx.is_training() || self.rate == 0.0 {
            ctx.push(Cache::Dropout { scale: None });
            return Ok(input.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let rate = self.rate;
        let rng = ctx.rng();
        let scale: Vec<f64> = (0..input.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut out = input.clone();
        for (v, s) in out.data_mut().iter_mut().zip(&scale) {
            *v *= s;
        }
        ctx.push(Cache::Dropout { scale: Some(scale) });
        Ok(out)
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let scale = expect_cache!(ctx, &self.name, Cache::Dropout { scale } => scale);
        let mut grad = upstream.clone();
        if let Some(scale) = scale {
            if scale.len() != grad.len() {
                return Err(NnError::UpstreamShape {
                    layer: self.name.clone(),
                    expected: vec![scale.len()],
                    actual: upstream.shape().to_vec(),
                });
            }
            for (g, s) in grad.data_mut().iter_mut().zip(scale) {
                *g *= s;
            }
        }
        Ok(LayerGrads {
            input: grad,
            params: Vec::new(),
        })
    }
}

/// Collapses every non-batch dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Flatten {
    pub name: String,
}

impl Flatten {
    pub fn new(name: impl Into<String>) -> Self {
        Flatten { name: name.into() }
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        let s = input.shape();
        if s.is_empty() {
            return Err(NnError::Rank {
                layer: self.name.clone(),
                expected: 2,
                actual: s.to_vec(),
            });
        }
        let features: usize = s[1..].iter().product();
        ctx.push(Cache::Reshape {
            input_shape: s.to_vec(),
        });
        Ok(input.reshape(&[s[0], features])?)
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let input_shape =
            expect_cache!(ctx, &self.name, Cache::Reshape { input_shape } => input_shape);
        Ok(LayerGrads {
            input: upstream.reshape(&input_shape)?,
            params: Vec::new(),
        })
    }
}

/// Spatial mean per channel: `[N,C,H,W] → [N,C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalAvgPool {
    pub name: String,
}

impl GlobalAvgPool {
    pub fn new(name: impl Into<String>) -> Self {
        GlobalAvgPool { name: name.into() }
    }

    pub fn output_shape(&self, chw: &[usize]) -> Result<Vec<usize>> {
        expect_rank(&self.name, chw, 3)?;
        Ok(vec![chw[0]])
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        expect_rank(&self.name, input.shape(), 4)?;
        let s = input.shape();
        let plane = s[2] * s[3];
        let means = input
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        ctx.push(Cache::GlobalAvgPool {
            input_shape: s.to_vec(),
        });
        Ok(Tensor::from_vec(&[s[0], s[1]], means)?)
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let input_shape =
            expect_cache!(ctx, &self.name, Cache::GlobalAvgPool { input_shape } => input_shape);
        expect_upstream(&self.name, &input_shape[..2], upstream)?;
        let plane = input_shape[2] * input_shape[3];
        let data = upstream
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / plane as f64, plane))
            .collect();
        Ok(LayerGrads {
            input: Tensor::from_vec(&input_shape, data)?,
            params: Vec::new(),
        })
    }
}
