use super::{
    expect_cache, expect_rank, expect_upstream, Cache, ForwardContext, LayerGrads, NnError, Param,
    ParamTally, Result,
};
use crate::tensor::{gemm, gemm_acc, transpose, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

/// Fully connected layer `y = act(x·W + b)` with `W: [inputs, units]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub units: usize,
    pub activation: Activation,
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(
        name: impl Into<String>,
        inputs: usize,
        units: usize,
        activation: Activation,
    ) -> Result<Self> {
        let name = name.into();
        if inputs == 0 || units == 0 {
            return Err(NnError::Config(format!("{name}: inputs and units must be positive")));
        }
        Ok(Dense {
            weight: Param::new(format!("{name}/weight"), &[inputs, units], 0.0, true),
            bias: Param::new(format!("{name}/bias"), &[units], 0.0, true),
            name,
            inputs,
            units,
            activation,
        })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        expect_rank(&self.name, input, 1)?;
        if input[0] != self.inputs {
            return Err(NnError::ChannelMismatch {
                layer: self.name.clone(),
                expected: self.inputs,
                actual: input[0],
            });
        }
        Ok(vec![self.units])
    }

    pub fn param_tally(&self) -> ParamTally {
        ParamTally {
            trainable: (self.inputs * self.units + self.units) as u64,
            non_trainable: 0,
        }
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        expect_rank(&self.name, input.shape(), 2)?;
        self.output_shape(&input.shape()[1..])?;
        let n = input.shape()[0];
        let mut out = vec![0.0; n * self.units];
        gemm(n, self.inputs, self.units, input.data(), self.weight.value.data(), &mut out);
        for row in out.chunks_exact_mut(self.units) {
            for (v, b) in row.iter_mut().zip(self.bias.value.data()) {
                *v += b;
            }
        }
        let positive = match self.activation {
            Activation::Linear => None,
            Activation::Relu => {
                let mask: Vec<bool> = out.iter().map(|&v| v > 0.0).collect();
                for (v, &keep) in out.iter_mut().zip(&mask) {
                    if !keep {
                        *v = 0.0;
                    }
                }
                Some(mask)
            }
        };
        let out_shape = vec![n, self.units];
        ctx.push(Cache::Dense {
            input: input.clone(),
            positive,
            out_shape: out_shape.clone(),
        });
        Ok(Tensor::from_vec(&out_shape, out)?)
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let (input, positive, out_shape) = expect_cache!(ctx, &self.name,
            Cache::Dense { input, positive, out_shape } => (input, positive, out_shape));
        expect_upstream(&self.name, &out_shape, upstream)?;
        let n = input.shape()[0];
        let mut d_pre = upstream.data().to_vec();
        if let Some(mask) = positive {
            for (g, keep) in d_pre.iter_mut().zip(mask) {
                if !keep {
                    *g = 0.0;
                }
            }
        }
        let input_t = transpose(n, self.inputs, input.data());
        let mut d_weight = vec![0.0; self.inputs * self.units];
        gemm_acc(self.inputs, n, self.units, &input_t, &d_pre, &mut d_weight);
        let mut d_bias = vec![0.0; self.units];
        for row in d_pre.chunks_exact(self.units) {
            for (db, g) in d_bias.iter_mut().zip(row) {
                *db += g;
            }
        }
        let weight_t = transpose(self.inputs, self.units, self.weight.value.data());
        let mut d_input = vec![0.0; n * self.inputs];
        gemm(n, self.units, self.inputs, &d_pre, &weight_t, &mut d_input);
        Ok(LayerGrads {
            input: Tensor::from_vec(input.shape(), d_input)?,
            params: vec![
                Tensor::from_vec(&[self.inputs, self.units], d_weight)?,
                Tensor::from_vec(&[self.units], d_bias)?,
            ],
        })
    }
}
