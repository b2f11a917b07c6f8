use super::{
    expect_cache, expect_upstream, Cache, ForwardContext, LayerGrads, NnError, Param, ParamTally,
    Result,
};
use crate::tensor::Tensor;

/// Per-channel batch normalization over `[N,C,H,W]` (or `[N,C]`) inputs.
///
/// Training normalizes with biased batch statistics and folds them into the
/// moving averages; evaluation uses the moving averages only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub moving_mean: Param,
    pub moving_var: Param,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Result<Self> {
        let name = name.into();
        if channels == 0 {
            return Err(NnError::Config(format!("{name}: zero channels")));
        }
        Ok(BatchNorm {
            gamma: Param::new(format!("{name}/gamma"), &[channels], 1.0, true),
            beta: Param::new(format!("{name}/beta"), &[channels], 0.0, true),
            moving_mean: Param::new(format!("{name}/moving_mean"), &[channels], 0.0, false),
            moving_var: Param::new(format!("{name}/moving_var"), &[channels], 1.0, false),
            name,
            channels,
            epsilon: 1e-5,
            momentum: 0.99,
        })
    }

    pub(crate) fn reset(&mut self) {
        self.gamma.value.data_mut().fill(1.0);
        self.beta.value.data_mut().fill(0.0);
        self.moving_mean.value.data_mut().fill(0.0);
        self.moving_var.value.data_mut().fill(1.0);
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if !(input.len() == 1 || input.len() == 3) {
            return Err(NnError::Rank {
                layer: self.name.clone(),
                expected: 3,
                actual: input.to_vec(),
            });
        }
        if input[0] != self.channels {
            return Err(NnError::ChannelMismatch {
                layer: self.name.clone(),
                expected: self.channels,
                actual: input[0],
            });
        }
        Ok(input.to_vec())
    }

    pub fn param_tally(&self) -> ParamTally {
        ParamTally {
            trainable: 2 * self.channels as u64,
            non_trainable: 2 * self.channels as u64,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.moving_mean, &self.moving_var]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.moving_mean,
            &mut self.moving_var,
        ]
    }

    /// (batch, spatial size) after validating the input.
    fn layout(&self, input: &Tensor) -> Result<(usize, usize)> {
        let s = input.shape();
        if s.len() < 2 {
            return Err(NnError::Rank {
                layer: self.name.clone(),
                expected: 4,
                actual: s.to_vec(),
            });
        }
        self.output_shape(&s[1..])?;
        Ok((s[0], s[2..].iter().product()))
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        let (n, plane) = self.layout(input)?;
        let c = self.channels;
        let x = input.data();
        let train = ctx.is_training();
        if train && n < 2 {
            return Err(NnError::BatchTooSmall {
                layer: self.name.clone(),
                batch: n,
            });
        }
        let (mean, var) = if train {
            let count = (n * plane) as f64;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for b in 0..n {
                for (ch, m) in mean.iter_mut().enumerate() {
                    *m += x[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for b in 0..n {
                for ch in 0..c {
                    var[ch] += x[(b * c + ch) * plane..][..plane]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let keep = self.momentum;
            for ch in 0..c {
                let mm = &mut self.moving_mean.value.data_mut()[ch];
                *mm = keep * *mm + (1.0 - keep) * mean[ch];
                let mv = &mut self.moving_var.value.data_mut()[ch];
                *mv = keep * *mv + (1.0 - keep) * var[ch];
            }
            (mean, var)
        } else {
            (
                self.moving_mean.value.data().to_vec(),
                self.moving_var.value.data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut normalized = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    normalized[i] = xh;
                    out[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        ctx.push(Cache::BatchNorm {
            normalized: Tensor::from_vec(input.shape(), normalized)?,
            inv_std,
            train,
        });
        Ok(Tensor::from_vec(input.shape(), out)?)
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let (normalized, inv_std, train) = expect_cache!(ctx, &self.name,
            Cache::BatchNorm { normalized, inv_std, train } => (normalized, inv_std, train));
        expect_upstream(&self.name, normalized.shape(), upstream)?;
        let (n, plane) = self.layout(&normalized)?;
        let c = self.channels;
        let dy = upstream.data();
        let xh = normalized.data();
        let gamma = self.gamma.value.data();

        let mut d_gamma = vec![0.0; c];
        let mut d_beta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    d_gamma[ch] += dy[i] * xh[i];
                    d_beta[ch] += dy[i];
                }
            }
        }
        let mut dx = vec![0.0; dy.len()];
        let count = (n * plane) as f64;
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let g = gamma[ch] * inv_std[ch];
                for i in off..off + plane {
                    dx[i] = if train {
                        g * (dy[i] - d_beta[ch] / count - xh[i] * d_gamma[ch] / count)
                    } else {
                        g * dy[i]
                    };
                }
            }
        }
        Ok(LayerGrads {
            input: Tensor::from_vec(normalized.shape(), dx)?,
            params: vec![
                Tensor::from_vec(&[c], d_gamma)?,
                Tensor::from_vec(&[c], d_beta)?,
                Tensor::zeros(&[c]),
                Tensor::zeros(&[c]),
            ],
        })
    }
}
