use super::{
    expect_cache, expect_rank, expect_upstream, Cache, ForwardContext, LayerGrads, NnError, Result,
};
use crate::tensor::Tensor;

/// Max pooling over square windows. Padded positions never win.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub name: String,
    pub size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPool {
    pub fn new(name: impl Into<String>, size: usize, stride: usize, padding: usize) -> Result<Self> {
        let name = name.into();
        if size == 0 || stride == 0 || padding >= size {
            return Err(NnError::Config(format!(
                "{name}: pool size and stride must be positive and padding smaller than the window"
            )));
        }
        Ok(MaxPool {
            name,
            size,
            stride,
            padding,
        })
    }

    /// The usual non-overlapping 2×2, stride-2 pool.
    pub fn halving(name: impl Into<String>) -> Self {
        MaxPool {
            name: name.into(),
            size: 2,
            stride: 2,
            padding: 0,
        }
    }

    pub fn output_shape(&self, chw: &[usize]) -> Result<Vec<usize>> {
        expect_rank(&self.name, chw, 3)?;
        let (h, w) = (chw[1], chw[2]);
        if self.size == self.stride
            && self.padding == 0
            && (h % self.size != 0 || w % self.size != 0)
        {
            return Err(NnError::UntiledPool {
                layer: self.name.clone(),
                size: self.size,
                height: h,
                width: w,
            });
        }
        let padded = (h + 2 * self.padding).min(w + 2 * self.padding);
        if self.size > padded {
            return Err(NnError::KernelTooLarge {
                layer: self.name.clone(),
                kernel: self.size,
                padded,
            });
        }
        Ok(vec![
            chw[0],
            (h + 2 * self.padding - self.size) / self.stride + 1,
            (w + 2 * self.padding - self.size) / self.stride + 1,
        ])
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        expect_rank(&self.name, input.shape(), 4)?;
        let s = input.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let out = self.output_shape(&s[1..])?;
        let (oh, ow) = (out[1], out[2]);
        let x = input.data();
        let mut values = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..self.size {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.size {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            // strict comparison keeps the first maximum in row-major order
                            if best_idx == usize::MAX || x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    values.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let out_shape = vec![n, c, oh, ow];
        ctx.push(Cache::Pool {
            input_shape: s.to_vec(),
            out_shape: out_shape.clone(),
            argmax,
        });
        Ok(Tensor::from_vec(&out_shape, values)?)
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let (input_shape, out_shape, argmax) = expect_cache!(ctx, &self.name,
            Cache::Pool { input_shape, out_shape, argmax } => (input_shape, out_shape, argmax));
        expect_upstream(&self.name, &out_shape, upstream)?;
        let mut d_input = Tensor::zeros(&input_shape);
        let d = d_input.data_mut();
        for (&idx, &g) in argmax.iter().zip(upstream.data()) {
            d[idx] += g;
        }
        Ok(LayerGrads {
            input: d_input,
            params: Vec::new(),
        })
    }
}
