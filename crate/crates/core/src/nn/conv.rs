//! 2-D convolution (cross-correlation, no kernel flip) via im2col.

use super::{
    expect_cache, expect_rank, expect_upstream, Cache, ForwardContext, LayerGrads, NnError, Param,
    ParamTally, Result,
};
use crate::tensor::{gemm, gemm_acc, transpose, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(kernel - 1) / 2` zeros on every side; preserves size at stride 1.
    Same,
    Valid,
    Explicit(usize),
}

impl Padding {
    pub fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Same => (kernel - 1) / 2,
            Padding::Valid => 0,
            Padding::Explicit(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    /// `[filters, in_channels, kernel, kernel]`
    pub weight: Param,
    pub bias: Option<Param>,
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<Self> {
        let name = name.into();
        if in_channels == 0 || filters == 0 || kernel == 0 || stride == 0 {
            return Err(NnError::Config(format!(
                "{name}: channels, filters, kernel and stride must be positive"
            )));
        }
        Ok(Conv2d {
            weight: Param::new(
                format!("{name}/weight"),
                &[filters, in_channels, kernel, kernel],
                0.0,
                true,
            ),
            bias: bias.then(|| Param::new(format!("{name}/bias"), &[filters], 0.0, true)),
            name,
            in_channels,
            filters,
            kernel,
            stride,
            padding,
        })
    }

    fn geometry(&self, chw: &[usize]) -> Result<Geometry> {
        expect_rank(&self.name, chw, 3)?;
        let (channels, height, width) = (chw[0], chw[1], chw[2]);
        if channels != self.in_channels {
            return Err(NnError::ChannelMismatch {
                layer: self.name.clone(),
                expected: self.in_channels,
                actual: channels,
            });
        }
        let pad = self.padding.amount(self.kernel);
        let padded = (height + 2 * pad).min(width + 2 * pad);
        if self.kernel > padded {
            return Err(NnError::KernelTooLarge {
                layer: self.name.clone(),
                kernel: self.kernel,
                padded,
            });
        }
        Ok(Geometry {
            channels,
            height,
            width,
            out_h: (height + 2 * pad - self.kernel) / self.stride + 1,
            out_w: (width + 2 * pad - self.kernel) / self.stride + 1,
            pad,
        })
    }

    pub fn output_shape(&self, chw: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(chw)?;
        Ok(vec![self.filters, g.out_h, g.out_w])
    }

    pub fn param_tally(&self) -> ParamTally {
        let weights = self.filters * self.in_channels * self.kernel * self.kernel;
        let bias = if self.bias.is_some() { self.filters } else { 0 };
        ParamTally {
            trainable: (weights + bias) as u64,
            non_trainable: 0,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding.amount(1) == 0
    }

    /// Unfolds one `[C,H,W]` sample into `[C·k·k, out_h·out_w]`.
    fn im2col(&self, g: &Geometry, sample: &[f64], cols: &mut [f64]) {
        let k = self.kernel;
        let plane = g.out_h * g.out_w;
        for c in 0..g.channels {
            let src = &sample[c * g.height * g.width..(c + 1) * g.height * g.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * plane..][..plane];
                    for oy in 0..g.out_h {
                        let iy = (oy * self.stride + ky) as isize - g.pad as isize;
                        let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                        if iy < 0 || iy >= g.height as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - g.pad as isize;
                            *d = if ix < 0 || ix >= g.width as isize {
                                0.0
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatters column gradients back onto one `[C,H,W]` sample.
    fn col2im(&self, g: &Geometry, cols: &[f64], sample: &mut [f64]) {
        let k = self.kernel;
        let plane = g.out_h * g.out_w;
        for c in 0..g.channels {
            let dst = &mut sample[c * g.height * g.width..(c + 1) * g.height * g.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * plane..][..plane];
                    for oy in 0..g.out_h {
                        let iy = (oy * self.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        for ox in 0..g.out_w {
                            let ix = (ox * self.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.width as isize {
                                dst[iy as usize * g.width + ix as usize] += row[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, input: &Tensor, ctx: &mut ForwardContext) -> Result<Tensor> {
        expect_rank(&self.name, input.shape(), 4)?;
        let n = input.shape()[0];
        let g = self.geometry(&input.shape()[1..])?;
        let patch = g.channels * self.kernel * self.kernel;
        let plane = g.out_h * g.out_w;
        let in_len = g.channels * g.height * g.width;
        let mut out = vec![0.0; n * self.filters * plane];
        let mut cols = vec![0.0; if self.is_pointwise() { 0 } else { patch * plane }];
        for (sample, out_n) in input
            .data()
            .chunks_exact(in_len)
            .zip(out.chunks_exact_mut(self.filters * plane))
        {
            let cols_ref: &[f64] = if self.is_pointwise() {
                sample
            } else {
                self.im2col(&g, sample, &mut cols);
                &cols
            };
            gemm(self.filters, patch, plane, self.weight.value.data(), cols_ref, out_n);
            if let Some(bias) = &self.bias {
                for (row, &b) in out_n.chunks_exact_mut(plane).zip(bias.value.data()) {
                    row.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        let out_shape = vec![n, self.filters, g.out_h, g.out_w];
        ctx.push(Cache::Conv {
            input: input.clone(),
            out_shape: out_shape.clone(),
        });
        Ok(Tensor::from_vec(&out_shape, out)?)
    }

    pub fn backward(&self, ctx: &mut ForwardContext, upstream: &Tensor) -> Result<LayerGrads> {
        let (input, out_shape) =
            expect_cache!(ctx, &self.name, Cache::Conv { input, out_shape } => (input, out_shape));
        expect_upstream(&self.name, &out_shape, upstream)?;
        let g = self.geometry(&input.shape()[1..])?;
        let patch = g.channels * self.kernel * self.kernel;
        let plane = g.out_h * g.out_w;
        let in_len = g.channels * g.height * g.width;

        let mut d_weight = vec![0.0; self.filters * patch];
        let mut d_bias = vec![0.0; self.filters];
        let mut d_input = vec![0.0; input.len()];
        let weight_t = transpose(self.filters, patch, self.weight.value.data());
        let mut cols = vec![0.0; patch * plane];
        let mut d_cols = vec![0.0; patch * plane];

        for ((sample, d_out), d_in) in input
            .data()
            .chunks_exact(in_len)
            .zip(upstream.data().chunks_exact(self.filters * plane))
            .zip(d_input.chunks_exact_mut(in_len))
        {
            if self.is_pointwise() {
                cols.copy_from_slice(sample);
            } else {
                self.im2col(&g, sample, &mut cols);
            }
            let cols_t = transpose(patch, plane, &cols);
            gemm_acc(self.filters, plane, patch, d_out, &cols_t, &mut d_weight);
            for (db, row) in d_bias.iter_mut().zip(d_out.chunks_exact(plane)) {
                *db += row.iter().sum::<f64>();
            }
            gemm(patch, self.filters, plane, &weight_t, d_out, &mut d_cols);
            if self.is_pointwise() {
                d_in.copy_from_slice(&d_cols);
            } else {
                self.col2im(&g, &d_cols, d_in);
            }
        }

        let mut params = vec![Tensor::from_vec(self.weight.value.shape(), d_weight)?];
        if self.bias.is_some() {
            params.push(Tensor::from_vec(&[self.filters], d_bias)?);
        }
        Ok(LayerGrads {
            input: Tensor::from_vec(input.shape(), d_input)?,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(conv: &Conv2d, x: &Tensor) -> Vec<f64> {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let k = conv.kernel;
        let p = conv.padding.amount(k) as isize;
        let oh = (h + 2 * p as usize - k) / conv.stride + 1;
        let ow = (w + 2 * p as usize - k) / conv.stride + 1;
        let wt = conv.weight.value.data();
        let mut out = Vec::new();
        for b in 0..n {
            for f in 0..conv.filters {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |bb| bb.value.data()[f]);
                        for ch in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - p;
                                    let ix = (ox * conv.stride + kx) as isize - p;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = x.data()
                                        [((b * c + ch) * h + iy as usize) * w + ix as usize];
                                    acc += xv * wt[((f * c + ch) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    fn randomize(conv: &mut Conv2d, rng: &mut ChaCha8Rng) {
        for p in conv.params_mut() {
            for v in p.value.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
    }

    #[test]
    fn two_by_two_identity_kernel() {
        let mut conv = Conv2d::new("c", 1, 1, 2, 1, Padding::Valid, false).unwrap();
        conv.weight.value.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x, &mut ForwardContext::inference()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn same_padding_shape() {
        let conv = Conv2d::new("c", 3, 64, 3, 1, Padding::Same, true).unwrap();
        assert_eq!(conv.output_shape(&[3, 128, 128]).unwrap(), vec![64, 128, 128]);
        let stem = Conv2d::new("stem", 3, 64, 7, 2, Padding::Explicit(3), true).unwrap();
        assert_eq!(stem.output_shape(&[3, 128, 128]).unwrap(), vec![64, 64, 64]);
    }

    #[test]
    fn forward_shape_on_batch() {
        let mut conv = Conv2d::new("c", 3, 4, 3, 1, Padding::Same, true).unwrap();
        let x = Tensor::zeros(&[2, 3, 9, 9]);
        let y = conv.forward(&x, &mut ForwardContext::inference()).unwrap();
        assert_eq!(y.shape(), &[2, 4, 9, 9]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, stride, padding) in [
            (3, 1, Padding::Valid),
            (3, 1, Padding::Same),
            (3, 2, Padding::Same),
            (1, 1, Padding::Valid),
            (1, 2, Padding::Valid),
            (5, 2, Padding::Explicit(2)),
        ] {
            let mut conv = Conv2d::new("c", 2, 3, k, stride, padding, true).unwrap();
            randomize(&mut conv, &mut rng);
            let x = Tensor::from_vec(
                &[2, 2, 5, 5],
                (0..100).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let y = conv.forward(&x, &mut ForwardContext::inference()).unwrap();
            let oracle = naive(&conv, &x);
            assert_eq!(y.len(), oracle.len());
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut conv = Conv2d::new("c", 3, 4, 3, 1, Padding::Valid, true).unwrap();
        let ctx = &mut ForwardContext::inference();
        assert!(matches!(
            conv.forward(&Tensor::zeros(&[1, 2, 5, 5]), ctx),
            Err(NnError::ChannelMismatch { .. })
        ));
        assert!(matches!(
            conv.forward(&Tensor::zeros(&[1, 3, 2, 2]), ctx),
            Err(NnError::KernelTooLarge { .. })
        ));
        assert!(matches!(
            conv.forward(&Tensor::zeros(&[3, 5, 5]), ctx),
            Err(NnError::Rank { .. })
        ));
        assert_eq!(conv.param_tally().trainable, 3 * 3 * 3 * 4 + 4);
    }
}
