use std::fmt;
use std::str::FromStr;

use crate::nn::Param;
use crate::tensor::{Tensor, TensorError};

/// Momentum SGD: `v ← momentum·v − lr·g`, `p ← p + v`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
) -> Result<(), TensorError> {
    param.expect_same_shape(grad)?;
    param.expect_same_shape(velocity)?;
    for ((p, v), g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grad.data())
    {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update; `t` is the 1-based step count.
pub fn adam_step(
    param: &mut Tensor,
    grad: &Tensor,
    m1: &mut Tensor,
    m2: &mut Tensor,
    t: u64,
    lr: f64,
    h: AdamHyper,
) -> Result<(), TensorError> {
    assert!(t >= 1, "adam step count starts at 1");
    param.expect_same_shape(grad)?;
    param.expect_same_shape(m1)?;
    param.expect_same_shape(m2)?;
    let c1 = 1.0 - h.beta1.powf(t as f64);
    let c2 = 1.0 - h.beta2.powf(t as f64);
    for (((p, m), v), g) in param
        .data_mut()
        .iter_mut()
        .zip(m1.data_mut())
        .zip(m2.data_mut())
        .zip(grad.data())
    {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + h.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
        }
    }
}

/// Optimizer with per-parameter state, indexed like the parameter list it
/// was created for.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    hyper: AdamHyper,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64, params: &[&Param]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
        Optimizer {
            kind,
            lr,
            momentum,
            hyper: AdamHyper::default(),
            step: 0,
            second: match kind {
                OptimizerKind::Adam => zeros.clone(),
                OptimizerKind::Sgd => Vec::new(),
            },
            first: zeros,
        }
    }

    /// Applies `grads[i]` to `params[i]` wherever `update[i]` is set.
    pub fn step(
        &mut self,
        params: &mut [&mut Param],
        grads: &[Tensor],
        update: &[bool],
    ) -> Result<(), TensorError> {
        assert_eq!(params.len(), self.first.len(), "optimizer built for another model");
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), update.len());
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            if !update[i] {
                continue;
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    sgd_step(&mut p.value, &grads[i], &mut self.first[i], self.lr, self.momentum)?
                }
                OptimizerKind::Adam => adam_step(
                    &mut p.value,
                    &grads[i],
                    &mut self.first[i],
                    &mut self.second[i],
                    self.step,
                    self.lr,
                    self.hyper,
                )?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let (mut w, mut v) = (scalar(0.0), scalar(0.0));
        sgd_step(&mut w, &scalar(1.0), &mut v, 1.0, 0.0).unwrap();
        assert_eq!(w.data(), &[-1.0]);

        let (mut w, mut v) = (scalar(0.3), scalar(0.0));
        sgd_step(&mut w, &scalar(0.0), &mut v, 0.5, 0.9).unwrap();
        assert_eq!(w.data(), &[0.3]);

        let mut w = Tensor::zeros(&[2]);
        let mut v = Tensor::zeros(&[3]);
        assert!(sgd_step(&mut w, &Tensor::zeros(&[2]), &mut v, 0.1, 0.0).is_err());
    }

    #[test]
    fn sgd_on_square_follows_recurrence() {
        let (mut w, mut v) = (scalar(1.0), scalar(0.0));
        let mut expected = 1.0;
        for want in [0.8, 0.64, 0.512] {
            let g = scalar(2.0 * w.data()[0]);
            sgd_step(&mut w, &g, &mut v, 0.1, 0.0).unwrap();
            expected *= 1.0 - 0.2;
            assert!((w.data()[0] - want).abs() < 1e-12);
            assert!((w.data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let (mut w, mut v) = (scalar(0.0), scalar(0.0));
        sgd_step(&mut w, &scalar(1.0), &mut v, 0.1, 0.9).unwrap();
        sgd_step(&mut w, &scalar(1.0), &mut v, 0.1, 0.9).unwrap();
        // v1 = -0.1, v2 = -0.09 - 0.1
        assert!((v.data()[0] + 0.19).abs() < 1e-15);
        assert!((w.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [-3.0, 1e-3, 250.0] {
            let (mut w, mut m, mut v) = (scalar(0.0), scalar(0.0), scalar(0.0));
            adam_step(&mut w, &scalar(g), &mut m, &mut v, 1, 0.01, AdamHyper::default()).unwrap();
            assert!((w.data()[0].abs() - 0.01).abs() < 1e-6, "g={g}");
            assert_eq!(w.data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn adam_zero_grad_is_still() {
        let (mut w, mut m, mut v) = (scalar(0.7), scalar(0.0), scalar(0.0));
        adam_step(&mut w, &scalar(0.0), &mut m, &mut v, 1, 0.1, AdamHyper::default()).unwrap();
        assert_eq!(w.data(), &[0.7]);
    }

    #[test]
    fn adam_matches_scalar_recurrence() {
        let h = AdamHyper::default();
        let grads = [0.5, -1.0, 2.0, 0.1, -0.3];
        let (mut w, mut m, mut v) = (scalar(1.0), scalar(0.0), scalar(0.0));
        let (mut ow, mut om, mut ov) = (1.0f64, 0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            let t = i as i32 + 1;
            adam_step(&mut w, &scalar(g), &mut m, &mut v, t as u64, 0.05, h).unwrap();
            om = 0.9 * om + 0.1 * g;
            ov = 0.999 * ov + 0.001 * g * g;
            let mh = om / (1.0 - 0.9f64.powi(t));
            let vh = ov / (1.0 - 0.999f64.powi(t));
            ow -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((w.data()[0] - ow).abs() < 1e-12);
        }
    }

    #[test]
    fn optimizer_respects_update_mask() {
        let a = Param::new("a".into(), &[2], 1.0, true);
        let b = Param::new("b".into(), &[1], 1.0, true);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, 0.0, &[&a, &b]);
        let (mut a, mut b) = (a, b);
        let grads = vec![Tensor::filled(&[2], 1.0).unwrap(), scalar(1.0)];
        opt.step(&mut [&mut a, &mut b], &grads, &[true, false]).unwrap();
        assert_eq!(a.value.data(), &[0.5, 0.5]);
        assert_eq!(b.value.data(), &[1.0]);
    }

    #[test]
    fn kind_names() {
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert_eq!(OptimizerKind::Sgd.to_string(), "sgd");
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
