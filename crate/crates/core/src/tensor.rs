//! Dense row-major N-dimensional arrays of `f64`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension {index} is zero in shape {shape:?}")]
    ZeroDimension { index: usize, shape: Vec<usize> },
    #[error("shape {shape:?} holds {expected} elements but {actual} values were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("cannot reshape {from:?} ({from_len} elements) into {to:?} ({to_len} elements)")]
    ReshapeMismatch {
        from: Vec<usize>,
        from_len: usize,
        to: Vec<usize>,
        to_len: usize,
    },
    #[error("matmul expects rank-2 operands, got {left:?} and {right:?}")]
    NotMatrix { left: Vec<usize>, right: Vec<usize> },
    #[error("matmul inner dimensions disagree: {left:?} x {right:?}")]
    InnerMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// How a new tensor is populated.
#[derive(Debug, Clone)]
pub enum Fill {
    Constant(f64),
    Values(Vec<f64>),
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if let Some(index) = shape.iter().position(|&d| d == 0) {
        return Err(TensorError::ZeroDimension {
            index,
            shape: shape.to_vec(),
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], fill: Fill) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match fill {
            Fill::Constant(v) => vec![v; len],
            Fill::Values(values) => {
                if values.len() != len {
                    return Err(TensorError::LengthMismatch {
                        shape: shape.to_vec(),
                        expected: len,
                        actual: values.len(),
                    });
                }
                values
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::new(shape, Fill::Values(values))
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(shape, Fill::Constant(value))
    }

    /// All-zero tensor. Panics on a zero dimension; callers pass shapes
    /// already validated by layer construction.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0).expect("zeros: invalid shape")
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the elements; the shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let to_len = check_shape(new_shape)?;
        if to_len != self.data.len() {
            return Err(TensorError::ReshapeMismatch {
                from: self.shape.clone(),
                from_len: self.data.len(),
                to: new_shape.to_vec(),
                to_len,
            });
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn into_reshaped(self, new_shape: &[usize]) -> Result<Tensor> {
        let to_len = check_shape(new_shape)?;
        if to_len != self.data.len() {
            return Err(TensorError::ReshapeMismatch {
                from: self.shape,
                from_len: self.data.len(),
                to: new_shape.to_vec(),
                to_len,
            });
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Tensor, f: F) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(TensorError::NotMatrix {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(TensorError::InnerMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, &other.data, &mut out);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::NotMatrix {
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(Tensor {
            shape: vec![c, r],
            data: transpose(r, c, &self.data),
        })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(
                f,
                "Tensor{:?} [{}, {}, ... {} elements]",
                self.shape,
                self.data[0],
                self.data[1],
                self.data.len()
            )
        }
    }
}

/// `c += a · b` for row-major `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
///
/// Every output element accumulates its products in ascending `k` order.
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&aik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (cij, &bkj) in c_row.iter_mut().zip(b_row) {
                *cij += aik * bkj;
            }
        }
    }
}

/// `c = a · b`, overwriting `c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    c.iter_mut().for_each(|x| *x = 0.0);
    gemm_acc(m, k, n, a, b, c);
}

pub(crate) fn transpose(rows: usize, cols: usize, src: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn triple_loop(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn construction() {
        let z = Tensor::filled(&[2, 2], 0.0).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.shape(), &[3]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0]);
        assert!(matches!(
            Tensor::from_vec(&[2, 3], vec![0.0; 5]),
            Err(TensorError::LengthMismatch { expected: 6, actual: 5, .. })
        ));
        assert!(matches!(
            Tensor::filled(&[2, 0], 1.0),
            Err(TensorError::ZeroDimension { index: 1, .. })
        ));
    }

    #[test]
    fn matmul_small_cases() {
        let id = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(id.matmul(&b).unwrap(), b);
        let row = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let col = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
        assert!(matches!(
            row.matmul(&row),
            Err(TensorError::InnerMismatch { .. })
        ));
        let v = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(v.matmul(&id), Err(TensorError::NotMatrix { .. })));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&[4, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        let got = a.matmul(&b).unwrap();
        for (x, y) in got.data().iter().zip(triple_loop(&a, &b)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random(&[4, 4], &mut rng);
            let b = random(&[4, 4], &mut rng);
            let c = random(&[4, 4], &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn map_cases() {
        let t = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        assert_eq!(t.map(|x| -x).data(), &[-1.0, 2.0]);
        assert_eq!(t.map(|x| x), t);
        let sq = Tensor::from_vec(&[4], vec![1.5, -2.0, 0.0, 3.0]).unwrap();
        let mut oracle = Vec::new();
        for &x in sq.data() {
            oracle.push(x * x);
        }
        assert_eq!(sq.map(|x| x * x).data(), oracle.as_slice());
    }

    #[test]
    fn flatten_shapes() {
        let vgg = Tensor::zeros(&[4, 4, 512]);
        assert_eq!(vgg.reshape(&[8192]).unwrap().shape(), &[8192]);
        let resnet = Tensor::zeros(&[4, 4, 2048]);
        assert_eq!(resnet.reshape(&[32768]).unwrap().shape(), &[32768]);
        let small = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            small.reshape(&[4]),
            Err(TensorError::ReshapeMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn reshape_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random(&[rows, cols], &mut rng);
            let flat = t.reshape(&[rows * cols]).unwrap();
            prop_assert_eq!(flat.reshape(&[rows, cols]).unwrap(), t.clone());
            let swapped = t.reshape(&[cols, rows]).unwrap();
            prop_assert_eq!(swapped.reshape(t.shape()).unwrap(), t);
        }

        #[test]
        fn map_preserves_shape(dims in proptest::collection::vec(1usize..4, 1..4)) {
            let t = Tensor::filled(&dims, 0.5).unwrap();
            let mapped = t.map(f64::exp);
            prop_assert_eq!(mapped.shape(), t.shape());
        }
    }
}
