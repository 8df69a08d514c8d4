//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Tensors are immutable row-major buffers; [`Graph`] records operations on
//! a tape and replays it backwards for gradients. The engine is generic over
//! [`f32`] (training) and [`f64`] (gradient checking and bit-reproducible
//! runs).

mod attention;
mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod optim;

pub use attention::{multi_head_attention, scaled_dot_attention};
pub use checkpoint::{load_tensors, read_manifest, save_tensors, ManifestEntry, TensorMap};
pub use gradcheck::{finite_diff_gradcheck, GradCheckReport, GRADCHECK_STEP};
pub use graph::{Gradients, Graph, NodeId, LAYER_NORM_EPS};
pub use optim::{AdamW, AdamWConfig};

use std::sync::Arc;

use crate::{Error, Result};

/// Element dtype stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Scalar element of a tensor: `f32` or `f64`.
pub trait Element: num_traits::Float + Copy + Send + Sync + std::fmt::Debug + 'static {
    const DTYPE: Dtype;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}

/// Immutable row-major dense tensor.
///
/// The buffer is shared (`Arc`), so cloning a tensor or handing parameters
/// to several per-sample graphs is cheap. Mutation happens only inside the
/// optimizer step via [`Tensor::data_mut`].
#[derive(Debug, Clone)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
}

impl<E: Element> Tensor<E> {
    /// Build a tensor, validating that the data length matches the shape.
    /// In debug builds every value is also checked to be finite.
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if data.len() != numel {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        let t = Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
        };
        t.debug_check_finite()?;
        Ok(t)
    }

    /// Internal constructor for op outputs; skips the finite scan.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<E>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![E::zero(); numel]),
            requires_grad: false,
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor::from_op(vec![1, 1], vec![value])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when viewed as 2D (all graph ops are 2D).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns when viewed as 2D.
    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access for the optimizer. Copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn is_2d(&self) -> bool {
        self.shape.len() == 2
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Whether every stored value is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn debug_check_finite(&self) -> Result<()> {
        if cfg!(debug_assertions) && !self.all_finite() {
            return Err(Error::shape("tensor holds NaN or Inf".to_string()));
        }
        Ok(())
    }

    /// Convert the element type, rounding through f64.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect();
        let mut t = Tensor::from_op(self.shape.clone(), data);
        t.requires_grad = self.requires_grad;
        t
    }

    /// Sample i.i.d. normal entries with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut impl rand::Rng) -> Self {
        use rand::distributions::Distribution;
        let dist = rand::distributions::Uniform::new(0.0f64, 1.0f64);
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        // Box-Muller keeps the stream identical for f32 and f64 builds.
        while data.len() < numel {
            let u1 = dist.sample(rng).max(1e-12);
            let u2 = dist.sample(rng);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(E::from_f64(r * theta.cos() * std));
            if data.len() < numel {
                data.push(E::from_f64(r * theta.sin() * std));
            }
        }
        Tensor::from_op(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn new_rejects_non_finite_in_debug() {
        if cfg!(debug_assertions) {
            let err = Tensor::<f64>::new(vec![1, 2], vec![1.0, f64::NAN]).unwrap_err();
            assert!(matches!(err, Error::Shape(_)));
        }
    }

    #[test]
    fn data_mut_unshares() {
        let a = Tensor::<f32>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let mut b = a.clone();
        b.data_mut()[0] = 9.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 9.0);
    }

    #[test]
    fn randn_stream_matches_across_dtypes() {
        use rand::SeedableRng;
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::<f64>::randn(vec![3, 3], 0.02, &mut r1);
        let b = Tensor::<f32>::randn(vec![3, 3], 0.02, &mut r2);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32, *y);
        }
    }
}
