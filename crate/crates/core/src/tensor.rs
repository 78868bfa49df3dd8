//! Dense row-major tensors over `f32` or `f64`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type usable by the tensor engine.
///
/// Training runs in `f32`; gradient checks run in `f64`.
pub trait Real: Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * op(a) * op(b) + beta * c` on row-major matrices.
    ///
    /// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k`
    /// when `trans_b`), `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self;
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: bounds asserted above; strides describe the stated layouts.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// N-dimensional array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    #[serde(skip)]
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("zero-sized dimension in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!("shape {shape:?} holds {n} elements, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n], grad: None }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect(), grad: None }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::dim("gradient length does not match tensor"));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Shape as `[c, h, w]`, failing for any other rank.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim(format!("expected [c,h,w], got {:?}", self.shape))),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap())).collect(),
            grad: None,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap()).collect()
    }
}
