//! Dense row-major tensors and the forward kernels of the engine.
//!
//! Image tensors use `N x C x H x W` layout. Kernels that accept a
//! `C x H x W` tensor treat it as a batch of one.

use std::fmt::Debug;
use std::io::{Read, Write};

use num_traits::{Float, FromPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

mod conv;
mod ops;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use ops::{
    add, batchnorm2d, batchnorm2d_backward, batchnorm2d_with, channel_pool_backward,
    concat_channels, invert_perm, l1_loss, l1_loss_backward, mean_of, mul_broadcast,
    mul_broadcast_backward, permute, pixel_shuffle, pixel_unshuffle, pointwise, reduce_pool,
    reduce_pool_backward, reduce_pool_indexed, BatchNormMode, BatchNormState, BnForward,
    Pointwise, PoolIndices, PoolKind, RunningStats,
};

/// Floating point element type of a tensor.
///
/// Training runs in `f32`; gradient checks run in `f64`.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    /// Width of the element in bytes, used by the dump format.
    const BYTES: usize;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts")
    }

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    /// `C = alpha * A * B + beta * C` with explicit row/column strides.
    ///
    /// # Safety
    /// Strides and extents must describe valid, non-overlapping regions of
    /// the given buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense N-dimensional array stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} elements, buffer has {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.random_range(lo..hi)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Views a `C x H x W` tensor as `1 x C x H x W`; 4-D tensors pass through.
    pub fn batched(self) -> Result<Self> {
        match self.rank() {
            3 => {
                let mut s = vec![1];
                s.extend_from_slice(&self.shape);
                self.reshape(&s)
            }
            4 => Ok(self),
            r => Err(Error::shape("batched", format!("rank {r}, expected 3 or 4"))),
        }
    }

    /// `(N, C, H, W)` of a rank-3 or rank-4 tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok([1, c, h, w]),
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(
                "dims4",
                format!("rank {}, expected 3 or 4", self.rank()),
            )),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
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

    /// In-place `self += other`, shapes must match in element count.
    pub fn accumulate(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|v| v.as_f64()).sum::<f64>() / n;
        let var = self
            .data
            .iter()
            .map(|v| (v.as_f64() - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    /// Debug dump: `u32` rank, `u64` extents, then elements, all little-endian.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::with_capacity(4 + 8 * self.rank() + T::BYTES * self.len());
        buf.extend_from_slice(&(self.rank() as u32).to_le_bytes());
        for &d in &self.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut buf);
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut ext = [0u8; 8];
            input.read_exact(&mut ext)?;
            shape.push(u64::from_le_bytes(ext) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * T::BYTES];
        input.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        Tensor::from_vec(&shape, data)
    }
}
