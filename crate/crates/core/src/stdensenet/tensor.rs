use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::NetError;

/// Floating-point element type of the network. `f32` is the production type; `f64` runs
/// the gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense `(N, C, D, H, W)` tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T> {
    dims: [usize; 5],
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(dims: [usize; 5]) -> Result<Self, NetError> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        })
    }

    pub fn full(dims: [usize; 5], value: T) -> Result<Self, NetError> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            data: vec![value; dims.iter().product()],
        })
    }

    pub fn from_vec(dims: [usize; 5], data: Vec<T>) -> Result<Self, NetError> {
        check_dims(dims)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(NetError::Shape(format!(
                "buffer of {} values does not match dims {:?} ({} values)",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Self { dims, data })
    }

    pub(crate) fn from_parts(dims: [usize; 5], data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    /// `(D, H, W)`.
    pub fn volume_dims(&self) -> [usize; 3] {
        [self.dims[2], self.dims[3], self.dims[4]]
    }

    pub fn volume(&self) -> usize {
        self.dims[2] * self.dims[3] * self.dims[4]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        let [_, cc, dd, hh, ww] = self.dims;
        (((n * cc + c) * dd + d) * hh + h) * ww + w
    }

    pub fn get(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, d, h, w)]
    }

    /// Contiguous `(D, H, W)` block of one sample and channel.
    pub fn channel(&self, n: usize, c: usize) -> &[T] {
        let vol = self.volume();
        let start = (n * self.dims[1] + c) * vol;
        &self.data[start..start + vol]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Single sample `n` as a batch of one.
    pub fn sample(&self, n: usize) -> Tensor5<T> {
        let per = self.data.len() / self.dims[0];
        let mut dims = self.dims;
        dims[0] = 1;
        Tensor5::from_parts(dims, self.data[n * per..(n + 1) * per].to_vec())
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(parts: &[&Tensor5<T>]) -> Result<Tensor5<T>, NetError> {
        let first = parts
            .first()
            .ok_or_else(|| NetError::Shape("cannot stack zero tensors".into()))?;
        let tail = &first.dims[1..];
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut batch = 0;
        for p in parts {
            if &p.dims[1..] != tail {
                return Err(NetError::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    p.dims, first.dims
                )));
            }
            batch += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor5::from_parts(
            [batch, tail[0], tail[1], tail[2], tail[3]],
            data,
        ))
    }

    /// Concatenates along the channel axis, preserving the order of `parts`.
    pub fn concat_channels(parts: &[&Tensor5<T>]) -> Result<Tensor5<T>, NetError> {
        let first = parts
            .first()
            .ok_or_else(|| NetError::Shape("cannot concatenate zero tensors".into()))?;
        let [n, _, d, h, w] = first.dims;
        for p in parts {
            let [pn, _, pd, ph, pw] = p.dims;
            if (pn, pd, ph, pw) != (n, d, h, w) {
                return Err(NetError::Shape(format!(
                    "cannot concatenate {:?} with {:?}",
                    p.dims, first.dims
                )));
            }
        }
        let channels: usize = parts.iter().map(|p| p.dims[1]).sum();
        let vol = d * h * w;
        let mut data = Vec::with_capacity(n * channels * vol);
        for s in 0..n {
            for p in parts {
                let block = p.dims[1] * vol;
                data.extend_from_slice(&p.data[s * block..(s + 1) * block]);
            }
        }
        Ok(Tensor5::from_parts([n, channels, d, h, w], data))
    }

    /// Inverse of [`Tensor5::concat_channels`]: splits into consecutive channel groups.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor5<T>>, NetError> {
        let [n, c, d, h, w] = self.dims;
        if sizes.iter().sum::<usize>() != c {
            return Err(NetError::Shape(format!(
                "channel split {sizes:?} does not cover {c} channels"
            )));
        }
        let vol = d * h * w;
        let mut parts: Vec<Vec<T>> = sizes
            .iter()
            .map(|&s| Vec::with_capacity(n * s * vol))
            .collect();
        for s in 0..n {
            let mut start = s * c * vol;
            for (part, &size) in parts.iter_mut().zip(sizes) {
                part.extend_from_slice(&self.data[start..start + size * vol]);
                start += size * vol;
            }
        }
        Ok(parts
            .into_iter()
            .zip(sizes)
            .map(|(data, &size)| Tensor5::from_parts([n, size, d, h, w], data))
            .collect())
    }

    pub fn add_assign(&mut self, other: &Tensor5<T>) -> Result<(), NetError> {
        if self.dims != other.dims {
            return Err(NetError::Shape(format!(
                "cannot add {:?} to {:?}",
                other.dims, self.dims
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }
}

fn check_dims(dims: [usize; 5]) -> Result<(), NetError> {
    if dims.contains(&0) {
        return Err(NetError::Shape(format!("all dims must be >= 1, got {dims:?}")));
    }
    Ok(())
}

/// Trainable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let grad = vec![T::zero(); value.len()];
        Self { value, grad, shape }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![T::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            value: self.value.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self.grad.iter().map(|v| U::of(v.as_f64())).collect(),
            shape: self.shape.clone(),
        }
    }
}
