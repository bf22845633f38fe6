//! Dense row-major tensors, their elementary operations, a reverse-mode
//! gradient tape, and the binary tensor file format.
//!
//! Every operation checks its output for NaN/Inf and reports
//! [`Error::NonFinite`] instead of propagating a poisoned value.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod io;
pub mod ops;
pub mod tape;

pub use tape::{Gradients, Param, Tape, Var};

/// Storage precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn tag(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Precision::F32),
            1 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Scalar element type of a [`Tensor`]: `f32` or `f64`.
pub trait Element:
    Float + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn erf(self) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    /// Lossy conversion from `f64`, used for constants.
    fn of(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// An N-dimensional row-major array.
///
/// Tensors are immutable values once built; every operation returns a new
/// tensor. Every dimension is at least 1 and the buffer length always equals
/// the product of the shape.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor<{:?}>{:?} ", T::PRECISION, self.shape)?;
        let head = &self.data[..self.data.len().min(PREVIEW)];
        if self.data.len() > PREVIEW {
            write!(f, "{head:?}..")
        } else {
            write!(f, "{head:?}")
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be at least 1".into(),
        });
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        validate_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape {
                reason: format!("buffer holds {} elements", data.len()),
                shape,
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("new")?;
        Ok(t)
    }

    /// Builds a tensor from values already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        validate_shape(&shape)?;
        let n = numel(&shape);
        Tensor::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor whose element at each flat row-major index is `f(index)`.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        validate_shape(&shape)?;
        let data = (0..numel(&shape)).map(f).collect();
        Tensor::new(shape, data)
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Result<Self> {
        Self::from_fn([n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.rank(), "index rank");
        let offset = index
            .iter()
            .zip(strides(&self.shape))
            .map(|(i, s)| i * s)
            .sum::<usize>();
        self.data[offset]
    }

    /// In-place access for parameter surgery (tests, finite differences).
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    fn axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                op,
                axis,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(self, shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let shape = shape.into();
        validate_shape(&shape)?;
        if numel(&shape) != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{axes:?} is not a permutation of its axes"),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let in_strides = strides(&self.shape);
        let gather_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut index = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..self.len() {
            data.push(self.data[offset]);
            // odometer increment over the output index
            for d in (0..rank).rev() {
                index[d] += 1;
                offset += gather_strides[d];
                if index[d] < out_shape[d] {
                    break;
                }
                offset -= gather_strides[d] * out_shape[d];
                index[d] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let rank = self.rank();
        if rank < 2 {
            return Err(Error::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank,
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// Slice of `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        self.axis("narrow", axis)?;
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("cannot take {len} entries from {start} along axis {axis}"),
            });
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let extent = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Self::concat_refs(&refs, axis)
    }

    pub(crate) fn concat_refs(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            shape: vec![],
            reason: "concat of zero tensors".into(),
        })?;
        first.axis("concat", axis)?;
        for p in parts {
            let ragged = p.rank() != first.rank()
                || p
                    .shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b);
            if ragged {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor { shape, data })
    }

    /// Splits into `n` equal consecutive pieces along `axis`.
    pub fn split(&self, axis: usize, n: usize) -> Result<Vec<Tensor<T>>> {
        self.axis("split", axis)?;
        let extent = self.shape[axis];
        if n == 0 || !extent.is_multiple_of(n) {
            return Err(Error::NotDivisible {
                op: "split",
                what: extent,
                by: n,
            });
        }
        let step = extent / n;
        (0..n).map(|i| self.narrow(axis, i * step, step)).collect()
    }

    /// Toroidal roll: element at index `i` along `axis` moves to `i + shift`.
    pub fn roll(&self, axis: usize, shift: isize) -> Result<Tensor<T>> {
        self.axis("roll", axis)?;
        let extent = self.shape[axis];
        let shift = shift.rem_euclid(extent as isize) as usize;
        if shift == 0 {
            return Ok(self.clone());
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let mut data = vec![T::zero(); self.len()];
        for o in 0..outer {
            for i in 0..extent {
                let src = (o * extent + i) * inner;
                let dst = (o * extent + (i + shift) % extent) * inner;
                data[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Appends `amount` zero entries at the end of `axis`.
    pub fn pad_end(&self, axis: usize, amount: usize) -> Result<Tensor<T>> {
        self.axis("pad", axis)?;
        if amount == 0 {
            return Ok(self.clone());
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let extent = self.shape[axis];
        let mut data = Vec::with_capacity(outer * (extent + amount) * inner);
        for o in 0..outer {
            data.extend_from_slice(&self.data[o * extent * inner..(o + 1) * extent * inner]);
            data.extend(std::iter::repeat_n(T::zero(), amount * inner));
        }
        let mut shape = self.shape.clone();
        shape[axis] += amount;
        Ok(Tensor { shape, data })
    }

    /// Rows of the leading axis picked by `indices`.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let rows = self.shape[0];
        let inner = numel(&self.shape[1..]);
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            if i >= rows {
                return Err(Error::InvalidShape {
                    shape: self.shape.clone(),
                    reason: format!("row index {i} out of range"),
                });
            }
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        validate_shape(&shape)?;
        Ok(Tensor { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |i| i as f64).unwrap()
    }

    #[test]
    fn rejects_inconsistent_buffers() {
        assert!(Tensor::<f32>::new([2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f32>::new([2, 0], vec![]).is_err());
        assert!(matches!(
            Tensor::<f32>::new([1], vec![f32::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn permute_matches_index_map() {
        let x = iota(&[2, 3, 4]);
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y.at(&[c, a, b]), x.at(&[a, b, c]));
                }
            }
        }
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn concat_shape_algebra() {
        let a = Tensor::<f64>::zeros([2, 1]).unwrap();
        let b = Tensor::<f64>::ones([2, 2]).unwrap();
        let c = Tensor::concat(&[a, b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let ragged = Tensor::<f64>::zeros([3, 1]).unwrap();
        assert!(Tensor::concat(&[ragged, b], 1).is_err());
    }

    #[test]
    fn split_channels_in_order() {
        let x = iota(&[2, 6]);
        let parts = x.split(1, 3).unwrap();
        assert_eq!(parts.len(), 3);
        for (p, part) in parts.iter().enumerate() {
            assert_eq!(part.shape(), &[2, 2]);
            for r in 0..2 {
                for c in 0..2 {
                    assert_eq!(part.at(&[r, c]), x.at(&[r, 2 * p + c]));
                }
            }
        }
        assert!(matches!(x.split(1, 4), Err(Error::NotDivisible { .. })));
        assert_eq!(Tensor::concat(&parts, 1).unwrap(), x);
    }

    #[test]
    fn roll_and_pad() {
        let x = iota(&[3, 2]);
        let r = x.roll(0, 1).unwrap();
        assert_eq!(r.data(), &[4.0, 5.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(r.roll(0, -1).unwrap(), x);
        let p = x.pad_end(1, 1).unwrap();
        assert_eq!(p.shape(), &[3, 3]);
        assert_eq!(p.data(), &[0.0, 1.0, 0.0, 2.0, 3.0, 0.0, 4.0, 5.0, 0.0]);
        assert_eq!(p.narrow(1, 0, 2).unwrap(), x);
    }

    #[test]
    fn index_select_rows() {
        let x = iota(&[3, 2]);
        let y = x.index_select(&[2, 0, 2]).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        assert!(x.index_select(&[3]).is_err());
    }
}
