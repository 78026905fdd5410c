//! Dense row-major tensors of rank ≤ 3 and their complex pairs.

use std::fmt;

use rand::Rng;

use crate::error::{FsruError, Result};

/// Highest rank any tensor in this crate may have.
pub const MAX_RANK: usize = 3;

/// A dense, row-major `f64` array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(FsruError::Shape(format!(
                "rank {} exceeds the maximum of {MAX_RANK}",
                shape.len()
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(FsruError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.len() <= MAX_RANK, "rank {} > {MAX_RANK}", shape.len());
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor from a closure over the flat row-major index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        assert!(shape.len() <= MAX_RANK, "rank {} > {MAX_RANK}", shape.len());
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    /// Uniform samples in `[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.random_range(low..high))
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(FsruError::Shape(format!(
                "expected a scalar, found shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() || shape.len() > MAX_RANK {
            return Err(FsruError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[flat_index(&self.shape, index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = flat_index(&self.shape, index);
        self.data[i] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{} values]", self.data.len())
        }
    }
}

pub(crate) fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len(), "index rank mismatch");
    let mut flat = 0;
    for (&extent, &i) in shape.iter().zip(index) {
        assert!(i < extent, "index {index:?} out of bounds for {shape:?}");
        flat = flat * extent + i;
    }
    flat
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Result shape of broadcasting `a` against `b`.
///
/// Ranks must agree; an axis may differ only when one side has extent 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(FsruError::Shape(format!(
            "rank mismatch in broadcast: {a:?} vs {b:?}"
        )));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(FsruError::Shape(format!(
                "cannot broadcast {a:?} against {b:?}"
            ))),
        })
        .collect()
}

/// Row-major strides for `shape`, with zero stride on broadcast (extent-1) axes
/// relative to `target`.
pub(crate) fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for axis in (0..shape.len()).rev() {
        strides[axis] = if shape[axis] == 1 && target[axis] != 1 {
            0
        } else {
            acc
        };
        acc *= shape[axis];
    }
    strides
}

/// Applies `f` elementwise over the broadcast of `a` and `b`.
pub(crate) fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    if a.shape() == b.shape() {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor { shape, data });
    }
    // One operand repeats whole along the leading axes of the other.
    if a.shape() == shape.as_slice() && is_trailing(b.shape(), &shape) && !b.data.is_empty() {
        let mut data = Vec::with_capacity(a.data.len());
        for chunk in a.data.chunks(b.data.len()) {
            data.extend(chunk.iter().zip(&b.data).map(|(&x, &y)| f(x, y)));
        }
        return Ok(Tensor { shape, data });
    }
    if b.shape() == shape.as_slice() && is_trailing(a.shape(), &shape) && !a.data.is_empty() {
        let mut data = Vec::with_capacity(b.data.len());
        for chunk in b.data.chunks(a.data.len()) {
            data.extend(a.data.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
        return Ok(Tensor { shape, data });
    }
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for_each_index(&shape, |idx| {
        let (mut ia, mut ib) = (0, 0);
        for axis in 0..shape.len() {
            ia += idx[axis] * sa[axis];
            ib += idx[axis] * sb[axis];
        }
        data.push(f(a.data[ia], b.data[ib]));
    });
    Ok(Tensor { shape, data })
}

/// Whether `small`, with leading unit axes dropped, is a suffix of `full`.
fn is_trailing(small: &[usize], full: &[usize]) -> bool {
    let lead = small.iter().take_while(|&&s| s == 1).count();
    let core = &small[lead..];
    full.ends_with(core)
}

/// Sums `grad` (of the broadcast shape) back down to `shape`.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let strides = broadcast_strides(shape, grad.shape());
    let mut out = Tensor::zeros(shape);
    let gshape = grad.shape().to_vec();
    let mut flat = 0;
    for_each_index(&gshape, |idx| {
        let target: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.data[target] += grad.data[flat];
        flat += 1;
    });
    out
}

/// Visits every multi-index of `shape` in row-major order.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let len: usize = shape.iter().product();
    if len == 0 {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..len {
        f(&idx);
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// A complex array held as two real tensors of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(FsruError::Shape(format!(
                "real part {:?} and imaginary part {:?} differ",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn from_real(re: Tensor) -> Self {
        let im = Tensor::zeros(re.shape());
        Self { re, im }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    /// `re² + im²` per element.
    pub fn power_spectrum(&self) -> Tensor {
        let data = self
            .re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(r, i)| r * r + i * i)
            .collect();
        Tensor {
            shape: self.re.shape.clone(),
            data,
        }
    }

    /// `(a+jb)(c+jd) = (ac−bd) + j(ad+bc)`, elementwise with broadcasting.
    pub fn mul(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        let ac = broadcast_zip(&self.re, &other.re, |a, c| a * c)?;
        let bd = broadcast_zip(&self.im, &other.im, |b, d| b * d)?;
        let ad = broadcast_zip(&self.re, &other.im, |a, d| a * d)?;
        let bc = broadcast_zip(&self.im, &other.re, |b, c| b * c)?;
        Ok(ComplexTensor {
            re: broadcast_zip(&ac, &bd, |x, y| x - y)?,
            im: broadcast_zip(&ad, &bc, |x, y| x + y)?,
        })
    }

    pub fn max_abs_diff(&self, other: &ComplexTensor) -> f64 {
        self.re
            .max_abs_diff(&other.re)
            .max(self.im.max_abs_diff(&other.im))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_length_must_agree() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn complex_mul_matches_hand_arithmetic() {
        let a = ComplexTensor::new(Tensor::scalar(1.0), Tensor::scalar(2.0)).unwrap();
        let b = ComplexTensor::new(Tensor::scalar(3.0), Tensor::scalar(4.0)).unwrap();
        let c = a.mul(&b).unwrap();
        assert_eq!(c.re.data(), &[-5.0]);
        assert_eq!(c.im.data(), &[10.0]);
    }

    #[test]
    fn power_spectrum_of_three_four() {
        let z = ComplexTensor::new(Tensor::scalar(3.0), Tensor::scalar(4.0)).unwrap();
        assert_eq!(z.power_spectrum().data(), &[25.0]);
    }

    #[test]
    fn broadcast_only_over_unit_axes() {
        assert_eq!(broadcast_shape(&[4, 1, 3], &[1, 5, 3]).unwrap(), vec![4, 5, 3]);
        assert!(broadcast_shape(&[4, 3], &[2, 3]).is_err());
        assert!(broadcast_shape(&[3], &[2, 3]).is_err());
    }

    #[test]
    fn reduce_inverts_broadcast_sum() {
        let g = Tensor::ones(&[2, 3, 4]);
        let r = reduce_to_shape(&g, &[1, 3, 1]);
        assert_eq!(r.shape(), &[1, 3, 1]);
        assert!(r.data().iter().all(|&v| v == 8.0));
    }
}
