//! Discrete Fourier transforms along one tensor axis.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley–Tukey transform with
//! bit-reversal reordering; other lengths fall back to the direct O(L²) sum.
//! The forward transform is unnormalised; the inverse carries the `1/L`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{FsruError, Result};
use crate::parallel;
use crate::tensor::{split_axis, ComplexTensor, Tensor};

/// Columns transformed together by [`FftPlan::process_rows`].
const COLUMN_TILE: usize = 16;

/// Precomputed twiddles and bit-reversal permutation for one length.
#[derive(Clone, Debug)]
pub struct FftPlan {
    len: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    /// Panics unless `len` is a power of two.
    pub fn new(len: usize) -> Self {
        assert!(len.is_power_of_two(), "radix-2 plan needs a power of two, got {len}");
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // Each twiddle is evaluated directly rather than by recurrence so the
        // error stays at a few ulps regardless of length.
        let twiddles = (0..len / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        Self { len, twiddles, bitrev }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalised transform. `inverse` flips the exponent sign.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.len;
        assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let w = if inverse { w.conj() } else { w };
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }

    /// Transforms `inner` interleaved lines at once, element `i` of line `c`
    /// at `i * inner + c`. Butterflies combine whole rows, so the innermost
    /// loop is contiguous. Arithmetic matches [`FftPlan::process`] exactly.
    pub fn process_rows(&self, re: &mut [f64], im: &mut [f64], inner: usize, inverse: bool) {
        let n = self.len;
        assert_eq!(re.len(), n * inner);
        assert_eq!(im.len(), n * inner);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                swap_rows(re, i, j, inner);
                swap_rows(im, i, j, inner);
            }
        }
        // Column tiles keep each pass over the rows inside the cache.
        for c0 in (0..inner).step_by(COLUMN_TILE) {
            let width = COLUMN_TILE.min(inner - c0);
            let mut size = 2;
            while size <= n {
                let half = size / 2;
                let step = n / size;
                for start in (0..n).step_by(size) {
                    for k in 0..half {
                        let w = self.twiddles[k * step];
                        let (wr, wi) = (w.re, if inverse { -w.im } else { w.im });
                        let top = (start + k) * inner + c0;
                        let bottom = (start + k + half) * inner + c0;
                        let (re_lo, re_hi) = re.split_at_mut(bottom);
                        let (im_lo, im_hi) = im.split_at_mut(bottom);
                        let ar = &mut re_lo[top..top + width];
                        let ai = &mut im_lo[top..top + width];
                        let br = &mut re_hi[..width];
                        let bi = &mut im_hi[..width];
                        let lanes = ar.iter_mut().zip(ai.iter_mut()).zip(br.iter_mut().zip(bi.iter_mut()));
                        for ((ar, ai), (br, bi)) in lanes {
                            let tr = *br * wr - *bi * wi;
                            let ti = *br * wi + *bi * wr;
                            *br = *ar - tr;
                            *bi = *ai - ti;
                            *ar += tr;
                            *ai += ti;
                        }
                    }
                }
                size *= 2;
            }
        }
    }
}

fn swap_rows(data: &mut [f64], i: usize, j: usize, inner: usize) {
    let (lo, hi) = data.split_at_mut(j * inner);
    lo[i * inner..(i + 1) * inner].swap_with_slice(&mut hi[..inner]);
}

/// Direct summation `X[k] = Σ_i x[i]·e^{∓j2πki/L}`, unnormalised.
pub fn dft_naive(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    // Reduce k·i mod n first so the angle stays small.
                    let phase = ((k * i) % n) as f64;
                    x * Complex64::from_polar(1.0, sign * 2.0 * PI * phase / n as f64)
                })
                .sum()
        })
        .collect()
}

/// Direct transform of `inner` interleaved lines laid out as in
/// [`FftPlan::process_rows`].
pub fn naive_rows(re: &mut [f64], im: &mut [f64], len: usize, inner: usize, inverse: bool) {
    let mut line = vec![Complex64::new(0.0, 0.0); len];
    for c in 0..inner {
        for (i, z) in line.iter_mut().enumerate() {
            *z = Complex64::new(re[i * inner + c], im[i * inner + c]);
        }
        for (i, z) in dft_naive(&line, inverse).into_iter().enumerate() {
            re[i * inner + c] = z.re;
            im[i * inner + c] = z.im;
        }
    }
}

/// Unnormalised transform of one line, choosing the fast path when possible.
pub fn transform_line(buf: &mut [Complex64], inverse: bool) {
    if buf.len().is_power_of_two() {
        FftPlan::new(buf.len()).process(buf, inverse);
    } else {
        let out = dft_naive(buf, inverse);
        buf.copy_from_slice(&out);
    }
}

/// Transforms every line of `(re, im)` along `axis` in place, scaling by `scale`.
pub(crate) fn transform_axis(
    re: &mut Tensor,
    im: &mut Tensor,
    axis: usize,
    inverse: bool,
    scale: f64,
) -> Result<()> {
    let shape = re.shape().to_vec();
    if axis >= shape.len() {
        return Err(FsruError::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let (_, len, inner) = split_axis(&shape, axis);
    if len == 0 {
        return Err(FsruError::EmptyAxis);
    }
    if re.is_empty() {
        return Ok(());
    }
    let block = len * inner;
    let work = re.len() * (usize::BITS - len.leading_zeros()) as usize;
    if len.is_power_of_two() {
        let plan = FftPlan::new(len);
        parallel::for_each_row_pair(re.data_mut(), im.data_mut(), block, work, |_, rb, ib| {
            plan.process_rows(rb, ib, inner, inverse);
            if scale != 1.0 {
                rb.iter_mut().chain(ib.iter_mut()).for_each(|v| *v *= scale);
            }
        });
        return Ok(());
    }
    parallel::for_each_row_pair(re.data_mut(), im.data_mut(), block, work, |_, rb, ib| {
        let mut line = vec![Complex64::new(0.0, 0.0); len];
        for c in 0..inner {
            for (i, z) in line.iter_mut().enumerate() {
                *z = Complex64::new(rb[i * inner + c], ib[i * inner + c]);
            }
            let out = dft_naive(&line, inverse);
            for (i, z) in out.iter().enumerate() {
                rb[i * inner + c] = z.re * scale;
                ib[i * inner + c] = z.im * scale;
            }
        }
    });
    Ok(())
}

/// Forward DFT along `axis`.
pub fn dft_1d(x: &ComplexTensor, axis: usize) -> Result<ComplexTensor> {
    let mut out = x.clone();
    transform_axis(&mut out.re, &mut out.im, axis, false, 1.0)?;
    Ok(out)
}

/// Inverse DFT along `axis`, including the `1/L` factor.
pub fn idft_1d(x: &ComplexTensor, axis: usize) -> Result<ComplexTensor> {
    let len = *x.shape().get(axis).ok_or_else(|| {
        FsruError::Shape(format!("axis {axis} out of range for shape {:?}", x.shape()))
    })?;
    if len == 0 {
        return Err(FsruError::EmptyAxis);
    }
    let mut out = x.clone();
    transform_axis(&mut out.re, &mut out.im, axis, true, 1.0 / len as f64)?;
    Ok(out)
}
