//! Frequency-domain representation and cross-modal fusion.
//!
//! Each modality is moved to the frequency domain along its token axis, its
//! power spectrum is compressed by a cosine-weighted filter bank, the two
//! compressed spectra gate each other through a pooled 1×1 channel map, and
//! the result is brought back with an inverse transform (real part kept).

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{FsruError, Result};
use crate::fft;
use crate::graph::{ComplexVar, Graph, Var};
use crate::kernels;
use crate::params::Parameters;
use crate::tensor::Tensor;

/// Weights `cos((2i−1)π/(2k))` for `i = 1..=k`.
pub fn cosine_weights(k: usize) -> Vec<f64> {
    (1..=k)
        .map(|i| ((2 * i - 1) as f64 * PI / (2 * k) as f64).cos())
        .collect()
}

/// Weight `i` and filter `k+1−i` carry opposite weights, so the weighted sum
/// is taken as `Σ_{i ≤ k/2} w_i·(bank_i − bank_{k+1−i})`. Returns the `1 × h`
/// weights and the `h × k` difference matrix; the middle filter of an odd bank
/// has weight zero and is dropped. `None` when `k = 1`.
fn mirrored_pairs(k: usize) -> Option<(Tensor, Tensor)> {
    let h = k / 2;
    if h == 0 {
        return None;
    }
    let weights = cosine_weights(k)[..h].to_vec();
    let diff = Tensor::from_fn(&[h, k], |idx| {
        let (row, col) = (idx / k, idx % k);
        if col == row {
            1.0
        } else if col == k - 1 - row {
            -1.0
        } else {
            0.0
        }
    });
    Some((Tensor::new(&[1, h], weights).expect("length h"), diff))
}

/// How the pooled spectrum is mapped across channels before gating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMap {
    /// Per-channel scale and bias.
    Diagonal,
    /// Dense `d × d` map and bias.
    Full,
}

/// Which stages of the block are active. Disabled stages become identities
/// (USC falls back to `|X|²/l`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpectralStages {
    pub compress: bool,
    pub co_select: bool,
}

impl Default for SpectralStages {
    fn default() -> Self {
        Self {
            compress: true,
            co_select: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralBlockParams {
    /// `k × m × d`.
    pub bank_text: Tensor,
    /// `k × n × d`.
    pub bank_image: Tensor,
    /// `m × d`.
    pub select_text: Tensor,
    /// `n × d`.
    pub select_image: Tensor,
    /// Channel map producing the filter applied to the text spectrum
    /// (from the pooled image spectrum): `1 × d` or `d × d`.
    pub to_text_weight: Tensor,
    pub to_text_bias: Tensor,
    /// Channel map producing the filter applied to the image spectrum.
    pub to_image_weight: Tensor,
    pub to_image_bias: Tensor,
}

pub struct SpectralVars {
    pub bank_text: Var,
    pub bank_image: Var,
    pub select_text: Var,
    pub select_image: Var,
    pub to_text_weight: Var,
    pub to_text_bias: Var,
    pub to_image_weight: Var,
    pub to_image_bias: Var,
}

impl SpectralBlockParams {
    /// Filter `i` starts at `1 + (2/k)·cos((2i−1)π/(2k)) + uniform(±0.01)`.
    /// A bank of plain ones would be cancelled by the cosine weights; the
    /// extra term makes the weighted sum one for `k ≥ 2`, so compression starts
    /// near the identity. Selection parameters start at one, channel maps at
    /// identity with zero bias.
    pub fn init<R: Rng + ?Sized>(
        k: usize,
        text_len: usize,
        image_len: usize,
        dim: usize,
        map: ChannelMap,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(FsruError::EmptyFilterBank);
        }
        let weights = cosine_weights(k);
        let per_filter = |len: usize| len * dim;
        let mut bank = |len: usize| {
            Tensor::from_fn(&[k, len, dim], |idx| {
                let i = idx / per_filter(len);
                1.0 + 2.0 / k as f64 * weights[i] + rng.random_range(-0.01..0.01)
            })
        };
        let bank_text = bank(text_len);
        let bank_image = bank(image_len);
        let weight = || match map {
            ChannelMap::Diagonal => Tensor::ones(&[1, dim]),
            ChannelMap::Full => Tensor::from_fn(&[dim, dim], |i| if i / dim == i % dim { 1.0 } else { 0.0 }),
        };
        Ok(Self {
            bank_text,
            bank_image,
            select_text: Tensor::ones(&[text_len, dim]),
            select_image: Tensor::ones(&[image_len, dim]),
            to_text_weight: weight(),
            to_text_bias: Tensor::zeros(&[1, dim]),
            to_image_weight: weight(),
            to_image_bias: Tensor::zeros(&[1, dim]),
        })
    }

    pub fn filters(&self) -> usize {
        self.bank_text.shape()[0]
    }

    pub fn channel_map(&self) -> ChannelMap {
        if self.to_text_weight.shape()[0] == 1 {
            ChannelMap::Diagonal
        } else {
            ChannelMap::Full
        }
    }
}

impl Parameters for SpectralBlockParams {
    type Vars = SpectralVars;

    fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("spectral.bank_text".into(), &self.bank_text),
            ("spectral.bank_image".into(), &self.bank_image),
            ("spectral.select_text".into(), &self.select_text),
            ("spectral.select_image".into(), &self.select_image),
            ("spectral.to_text_weight".into(), &self.to_text_weight),
            ("spectral.to_text_bias".into(), &self.to_text_bias),
            ("spectral.to_image_weight".into(), &self.to_image_weight),
            ("spectral.to_image_bias".into(), &self.to_image_bias),
        ]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("spectral.bank_text".into(), &mut self.bank_text),
            ("spectral.bank_image".into(), &mut self.bank_image),
            ("spectral.select_text".into(), &mut self.select_text),
            ("spectral.select_image".into(), &mut self.select_image),
            ("spectral.to_text_weight".into(), &mut self.to_text_weight),
            ("spectral.to_text_bias".into(), &mut self.to_text_bias),
            ("spectral.to_image_weight".into(), &mut self.to_image_weight),
            ("spectral.to_image_bias".into(), &mut self.to_image_bias),
        ]
    }

    fn bind(&self, g: &mut Graph) -> SpectralVars {
        SpectralVars {
            bank_text: g.leaf(self.bank_text.clone()),
            bank_image: g.leaf(self.bank_image.clone()),
            select_text: g.leaf(self.select_text.clone()),
            select_image: g.leaf(self.select_image.clone()),
            to_text_weight: g.leaf(self.to_text_weight.clone()),
            to_text_bias: g.leaf(self.to_text_bias.clone()),
            to_image_weight: g.leaf(self.to_image_weight.clone()),
            to_image_bias: g.leaf(self.to_image_bias.clone()),
        }
    }

    fn leaves(v: &SpectralVars) -> Vec<Var> {
        vec![
            v.bank_text,
            v.bank_image,
            v.select_text,
            v.select_image,
            v.to_text_weight,
            v.to_text_bias,
            v.to_image_weight,
            v.to_image_bias,
        ]
    }
}

/// Token axis of an `[L, d]` or `[B, L, d]` node.
fn token_axis(g: &Graph, x: Var) -> usize {
    g.shape(x).len() - 2
}

/// Adds leading unit axes so `t` has the same rank as `like`.
fn lift(g: &mut Graph, t: Var, rank: usize) -> Result<Var> {
    let mut shape = g.shape(t).to_vec();
    if shape.len() == rank {
        return Ok(t);
    }
    while shape.len() < rank {
        shape.insert(0, 1);
    }
    g.reshape(t, &shape)
}

/// Per-channel DFT of a real `[.., L, d]` node along its token axis.
pub fn spectrum(g: &mut Graph, x: Var) -> Result<ComplexVar> {
    let axis = token_axis(g, x);
    let z = g.to_complex(x);
    g.dft(z, axis)
}

/// Unimodal compression: `Σ_i (1/l)·|X|² ⊙ bank_i · cos((2i−1)π/(2k))`.
///
/// `bank` is `[k, L, d]`; `l` is the token-axis length of `x`.
pub fn usc(g: &mut Graph, x: ComplexVar, bank: Var) -> Result<Var> {
    let bshape = g.shape(bank).to_vec();
    let k = bshape[0];
    if k == 0 {
        return Err(FsruError::EmptyFilterBank);
    }
    let xshape = g.shape(x.re).to_vec();
    let axis = xshape.len() - 2;
    let (len, dim) = (xshape[axis], xshape[axis + 1]);
    if bshape.len() != 3 || bshape[1] != len || bshape[2] != dim {
        return Err(FsruError::Shape(format!(
            "filter bank {bshape:?} for spectrum {xshape:?}"
        )));
    }
    let flat = g.reshape(bank, &[k, len * dim])?;
    let combined = match mirrored_pairs(k) {
        Some((weights, diff)) => {
            let diff = g.constant(diff);
            let paired = g.matmul(diff, flat)?;
            let weights = g.constant(weights);
            g.matmul(weights, paired)?
        }
        None => {
            let zero = g.constant(Tensor::zeros(&[1, 1]));
            g.matmul(zero, flat)?
        }
    };
    let combined = g.reshape(combined, &[len, dim])?;
    let combined = lift(g, combined, xshape.len())?;
    let power = g.abs_sq(x)?;
    let filtered = g.mul(power, combined)?;
    Ok(g.scale(filtered, 1.0 / len as f64))
}

/// The `-w/o USC` variant: `|X|²/l`.
pub fn power_only(g: &mut Graph, x: ComplexVar) -> Result<Var> {
    let len = g.shape(x.re)[g.shape(x.re).len() - 2];
    let power = g.abs_sq(x)?;
    Ok(g.scale(power, 1.0 / len as f64))
}

/// `Conv(Avg(source ⊙ select))`: a `[.., 1, d]` filter pooled over tokens.
fn selection_filter(
    g: &mut Graph,
    source: Var,
    select: Var,
    weight: Var,
    bias: Var,
) -> Result<Var> {
    let rank = g.shape(source).len();
    let select = lift(g, select, rank)?;
    let weighted = g.mul(source, select)?;
    let pooled = g.mean_axis(weighted, rank - 2)?;
    let mapped = if g.shape(weight)[0] == 1 {
        let w = lift(g, weight, rank)?;
        g.mul(pooled, w)?
    } else {
        g.matmul(pooled, weight)?
    };
    let bias = lift(g, bias, rank)?;
    g.add(mapped, bias)
}

/// Cross-modal co-selection on compressed spectra:
/// `X̃ᵗ = X̂ᵗ ⊙ Conv(Avg(X̂ᵛ ⊙ Θᵛ))` and symmetrically for the image.
pub fn csc(g: &mut Graph, text: Var, image: Var, vars: &SpectralVars) -> Result<(Var, Var)> {
    let to_text = selection_filter(g, image, vars.select_image, vars.to_text_weight, vars.to_text_bias)?;
    let to_image = selection_filter(g, text, vars.select_text, vars.to_image_weight, vars.to_image_bias)?;
    Ok((g.mul(text, to_text)?, g.mul(image, to_image)?))
}

/// Intermediate nodes of one block evaluation, for inspection and dumps.
pub struct SpectralTrace {
    pub raw_text: Var,
    pub raw_image: Var,
    pub compressed_text: Var,
    pub compressed_image: Var,
    pub selected_text: Var,
    pub selected_image: Var,
    pub out_text: Var,
    pub out_image: Var,
}

/// The full block: spectrum → compression → co-selection → inverse transform.
pub fn spectral_block(
    g: &mut Graph,
    x_text: Var,
    x_image: Var,
    vars: &SpectralVars,
    stages: SpectralStages,
) -> Result<SpectralTrace> {
    let spec_t = spectrum(g, x_text)?;
    let spec_v = spectrum(g, x_image)?;
    let raw_text = power_only(g, spec_t)?;
    let raw_image = power_only(g, spec_v)?;
    let (compressed_text, compressed_image) = if stages.compress {
        (usc(g, spec_t, vars.bank_text)?, usc(g, spec_v, vars.bank_image)?)
    } else {
        (raw_text, raw_image)
    };
    let (selected_text, selected_image) = if stages.co_select {
        csc(g, compressed_text, compressed_image, vars)?
    } else {
        (compressed_text, compressed_image)
    };
    let out_text = back_to_tokens(g, selected_text)?;
    let out_image = back_to_tokens(g, selected_image)?;
    Ok(SpectralTrace {
        raw_text,
        raw_image,
        compressed_text,
        compressed_image,
        selected_text,
        selected_image,
        out_text,
        out_image,
    })
}

fn back_to_tokens(g: &mut Graph, spectrum: Var) -> Result<Var> {
    let axis = token_axis(g, spectrum);
    let z = g.to_complex(spectrum);
    Ok(g.idft(z, axis)?.re)
}

/// Channels processed together by [`spectral_block_forward`].
const TILE: usize = 16;

/// [`spectral_block`]'s outputs computed directly, without recording a graph.
/// Inputs are `[L, d]` or `[B, L, d]`.
///
/// Every stage acts per channel apart from the channel map, which sees only
/// the pooled vectors, so the block runs over narrow column tiles: one pass
/// forms the filtered spectra and pools them, a second applies the
/// co-selection filters and inverts.
pub fn spectral_block_forward(
    p: &SpectralBlockParams,
    x_text: &Tensor,
    x_image: &Tensor,
    stages: SpectralStages,
) -> Result<(Tensor, Tensor)> {
    let text = Modality::new(x_text, &p.bank_text)?;
    let image = Modality::new(x_image, &p.bank_image)?;
    if text.samples != image.samples {
        return Err(FsruError::Shape(format!(
            "batch sizes differ: {:?} vs {:?}",
            x_text.shape(),
            x_image.shape()
        )));
    }
    let mut out_text = Tensor::zeros(x_text.shape());
    let mut out_image = Tensor::zeros(x_image.shape());
    for s in 0..text.samples {
        let ot = &mut out_text.data_mut()[s * text.size()..(s + 1) * text.size()];
        let pooled_t = text.forward_pass(&x_text.data()[s * text.size()..], &p.select_text, stages.compress, ot);
        let ov = &mut out_image.data_mut()[s * image.size()..(s + 1) * image.size()];
        let pooled_v = image.forward_pass(&x_image.data()[s * image.size()..], &p.select_image, stages.compress, ov);
        let (to_text, to_image) = if stages.co_select {
            (
                Some(channel_map(&pooled_v, &p.to_text_weight, &p.to_text_bias)),
                Some(channel_map(&pooled_t, &p.to_image_weight, &p.to_image_bias)),
            )
        } else {
            (None, None)
        };
        text.inverse_pass(&mut out_text.data_mut()[s * text.size()..(s + 1) * text.size()], to_text.as_deref());
        image.inverse_pass(&mut out_image.data_mut()[s * image.size()..(s + 1) * image.size()], to_image.as_deref());
    }
    Ok((out_text, out_image))
}

struct Modality<'a> {
    len: usize,
    dim: usize,
    samples: usize,
    bank: &'a Tensor,
    plan: Option<fft::FftPlan>,
}

impl<'a> Modality<'a> {
    fn new(x: &Tensor, bank: &'a Tensor) -> Result<Self> {
        let (len, dim) = (bank.shape()[1], bank.shape()[2]);
        let shape = x.shape();
        if shape.len() < 2 || shape[shape.len() - 2] != len || shape[shape.len() - 1] != dim {
            return Err(FsruError::Shape(format!("input {shape:?} for parameters of {len} x {dim}")));
        }
        Ok(Self {
            len,
            dim,
            samples: x.len() / (len * dim),
            bank,
            plan: len.is_power_of_two().then(|| fft::FftPlan::new(len)),
        })
    }

    fn size(&self) -> usize {
        self.len * self.dim
    }

    fn transform(&self, re: &mut [f64], im: &mut [f64], width: usize, inverse: bool) {
        match &self.plan {
            Some(plan) => plan.process_rows(re, im, width, inverse),
            None => fft::naive_rows(re, im, self.len, width, inverse),
        }
    }

    /// Writes the (compressed) power spectrum of one sample into `out` and
    /// returns its token mean weighted by `select`.
    fn forward_pass(&self, x: &[f64], select: &Tensor, compress: bool, out: &mut [f64]) -> Vec<f64> {
        let (len, dim, k) = (self.len, self.dim, self.bank.shape()[0]);
        let inv_len = 1.0 / len as f64;
        let pairs = mirrored_pairs(k).map(|(w, _)| w.into_data());
        let bank = self.bank.data();
        let mut pooled = vec![0.0; dim];
        let mut combined = [0.0; TILE];
        let mut re = vec![0.0; len * TILE];
        let mut im = vec![0.0; len * TILE];
        for c0 in (0..dim).step_by(TILE) {
            let w = TILE.min(dim - c0);
            let (re, im) = (&mut re[..len * w], &mut im[..len * w]);
            for l in 0..len {
                re[l * w..(l + 1) * w].copy_from_slice(&x[l * dim + c0..l * dim + c0 + w]);
            }
            im.fill(0.0);
            self.transform(re, im, w, false);
            let size = len * dim;
            for l in 0..len {
                let span = l * dim + c0..l * dim + c0 + w;
                let (tre, tim) = (&re[l * w..(l + 1) * w], &im[l * w..(l + 1) * w]);
                let sel = &select.data()[span.clone()];
                let acc = &mut pooled[c0..c0 + w];
                let row = &mut out[span.clone()];
                match &pairs {
                    Some(weights) if compress => {
                        combined.fill(0.0);
                        for (i, wi) in weights.iter().enumerate() {
                            let a = &bank[i * size + span.start..i * size + span.end];
                            let b = &bank[(k - 1 - i) * size + span.start..(k - 1 - i) * size + span.end];
                            for ((c, a), b) in combined[..w].iter_mut().zip(a).zip(b) {
                                *c += wi * (a - b);
                            }
                        }
                        for (((o, (r, i)), c), (s, p)) in row.iter_mut().zip(tre.iter().zip(tim)).zip(&combined[..w]).zip(sel.iter().zip(acc.iter_mut())) {
                            *o = (r * r + i * i) * c * inv_len;
                            *p += *o * s;
                        }
                    }
                    _ => {
                        // k = 1 combines to zero; without compression only the power remains.
                        let gain = if compress { 0.0 } else { 1.0 };
                        for ((o, (r, i)), (s, p)) in row.iter_mut().zip(tre.iter().zip(tim)).zip(sel.iter().zip(acc.iter_mut())) {
                            *o = (r * r + i * i) * gain * inv_len;
                            *p += *o * s;
                        }
                    }
                }
            }
        }
        pooled.iter_mut().for_each(|v| *v /= len as f64);
        pooled
    }

    /// Applies the co-selection filter to a spectrum in `data` and replaces
    /// it with the real part of its inverse transform.
    fn inverse_pass(&self, data: &mut [f64], filter: Option<&[f64]>) {
        let (len, dim) = (self.len, self.dim);
        let mut re = vec![0.0; len * TILE];
        let mut im = vec![0.0; len * TILE];
        let inv_len = 1.0 / len as f64;
        for c0 in (0..dim).step_by(TILE) {
            let w = TILE.min(dim - c0);
            let (re, im) = (&mut re[..len * w], &mut im[..len * w]);
            for (l, tile_row) in re.chunks_mut(w).enumerate() {
                let row = &data[l * dim + c0..l * dim + c0 + w];
                match filter {
                    Some(f) => {
                        for ((t, v), f) in tile_row.iter_mut().zip(row).zip(&f[c0..c0 + w]) {
                            *t = v * f;
                        }
                    }
                    None => tile_row.copy_from_slice(row),
                }
            }
            im.fill(0.0);
            self.transform(re, im, w, true);
            for (l, tile_row) in re.chunks(w).enumerate() {
                for (v, t) in data[l * dim + c0..l * dim + c0 + w].iter_mut().zip(tile_row) {
                    *v = t * inv_len;
                }
            }
        }
    }
}

/// `pooled · weight + bias` with a diagonal (`1 × d`) or full (`d × d`) map.
fn channel_map(pooled: &[f64], weight: &Tensor, bias: &Tensor) -> Vec<f64> {
    let dim = pooled.len();
    let mapped = if weight.shape()[0] == 1 {
        pooled.iter().zip(weight.data()).map(|(v, w)| v * w).collect()
    } else {
        kernels::matmul(pooled, weight.data(), 1, dim, dim)
    };
    mapped.iter().zip(bias.data()).map(|(m, b)| m + b).collect()
}

/// Fraction of entries below 1% of the tensor's maximum absolute value.
pub fn sparsity(t: &Tensor) -> f64 {
    let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 || t.is_empty() {
        return 1.0;
    }
    t.data().iter().filter(|v| v.abs() < 0.01 * max).count() as f64 / t.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn jitter(t: &mut Tensor, r: &mut ChaCha8Rng) {
        t.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.5..0.5));
    }

    #[test]
    fn direct_forward_matches_graph() {
        let mut r = rng();
        // Odd lengths take the direct-DFT path; 20 channels leave a partial tile.
        for (k, lt, lv, map, batch) in [
            (2, 8, 16, ChannelMap::Diagonal, None),
            (3, 16, 8, ChannelMap::Full, Some(3)),
            (1, 6, 5, ChannelMap::Diagonal, Some(2)),
            (4, 32, 12, ChannelMap::Full, None),
        ] {
            let dim = 20;
            let mut p = SpectralBlockParams::init(k, lt, lv, dim, map, &mut r).unwrap();
            for t in [&mut p.select_text, &mut p.select_image, &mut p.to_text_weight, &mut p.to_text_bias] {
                jitter(t, &mut r);
            }
            jitter(&mut p.to_image_weight, &mut r);
            jitter(&mut p.to_image_bias, &mut r);
            let shape = |len: usize| match batch {
                Some(b) => vec![b, len, dim],
                None => vec![len, dim],
            };
            let xt = Tensor::uniform(&shape(lt), -1.0, 1.0, &mut r);
            let xv = Tensor::uniform(&shape(lv), -1.0, 1.0, &mut r);
            for (compress, co_select) in [(true, true), (false, true), (true, false), (false, false)] {
                let stages = SpectralStages { compress, co_select };
                let mut g = Graph::new();
                let vars = p.bind(&mut g);
                let (a, b) = (g.constant(xt.clone()), g.constant(xv.clone()));
                let trace = spectral_block(&mut g, a, b, &vars, stages).unwrap();
                let (ot, ov) = spectral_block_forward(&p, &xt, &xv, stages).unwrap();
                assert!(ot.max_abs_diff(g.value(trace.out_text)) < 1e-12, "k={k} {stages:?}");
                assert!(ov.max_abs_diff(g.value(trace.out_image)) < 1e-12, "k={k} {stages:?}");
            }
        }
    }

    #[test]
    fn equal_filters_cancel_exactly() {
        let mut r = rng();
        for k in 1..=9 {
            let mut g = Graph::new();
            let x = g.constant(Tensor::uniform(&[16, 4], -3.0, 3.0, &mut r));
            let bank = g.constant(Tensor::full(&[k, 16, 4], 0.37));
            let spec = spectrum(&mut g, x).unwrap();
            let out = usc(&mut g, spec, bank).unwrap();
            assert!(g.value(out).data().iter().all(|&v| v == 0.0), "k={k}");
        }
    }

    #[test]
    fn k1_weight_vanishes() {
        assert!(cosine_weights(1)[0].abs() < 1e-16);
    }

    #[test]
    fn k2_reduces_to_filter_difference() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::uniform(&[4, 2], -1.0, 1.0, &mut rng()));
        let bank_t = Tensor::uniform(&[2, 4, 2], 0.0, 2.0, &mut rng());
        let bank = g.constant(bank_t.clone());
        let spec = spectrum(&mut g, x).unwrap();
        let out = usc(&mut g, spec, bank).unwrap();
        let power = g.complex_value(spec).power_spectrum();
        for i in 0..4 {
            for c in 0..2 {
                let want = 2f64.sqrt() / (2.0 * 4.0)
                    * power.at(&[i, c])
                    * (bank_t.at(&[0, i, c]) - bank_t.at(&[1, i, c]));
                assert!((g.value(out).at(&[i, c]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_bank_is_rejected() {
        assert!(matches!(
            SpectralBlockParams::init(0, 4, 4, 2, ChannelMap::Diagonal, &mut rng()),
            Err(FsruError::EmptyFilterBank)
        ));
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[4, 2]));
        let bank = g.constant(Tensor::zeros(&[0, 4, 2]));
        let spec = spectrum(&mut g, x).unwrap();
        assert!(matches!(usc(&mut g, spec, bank), Err(FsruError::EmptyFilterBank)));
    }

    #[test]
    fn constant_rows_put_energy_in_dc() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[8, 1], 3.0));
        let spec = spectrum(&mut g, x).unwrap();
        let z = g.complex_value(spec);
        assert!((z.re.data()[0] - 24.0).abs() < 1e-12);
        for k in 1..8 {
            assert!(z.re.data()[k].abs() < 1e-12 && z.im.data()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn single_tone_hits_two_bins() {
        let len = 16;
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[len, 1], |i| (2.0 * PI * 2.0 * i as f64 / len as f64).cos()));
        let spec = spectrum(&mut g, x).unwrap();
        let power = g.complex_value(spec).power_spectrum();
        for k in 0..len {
            let nonzero = power.data()[k] > 1e-9;
            assert_eq!(nonzero, k == 2 || k == len - 2, "bin {k}");
        }
    }

    #[test]
    fn zero_selection_leaves_bias_filter() {
        let (m, n, d) = (4, 2, 3);
        let mut p = SpectralBlockParams::init(2, m, n, d, ChannelMap::Diagonal, &mut rng()).unwrap();
        p.select_image = Tensor::zeros(&[n, d]);
        p.to_text_bias = Tensor::new(&[1, d], vec![0.5, -1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let xt = Tensor::uniform(&[m, d], 0.0, 1.0, &mut rng());
        let text = g.constant(xt.clone());
        let image = g.constant(Tensor::uniform(&[n, d], 0.0, 1.0, &mut rng()));
        let (out_t, _) = csc(&mut g, text, image, &vars).unwrap();
        for i in 0..m {
            for c in 0..d {
                let want = xt.at(&[i, c]) * p.to_text_bias.at(&[0, c]);
                assert_eq!(g.value(out_t).at(&[i, c]), want);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = SpectralBlockParams::init(2, 8, 4, 3, ChannelMap::Full, &mut rng()).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let t = g.constant(Tensor::zeros(&[2, 8, 3]));
        let v = g.constant(Tensor::zeros(&[2, 4, 3]));
        let trace = spectral_block(&mut g, t, v, &vars, SpectralStages::default()).unwrap();
        assert!(g.value(trace.out_text).data().iter().all(|&x| x == 0.0));
        assert!(g.value(trace.out_image).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sparsity_counts_small_entries() {
        let t = Tensor::new(&[4], vec![100.0, 0.5, 2.0, 0.0]).unwrap();
        assert_eq!(sparsity(&t), 0.5);
    }

    #[test]
    fn initial_compression_is_near_identity() {
        for k in [2, 4, 8] {
            let p = SpectralBlockParams::init(k, 8, 4, 3, ChannelMap::Diagonal, &mut rng()).unwrap();
            let mut g = Graph::new();
            let x = g.constant(Tensor::uniform(&[8, 3], -1.0, 1.0, &mut rng()));
            let bank = g.constant(p.bank_text.clone());
            let spec = spectrum(&mut g, x).unwrap();
            let out = usc(&mut g, spec, bank).unwrap();
            let raw = power_only(&mut g, spec).unwrap();
            for (a, b) in g.value(out).data().iter().zip(g.value(raw).data()) {
                // Noise of ±0.01 per filter against unit weight sum.
                assert!((a - b).abs() <= 0.01 * k as f64 * b.abs() + 1e-12, "k={k}: {a} vs {b}");
            }
        }
    }
}
