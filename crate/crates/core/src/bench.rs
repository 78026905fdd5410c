//! Analytic FLOP counts, the convolution-theorem oracle, and single-threaded
//! mixer timings.

use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifact::Csv;
use crate::config::MixerKind;
use crate::error::{FsruError, Result};
use crate::fft::{dft_1d, idft_1d};
use crate::mixers::{self, AttentionParams, SpatialMlpParams};
use crate::parallel;
use crate::spectral::{spectral_block_forward, ChannelMap, SpectralBlockParams, SpectralStages};
use crate::tensor::{ComplexTensor, Tensor};

pub const WARMUP_RUNS: usize = 5;
pub const DEFAULT_REPEATS: usize = 20;

/// Operation count of one mixer on an `L × d` sequence (image column):
/// spectral `L·d·log₂L + (L+d)·d`, attention `L·d² + L²·d`, spatial MLP `L²·d`.
pub fn flops(kind: MixerKind, len: usize, d: usize) -> f64 {
    let (l, d) = (len as f64, d as f64);
    match kind {
        MixerKind::Spectral => l * d * l.log2() + (l + d) * d,
        MixerKind::SelfAttention => l * d * d + l * l * d,
        MixerKind::SpatialMlp => l * l * d,
    }
}

/// Text-column counts for an `m × d` sequence. The spectral entry is
/// `m·d·log₂m + (m·log₂d + d)·d`, which is not the image expression with
/// `n` replaced by `m`; both are kept as tabulated.
pub fn flops_text(kind: MixerKind, m: usize, d: usize) -> f64 {
    let (l, d) = (m as f64, d as f64);
    match kind {
        MixerKind::Spectral => l * d * l.log2() + (l * d.log2() + d) * d,
        MixerKind::SelfAttention => l * l * d + l * d * d,
        MixerKind::SpatialMlp => l * l * d,
    }
}

/// `y[s, c] = Σ_t kernel[(s − t) mod L, c] · x[t, c]` by direct summation.
pub fn direct_circular_conv(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.shape() != kernel.shape() {
        return Err(FsruError::Shape(format!(
            "circular convolution of {:?} with {:?}",
            x.shape(),
            kernel.shape()
        )));
    }
    let (len, d) = (x.shape()[0], x.shape()[1]);
    let mut out = Tensor::zeros(&[len, d]);
    for s in 0..len {
        for t in 0..len {
            let lag = (s + len - t) % len;
            for c in 0..d {
                out.data_mut()[s * d + c] += kernel.data()[lag * d + c] * x.data()[t * d + c];
            }
        }
    }
    Ok(out)
}

/// The direct circular convolution and `Re idft(dft(kernel) ⊙ dft(x))`.
/// The two agree for a translation-invariant kernel, which is the case in
/// which kernel integration reduces to a global convolution.
pub fn circular_conv_equivalence(x: &Tensor, kernel: &Tensor) -> Result<(Tensor, Tensor)> {
    let direct = direct_circular_conv(x, kernel)?;
    let fx = dft_1d(&ComplexTensor::from_real(x.clone()), 0)?;
    let fk = dft_1d(&ComplexTensor::from_real(kernel.clone()), 0)?;
    let product = fk.mul(&fx)?;
    let back = idft_1d(&product, 0)?;
    Ok((direct, back.re))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub kind: MixerKind,
    pub len: usize,
    pub dim: usize,
    pub median_ns: u128,
    pub flops: f64,
    pub repeats: usize,
    /// Set when fewer than three timed runs back the median.
    pub low_confidence: bool,
}

/// Parameters for one mixer applied to a pair of `L × d` inputs.
enum Prepared {
    Spectral(SpectralBlockParams),
    Attention(AttentionParams, AttentionParams),
    Mlp(SpatialMlpParams, SpatialMlpParams),
}

fn prepare(kind: MixerKind, len: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Prepared> {
    Ok(match kind {
        MixerKind::Spectral => {
            Prepared::Spectral(SpectralBlockParams::init(2, len, len, d, ChannelMap::Diagonal, rng)?)
        }
        MixerKind::SelfAttention => Prepared::Attention(AttentionParams::init(d, rng), AttentionParams::init(d, rng)),
        MixerKind::SpatialMlp => Prepared::Mlp(SpatialMlpParams::init(len, rng), SpatialMlpParams::init(len, rng)),
    })
}

/// Forward pass of one mixer over both modalities.
fn run_mixer(p: &Prepared, xt: &Tensor, xv: &Tensor) -> Result<f64> {
    let (ot, ov) = match p {
        Prepared::Spectral(params) => spectral_block_forward(params, xt, xv, SpectralStages::default())?,
        Prepared::Attention(pt, pv) => (
            mixers::self_attention_forward(pt, xt)?,
            mixers::self_attention_forward(pv, xv)?,
        ),
        Prepared::Mlp(pt, pv) => (mixers::spatial_mlp_forward(pt, xt)?, mixers::spatial_mlp_forward(pv, xv)?),
    };
    Ok(ot.data()[0] + ov.data()[0])
}

/// Median forward time of each mixer at each `(L, d)`, single-threaded,
/// after [`WARMUP_RUNS`] untimed runs. Within one size the mixers take turns
/// on every repeat, so slow drift in machine speed affects them alike.
pub fn bench(kinds: &[MixerKind], sizes: &[(usize, usize)], repeats: usize) -> Result<Vec<BenchRecord>> {
    let repeats = repeats.max(1);
    let mut records = Vec::new();
    for &(len, d) in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64((len * 31 + d) as u64);
        let xt = Tensor::uniform(&[len, d], -1.0, 1.0, &mut rng);
        let xv = Tensor::uniform(&[len, d], -1.0, 1.0, &mut rng);
        let prepared = kinds
            .iter()
            .map(|&kind| prepare(kind, len, d, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let times = parallel::sequential(|| -> Result<Vec<Vec<u128>>> {
            for p in &prepared {
                for _ in 0..WARMUP_RUNS {
                    black_box(run_mixer(p, &xt, &xv)?);
                }
            }
            let mut times = vec![Vec::with_capacity(repeats); prepared.len()];
            for _ in 0..repeats {
                for (p, t) in prepared.iter().zip(&mut times) {
                    let start = Instant::now();
                    black_box(run_mixer(p, black_box(&xt), &xv)?);
                    t.push(start.elapsed().as_nanos());
                }
            }
            Ok(times)
        })?;
        for (&kind, mut t) in kinds.iter().zip(times) {
            t.sort_unstable();
            let median_ns = t[t.len() / 2];
            log::info!("bench {kind} L={len} d={d}: {median_ns} ns");
            records.push(BenchRecord {
                kind,
                len,
                dim: d,
                median_ns,
                flops: flops(kind, len, d),
                repeats,
                low_confidence: repeats < 3,
            });
        }
    }
    Ok(records)
}

pub fn bench_csv(records: &[BenchRecord]) -> Csv {
    let mut csv = Csv::new(&["kind", "L", "d", "median_ns", "flops"]);
    for r in records {
        csv.row(&[&r.kind, &r.len, &r.dim, &r.median_ns, &r.flops]);
    }
    csv
}
