//! Reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

pub mod reference;

use std::f64::consts::{LN_2, PI};

use fsru::data::Sample;
use fsru::objectives::SupervisedPairing;
use fsru::{RunConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// `Σ_i x[i]·e^{∓j2πki/L}` along axis 0 of a `[L, d]` pair, `1/L` on the inverse.
pub fn naive_dft(re: &[f64], im: &[f64], len: usize, dim: usize, inverse: bool) -> (Vec<f64>, Vec<f64>) {
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = if inverse { 1.0 / len as f64 } else { 1.0 };
    let mut out_re = vec![0.0; len * dim];
    let mut out_im = vec![0.0; len * dim];
    for k in 0..len {
        for i in 0..len {
            let angle = sign * 2.0 * PI * ((k * i) % len) as f64 / len as f64;
            let (s, c) = angle.sin_cos();
            for ch in 0..dim {
                let (a, b) = (re[i * dim + ch], im[i * dim + ch]);
                out_re[k * dim + ch] += (a * c - b * s) * scale;
                out_im[k * dim + ch] += (a * s + b * c) * scale;
            }
        }
    }
    (out_re, out_im)
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Cosine similarity of two rows.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn row(t: &Tensor, r: usize) -> &[f64] {
    let cols = t.shape()[1];
    &t.data()[r * cols..(r + 1) * cols]
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// A configuration small enough for exhaustive finite differences:
/// `d = m = n = 8` (a 2×4 patch grid of 2×2 patches).
pub fn toy_config() -> RunConfig {
    RunConfig::default()
        .with_overrides(&[
            "d=8",
            "m=8",
            "grid_h=2",
            "grid_w=4",
            "patch_size=2",
            "vocab_size=16",
            "data.train_samples=8",
            "data.test_samples=4",
            "data.text_bands_rumor=[1]",
            "data.text_bands_nonrumor=[3]",
            "data.image_bands_rumor=[1]",
            "data.image_bands_nonrumor=[3]",
        ])
        .expect("toy overrides are valid")
}

/// Four toy samples, two per class.
pub fn toy_batch(cfg: &RunConfig) -> Vec<Sample> {
    let (train, _) = fsru::data::generate(cfg).expect("toy data");
    let mut rumors = train.samples.iter().filter(|s| s.label == 1).take(2);
    let mut others = train.samples.iter().filter(|s| s.label == 0).take(2);
    vec![
        rumors.next().unwrap().clone(),
        others.next().unwrap().clone(),
        rumors.next().unwrap().clone(),
        others.next().unwrap().clone(),
    ]
}

/// Per-modality double loop over anchors and admitted positives.
pub fn l_full_oracle(feats: &[&Tensor], labels: &[u8], tau: f64, pairing: SupervisedPairing) -> f64 {
    let b = labels.len();
    let size = |c: u8| labels.iter().filter(|&&l| l == c).count() as f64;
    let mut total = 0.0;
    for z in feats {
        for a in 0..b {
            let denom: f64 = (0..b)
                .filter(|&q| q != a)
                .map(|q| (cosine(row(z, a), row(z, q)) / tau).exp())
                .sum();
            let wanted = match (labels[a], pairing) {
                (1, _) | (_, SupervisedPairing::Literal) => 1,
                _ => 0,
            };
            for p in (0..b).filter(|&p| p != a && labels[p] == wanted) {
                let num = (cosine(row(z, a), row(z, p)) / tau).exp();
                total += -(num / denom).ln() / size(labels[a]);
            }
        }
    }
    total
}

/// Both InfoNCE directions, `1/(2B)` overall.
pub fn l_self_oracle(text: &Tensor, image: &Tensor, tau: f64) -> f64 {
    let b = text.shape()[0];
    let mut total = 0.0;
    for i in 0..b {
        for (x, y) in [(text, image), (image, text)] {
            let denom: f64 = (0..b).map(|j| (cosine(row(x, i), row(y, j)) / tau).exp()).sum();
            let num = (cosine(row(x, i), row(y, i)) / tau).exp();
            total -= (num / denom).ln();
        }
    }
    total / (2 * b) as f64
}

/// `JS(softmax(a) ‖ softmax(b)) / ln 2` by direct summation.
pub fn js_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (p, q) = (softmax(a), softmax(b));
    let kl = |x: &[f64], m: &[f64]| -> f64 {
        x.iter().zip(m).filter(|(v, _)| **v > 0.0).map(|(v, w)| v * (v / w).ln()).sum()
    };
    let mid: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
    (0.5 * kl(&p, &mid) + 0.5 * kl(&q, &mid)) / LN_2
}

