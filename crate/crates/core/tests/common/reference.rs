//! A scalar reference forward pass of the spectral model, generic over the
//! number type so that finite differences can be taken in double-double.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::ops::{Add, Div, Mul, Neg, Sub};

use fsru::config::{MixerKind, RunConfig};
use fsru::data::Sample;
use fsru::embedding::position_code;
use fsru::objectives::SupervisedPairing;
use fsru::params::Parameters;
use fsru::spectral::cosine_weights;
use fsru::FsruModel;
use qd::Quad;

pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn c(x: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    fn c(x: f64) -> Self {
        x
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for Quad {
    fn c(x: f64) -> Self {
        Quad::from_f64(x)
    }
    fn exp(self) -> Self {
        Quad::exp(self)
    }
    fn ln(self) -> Self {
        Quad::ln(self)
    }
    fn sqrt(self) -> Self {
        Quad::sqrt(self)
    }
    fn to_f64(self) -> f64 {
        self.0 + self.1
    }
}

fn max<R: Real>(a: R, b: R) -> R {
    if a > b {
        a
    } else {
        b
    }
}

/// Row-major matrix of `rows × cols`.
#[derive(Clone)]
struct Mat<R> {
    rows: usize,
    cols: usize,
    v: Vec<R>,
}

impl<R: Real> Mat<R> {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, v: vec![R::c(0.0); rows * cols] }
    }
    fn at(&self, r: usize, c: usize) -> R {
        self.v[r * self.cols + c]
    }
    fn set(&mut self, r: usize, c: usize, x: R) {
        self.v[r * self.cols + c] = x;
    }
    fn matmul(&self, w: &Mat<R>) -> Mat<R> {
        let mut out = Mat::zeros(self.rows, w.cols);
        for i in 0..self.rows {
            for j in 0..w.cols {
                let mut acc = R::c(0.0);
                for p in 0..self.cols {
                    acc = acc + self.at(i, p) * w.at(p, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

/// The parameters of a spectral model, by name, in the chosen number type.
pub struct RefParams<R> {
    tensors: HashMap<String, (Vec<usize>, Vec<R>)>,
}

impl<R: Real> RefParams<R> {
    pub fn from_model(model: &FsruModel) -> Self {
        let tensors = model
            .named()
            .into_iter()
            .map(|(name, t)| (name, (t.shape().to_vec(), t.data().iter().map(|&x| R::c(x)).collect())))
            .collect();
        Self { tensors }
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Vec<R> {
        &mut self.tensors.get_mut(name).expect("known parameter").1
    }

    fn mat(&self, name: &str) -> Mat<R> {
        let (shape, v) = &self.tensors[name];
        let cols = *shape.last().unwrap();
        Mat { rows: v.len() / cols, cols, v: v.clone() }
    }

    fn raw(&self, name: &str) -> &[R] {
        &self.tensors[name].1
    }
}

fn embed_text<R: Real>(p: &RefParams<R>, ids: &[usize], m: usize) -> Mat<R> {
    let table = p.mat("embed.word_table");
    let d = table.cols;
    let pe = position_code(m, d);
    let mut out = Mat::zeros(m, d);
    for (i, &id) in ids.iter().enumerate() {
        for c in 0..d {
            out.set(i, c, table.at(id, c) + R::c(pe.at(&[i, c])));
        }
    }
    out
}

fn embed_image<R: Real>(p: &RefParams<R>, sample: &Sample) -> Mat<R> {
    let proj = p.mat("embed.patch_proj");
    let n = sample.image.num_patches();
    let pixels = Mat {
        rows: n,
        cols: proj.rows,
        v: sample.image.pixels.iter().map(|&x| R::c(x)).collect(),
    };
    let x = pixels.matmul(&proj);
    let (prev, center, next) = (p.mat("embed.conv_prev"), p.mat("embed.conv_center"), p.mat("embed.conv_next"));
    let bias = p.mat("embed.conv_bias");
    let d = x.cols;
    let mut out = Mat::zeros(n, d);
    for i in 0..n {
        for e in 0..d {
            let mut acc = bias.at(0, e);
            for f in 0..d {
                acc = acc
                    + x.at((i + n - 1) % n, f) * prev.at(f, e)
                    + x.at(i, f) * center.at(f, e)
                    + x.at((i + 1) % n, f) * next.at(f, e);
            }
            out.set(i, e, max(acc, R::c(0.0)));
        }
    }
    out
}

/// `|DFT(x)|²/L` per bin and channel, with twiddles from f64 constants.
fn power<R: Real>(x: &Mat<R>) -> Mat<R> {
    let (len, d) = (x.rows, x.cols);
    let mut out = Mat::zeros(len, d);
    for k in 0..len {
        for c in 0..d {
            let (mut re, mut im) = (R::c(0.0), R::c(0.0));
            for i in 0..len {
                let angle = 2.0 * PI * ((k * i) % len) as f64 / len as f64;
                re = re + x.at(i, c) * R::c(angle.cos());
                im = im - x.at(i, c) * R::c(angle.sin());
            }
            out.set(k, c, (re * re + im * im) / R::c(len as f64));
        }
    }
    out
}

fn compress<R: Real>(power: &Mat<R>, bank: &[R]) -> Mat<R> {
    let per = power.rows * power.cols;
    let k = bank.len() / per;
    let w = cosine_weights(k);
    let mut out = power.clone();
    for j in 0..per {
        let mut comb = R::c(0.0);
        for (i, wi) in w.iter().enumerate() {
            comb = comb + bank[i * per + j] * R::c(*wi);
        }
        out.v[j] = power.v[j] * comb;
    }
    out
}

/// Filter for one modality from the other's compressed spectrum.
fn gate<R: Real>(source: &Mat<R>, select: &Mat<R>, weight: &Mat<R>, bias: &Mat<R>) -> Vec<R> {
    let d = source.cols;
    let pooled: Vec<R> = (0..d)
        .map(|c| {
            let mut acc = R::c(0.0);
            for i in 0..source.rows {
                acc = acc + source.at(i, c) * select.at(i, c);
            }
            acc / R::c(source.rows as f64)
        })
        .collect();
    (0..d)
        .map(|c| {
            let lin = if weight.rows == 1 {
                pooled[c] * weight.at(0, c)
            } else {
                let mut acc = R::c(0.0);
                for e in 0..d {
                    acc = acc + pooled[e] * weight.at(e, c);
                }
                acc
            };
            lin + bias.at(0, c)
        })
        .collect()
}

/// Token mean of `Re IDFT` of a real spectrum.
fn pooled_inverse<R: Real>(s: &Mat<R>) -> Vec<R> {
    let (len, d) = (s.rows, s.cols);
    (0..d)
        .map(|c| {
            let mut total = R::c(0.0);
            for i in 0..len {
                let mut re = R::c(0.0);
                for k in 0..len {
                    let angle = 2.0 * PI * ((k * i) % len) as f64 / len as f64;
                    re = re + s.at(k, c) * R::c(angle.cos());
                }
                total = total + re / R::c(len as f64);
            }
            total / R::c(len as f64)
        })
        .collect()
}

fn softmax<R: Real>(v: &[R]) -> Vec<R> {
    let m = v.iter().copied().fold(v[0], max);
    let e: Vec<R> = v.iter().map(|&x| (x - m).exp()).collect();
    let s = e.iter().copied().fold(R::c(0.0), |a, b| a + b);
    e.into_iter().map(|x| x / s).collect()
}

fn js_gamma<R: Real>(a: &[R], b: &[R]) -> R {
    let (p, q) = (softmax(a), softmax(b));
    let mut total = R::c(0.0);
    for (&x, &y) in p.iter().zip(&q) {
        let mid = (x + y) * R::c(0.5);
        total = total + R::c(0.5) * (x * (x / mid).ln() + y * (y / mid).ln());
    }
    let g = total / R::c(LN_2);
    if g < R::c(0.0) {
        R::c(0.0)
    } else if g > R::c(1.0) {
        R::c(1.0)
    } else {
        g
    }
}

fn cosine<R: Real>(a: &[R], b: &[R]) -> R {
    let norm = |v: &[R]| max(v.iter().fold(R::c(0.0), |s, &x| s + x * x).sqrt(), R::c(1e-12));
    let dot = a.iter().zip(b).fold(R::c(0.0), |s, (&x, &y)| s + x * y);
    dot / (norm(a) * norm(b))
}

/// `−log(e^{s_p} / Σ_{q∈denominator} e^{s_q})`.
fn nll<R: Real>(sims: &[R], positive: usize, denominator: &[usize]) -> R {
    let m = denominator.iter().map(|&q| sims[q]).fold(sims[denominator[0]], max);
    let total = denominator.iter().fold(R::c(0.0), |s, &q| s + (sims[q] - m).exp());
    (total.ln() + m) - sims[positive]
}

fn supervised<R: Real>(z: &[Vec<R>], labels: &[u8], tau: f64, pairing: SupervisedPairing) -> R {
    let b = labels.len();
    let size = |c: u8| labels.iter().filter(|&&l| l == c).count() as f64;
    let mut total = R::c(0.0);
    for a in 0..b {
        let sims: Vec<R> = (0..b).map(|q| cosine(&z[a], &z[q]) / R::c(tau)).collect();
        let others: Vec<usize> = (0..b).filter(|&q| q != a).collect();
        let wanted = match (labels[a], pairing) {
            (1, _) | (_, SupervisedPairing::Literal) => 1,
            _ => 0,
        };
        for p in others.iter().copied().filter(|&p| labels[p] == wanted) {
            total = total + nll(&sims, p, &others) / R::c(size(labels[a]));
        }
    }
    total
}

fn inter_modal<R: Real>(t: &[Vec<R>], v: &[Vec<R>], tau: f64) -> R {
    let b = t.len();
    let all: Vec<usize> = (0..b).collect();
    let mut total = R::c(0.0);
    for i in 0..b {
        for (x, y) in [(t, v), (v, t)] {
            let sims: Vec<R> = (0..b).map(|j| cosine(&x[i], &y[j]) / R::c(tau)).collect();
            total = total + nll(&sims, i, &all);
        }
    }
    total / R::c((2 * b) as f64)
}

/// Spectral block followed by token-mean pooling.
fn spectral<R: Real>(cfg: &RunConfig, p: &RefParams<R>, xt: &Mat<R>, xv: &Mat<R>) -> (Vec<R>, Vec<R>) {
    let stages = cfg.ablation.stages();
    let (mut st, mut sv) = (power(xt), power(xv));
    if stages.compress {
        st = compress(&st, p.raw("spectral.bank_text"));
        sv = compress(&sv, p.raw("spectral.bank_image"));
    }
    if stages.co_select {
        let to_t = gate(&sv, &p.mat("spectral.select_image"), &p.mat("spectral.to_text_weight"), &p.mat("spectral.to_text_bias"));
        let to_v = gate(&st, &p.mat("spectral.select_text"), &p.mat("spectral.to_image_weight"), &p.mat("spectral.to_image_bias"));
        for j in 0..st.v.len() {
            st.v[j] = st.v[j] * to_t[j % st.cols];
        }
        for j in 0..sv.v.len() {
            sv.v[j] = sv.v[j] * to_v[j % sv.cols];
        }
    }
    (pooled_inverse(&st), pooled_inverse(&sv))
}

fn token_mean<R: Real>(x: &Mat<R>) -> Vec<R> {
    (0..x.cols)
        .map(|c| (0..x.rows).fold(R::c(0.0), |s, r| s + x.at(r, c)) / R::c(x.rows as f64))
        .collect()
}

/// Single-head attention with scores `softmax(QKᵀ/√d)`.
fn attention<R: Real>(p: &RefParams<R>, prefix: &str, x: &Mat<R>) -> Mat<R> {
    let q = x.matmul(&p.mat(&format!("{prefix}.query")));
    let k = x.matmul(&p.mat(&format!("{prefix}.key")));
    let v = x.matmul(&p.mat(&format!("{prefix}.value")));
    let scale = R::c(1.0 / (x.cols as f64).sqrt());
    let mut scores = Mat::zeros(x.rows, x.rows);
    for i in 0..x.rows {
        let raw: Vec<R> = (0..x.rows)
            .map(|j| (0..x.cols).fold(R::c(0.0), |s, c| s + q.at(i, c) * k.at(j, c)) * scale)
            .collect();
        for (j, w) in softmax(&raw).into_iter().enumerate() {
            scores.set(i, j, w);
        }
    }
    scores.matmul(&v)
}

/// `out[i] = Σ_j M[j, i]·x[j]`.
fn spatial_mlp<R: Real>(mixing: &Mat<R>, x: &Mat<R>) -> Mat<R> {
    let mut out = Mat::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        for c in 0..x.cols {
            let acc = (0..x.rows).fold(R::c(0.0), |s, j| s + mixing.at(j, i) * x.at(j, c));
            out.set(i, c, acc);
        }
    }
    out
}

/// The total objective of a model with parameters `p`.
pub fn loss<R: Real>(model: &FsruModel, p: &RefParams<R>, samples: &[&Sample]) -> R {
    let cfg = &model.config;
    let b = samples.len();
    let mut pooled_t = Vec::with_capacity(b);
    let mut pooled_v = Vec::with_capacity(b);
    for s in samples {
        let xt = embed_text(p, &s.text.token_ids, cfg.m);
        let xv = embed_image(p, s);
        let (t, v) = match cfg.mixer {
            MixerKind::Spectral => spectral(cfg, p, &xt, &xv),
            MixerKind::SelfAttention => (
                token_mean(&attention(p, "attention.text", &xt)),
                token_mean(&attention(p, "attention.image", &xv)),
            ),
            MixerKind::SpatialMlp => (
                token_mean(&spatial_mlp(&p.mat("spatial_mlp.text"), &xt)),
                token_mean(&spatial_mlp(&p.mat("spatial_mlp.image"), &xv)),
            ),
        };
        pooled_t.push(t);
        pooled_v.push(v);
    }
    let (wt, wv) = (p.mat("head.fuse_text"), p.mat("head.fuse_image"));
    let (cls_w, cls_b) = (p.mat("head.classifier"), p.mat("head.classifier_bias"));
    let d = wt.rows;
    let mut ce = R::c(0.0);
    for i in 0..b {
        let gamma = if cfg.ablation.dsf { js_gamma(&pooled_t[i], &pooled_v[i]) } else { R::c(0.5) };
        let fused: Vec<R> = (0..d)
            .map(|c| {
                let mut mixed = R::c(0.0);
                for e in 0..d {
                    mixed = mixed + pooled_t[i][e] * wt.at(e, c) + pooled_v[i][e] * wv.at(e, c);
                }
                mixed + gamma * (pooled_t[i][c] + pooled_v[i][c] - mixed)
            })
            .collect();
        let logits: Vec<R> = (0..2)
            .map(|k| (0..d).fold(cls_b.at(0, k), |s, e| s + fused[e] * cls_w.at(e, k)))
            .collect();
        ce = ce + nll(&logits, usize::from(samples[i].label), &[0, 1]);
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let mut total = ce / R::c(b as f64);
    let (alpha, beta) = cfg.loss_weights();
    if alpha > 0.0 {
        let full = supervised(&pooled_t, &labels, cfg.tau, cfg.pairing) + supervised(&pooled_v, &labels, cfg.tau, cfg.pairing);
        total = total + R::c(alpha) * full;
    }
    if beta > 0.0 {
        total = total + R::c(beta) * inter_modal(&pooled_t, &pooled_v, cfg.tau);
    }
    total
}

/// Central difference of [`loss`] in double-double for one parameter component.
pub fn numeric_derivative(
    model: &FsruModel,
    params: &mut RefParams<Quad>,
    name: &str,
    index: usize,
    step: f64,
    samples: &[&Sample],
) -> f64 {
    let orig = params.get_mut(name)[index];
    params.get_mut(name)[index] = orig + Quad::from_f64(step);
    let up = loss(model, params, samples);
    params.get_mut(name)[index] = orig - Quad::from_f64(step);
    let down = loss(model, params, samples);
    params.get_mut(name)[index] = orig;
    ((up - down) / Quad::from_f64(2.0 * step)).to_f64()
}

/// Runs the full parameter check of any mixer with the double-double numeric side.
pub fn check_model_extended(model: &FsruModel, samples: &[&Sample]) -> fsru::gradcheck::GradReport {
    let names: Vec<String> = model.named().into_iter().map(|(n, _)| n).collect();
    let mut params = RefParams::<Quad>::from_model(model);
    fsru::gradcheck::check_model_with(model, samples, |p, i| {
        Ok(numeric_derivative(model, &mut params, &names[p], i, fsru::gradcheck::STEP, samples))
    })
    .expect("model gradients")
}
