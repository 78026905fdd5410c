//! Alternative token mixers that can stand in for the spectral block:
//! single-head self-attention and a spatial (token-mixing) MLP.

use rand::Rng;

use crate::error::{FsruError, Result};
use crate::graph::{softmax_rows, Graph, Var};
use crate::kernels;
use crate::params::{scaled_uniform, Parameters};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

pub struct AttentionVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            query: scaled_uniform(&[dim, dim], dim, rng),
            key: scaled_uniform(&[dim, dim], dim, rng),
            value: scaled_uniform(&[dim, dim], dim, rng),
        }
    }

    fn prefixed(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.query"), &self.query),
            (format!("{prefix}.key"), &self.key),
            (format!("{prefix}.value"), &self.value),
        ]
    }

    fn prefixed_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.query"), &mut self.query),
            (format!("{prefix}.key"), &mut self.key),
            (format!("{prefix}.value"), &mut self.value),
        ]
    }

    pub fn bind(&self, g: &mut Graph) -> AttentionVars {
        AttentionVars {
            query: g.leaf(self.query.clone()),
            key: g.leaf(self.key.clone()),
            value: g.leaf(self.value.clone()),
        }
    }
}

/// Attention score matrix `softmax(XW_q(XW_k)ᵀ/√d)` for `[L, d]` or `[B, L, d]`.
pub fn attention_scores(g: &mut Graph, x: Var, vars: &AttentionVars) -> Result<Var> {
    let dim = *g.shape(x).last().expect("non-scalar input") as f64;
    let q = g.matmul(x, vars.query)?;
    let k = g.matmul(x, vars.key)?;
    let kt = g.transpose(k)?;
    let raw = if g.shape(x).len() == 3 {
        g.batch_matmul(q, kt)?
    } else {
        g.matmul(q, kt)?
    };
    let scaled = g.scale(raw, 1.0 / dim.sqrt());
    Ok(g.softmax(scaled))
}

/// Single-head self-attention `softmax(XW_q(XW_k)ᵀ/√d)·XW_v`.
pub fn self_attention(g: &mut Graph, x: Var, vars: &AttentionVars) -> Result<Var> {
    let scores = attention_scores(g, x, vars)?;
    let v = g.matmul(x, vars.value)?;
    if g.shape(x).len() == 3 {
        g.batch_matmul(scores, v)
    } else {
        g.matmul(scores, v)
    }
}

/// Token-mixing matrix applied along the sequence: `out[i] = Σ_j M[j, i]·x[j]`.
#[derive(Clone, Debug)]
pub struct SpatialMlpParams {
    pub mixing: Tensor,
}

impl SpatialMlpParams {
    /// Identity plus `uniform(±1/√L)`.
    pub fn init<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut mixing = scaled_uniform(&[len, len], len, rng);
        for i in 0..len {
            mixing.data_mut()[i * len + i] += 1.0;
        }
        Self { mixing }
    }
}

pub fn spatial_mlp(g: &mut Graph, x: Var, mixing: Var) -> Result<Var> {
    let xt = g.transpose(x)?;
    let mixed = g.matmul(xt, mixing)?;
    g.transpose(mixed)
}

/// [`self_attention`] on an `[L, d]` or `[B, L, d]` tensor, without a graph.
pub fn self_attention_forward(p: &AttentionParams, x: &Tensor) -> Result<Tensor> {
    let (len, dim) = token_dims(x, p.query.shape()[0])?;
    let scale = 1.0 / (dim as f64).sqrt();
    let mut out = Vec::with_capacity(x.len());
    for sample in x.data().chunks(len * dim) {
        let q = kernels::matmul(sample, p.query.data(), len, dim, dim);
        let k = kernels::matmul(sample, p.key.data(), len, dim, dim);
        let v = kernels::matmul(sample, p.value.data(), len, dim, dim);
        let kt = kernels::transpose(&k, len, dim);
        let raw = kernels::matmul(&q, &kt, len, dim, len);
        let scores = softmax_rows(&Tensor::new(&[len, len], raw)?.map(|s| s * scale));
        out.extend(kernels::matmul(scores.data(), &v, len, len, dim));
    }
    Tensor::new(x.shape(), out)
}

/// [`spatial_mlp`] on an `[L, d]` or `[B, L, d]` tensor, without a graph.
pub fn spatial_mlp_forward(p: &SpatialMlpParams, x: &Tensor) -> Result<Tensor> {
    let len = p.mixing.shape()[0];
    let dim = *x.shape().last().unwrap_or(&0);
    token_dims(x, dim)?;
    if x.shape()[x.rank() - 2] != len {
        return Err(FsruError::Shape(format!("input {:?} for a {len}-token mixer", x.shape())));
    }
    let mut out = Vec::with_capacity(x.len());
    for sample in x.data().chunks(len * dim) {
        out.extend(kernels::matmul_tn(p.mixing.data(), sample, len, len, dim));
    }
    Tensor::new(x.shape(), out)
}

fn token_dims(x: &Tensor, dim: usize) -> Result<(usize, usize)> {
    let shape = x.shape();
    if shape.len() < 2 || shape[shape.len() - 1] != dim {
        return Err(FsruError::Shape(format!("input {shape:?} for width {dim}")));
    }
    Ok((shape[shape.len() - 2], dim))
}

/// Mixer parameters for both modalities.
#[derive(Clone, Debug)]
pub enum MixerParams {
    Spectral(crate::spectral::SpectralBlockParams),
    SelfAttention {
        text: AttentionParams,
        image: AttentionParams,
    },
    SpatialMlp {
        text: SpatialMlpParams,
        image: SpatialMlpParams,
    },
}

pub enum MixerVars {
    Spectral(crate::spectral::SpectralVars),
    SelfAttention {
        text: AttentionVars,
        image: AttentionVars,
    },
    SpatialMlp {
        text: Var,
        image: Var,
    },
}

impl Parameters for MixerParams {
    type Vars = MixerVars;

    fn named(&self) -> Vec<(String, &Tensor)> {
        match self {
            MixerParams::Spectral(p) => p.named(),
            MixerParams::SelfAttention { text, image } => {
                let mut v = text.prefixed("attention.text");
                v.extend(image.prefixed("attention.image"));
                v
            }
            MixerParams::SpatialMlp { text, image } => vec![
                ("spatial_mlp.text".into(), &text.mixing),
                ("spatial_mlp.image".into(), &image.mixing),
            ],
        }
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            MixerParams::Spectral(p) => p.named_mut(),
            MixerParams::SelfAttention { text, image } => {
                let mut v = text.prefixed_mut("attention.text");
                v.extend(image.prefixed_mut("attention.image"));
                v
            }
            MixerParams::SpatialMlp { text, image } => vec![
                ("spatial_mlp.text".into(), &mut text.mixing),
                ("spatial_mlp.image".into(), &mut image.mixing),
            ],
        }
    }

    fn bind(&self, g: &mut Graph) -> MixerVars {
        match self {
            MixerParams::Spectral(p) => MixerVars::Spectral(p.bind(g)),
            MixerParams::SelfAttention { text, image } => MixerVars::SelfAttention {
                text: text.bind(g),
                image: image.bind(g),
            },
            MixerParams::SpatialMlp { text, image } => MixerVars::SpatialMlp {
                text: g.leaf(text.mixing.clone()),
                image: g.leaf(image.mixing.clone()),
            },
        }
    }

    fn leaves(vars: &MixerVars) -> Vec<Var> {
        match vars {
            MixerVars::Spectral(v) => crate::spectral::SpectralBlockParams::leaves(v),
            MixerVars::SelfAttention { text, image } => vec![
                text.query,
                text.key,
                text.value,
                image.query,
                image.key,
                image.value,
            ],
            MixerVars::SpatialMlp { text, image } => vec![*text, *image],
        }
    }
}
