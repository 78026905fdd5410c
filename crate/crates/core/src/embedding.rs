//! Text and image embeddings.
//!
//! Text rows are `table[id] + PE(pos)` with a fixed sinusoidal position code;
//! padded positions are all-zero rows. Image rows are a linear patch
//! projection followed by a width-3 circular convolution along the patch
//! sequence and a ReLU.

use rand::Rng;

use crate::error::{FsruError, Result};
use crate::graph::{Graph, Var};
use crate::params::{scaled_uniform, Parameters};
use crate::tensor::Tensor;

/// A token-id sequence. Positions at or beyond `token_ids.len()` are padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextSample {
    pub token_ids: Vec<usize>,
}

impl TextSample {
    pub fn new(token_ids: Vec<usize>) -> Self {
        Self { token_ids }
    }

    /// `true` for real tokens, `false` for padding, over `max_len` positions.
    pub fn mask(&self, max_len: usize) -> Vec<bool> {
        (0..max_len).map(|i| i < self.token_ids.len()).collect()
    }
}

/// An image already cut into an `h×w` grid of `p×p` patches.
///
/// `pixels` holds `h·w` patches in row-major grid order, each `p²` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_size: usize,
    pub pixels: Vec<f64>,
}

impl ImageSample {
    pub fn new(grid_h: usize, grid_w: usize, patch_size: usize, pixels: Vec<f64>) -> Result<Self> {
        let expected = grid_h * grid_w * patch_size * patch_size;
        if pixels.len() != expected {
            return Err(FsruError::Shape(format!(
                "{grid_h}x{grid_w} grid of {patch_size}x{patch_size} patches needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FsruError::Shape(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            grid_h,
            grid_w,
            patch_size,
            pixels,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

/// Sinusoidal position code: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn position_code(len: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[len, dim], |flat| {
        let (pos, c) = (flat / dim, flat % dim);
        let pair = (c / 2) as f64 * 2.0;
        let angle = pos as f64 / 10000f64.powf(pair / dim as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Clone, Debug)]
pub struct EmbeddingParams {
    /// `vocab × d` word table.
    pub word_table: Tensor,
    /// `p² × d` patch projection.
    pub patch_proj: Tensor,
    /// Convolution taps for the previous, current and next patch, each `d × d`.
    pub conv_prev: Tensor,
    pub conv_center: Tensor,
    pub conv_next: Tensor,
    /// `1 × d`.
    pub conv_bias: Tensor,
}

pub struct EmbeddingVars {
    pub word_table: Var,
    pub patch_proj: Var,
    pub conv_prev: Var,
    pub conv_center: Var,
    pub conv_next: Var,
    pub conv_bias: Var,
}

impl EmbeddingParams {
    /// Every table and kernel drawn from `uniform(−1/√d, 1/√d)`; zero bias.
    pub fn init<R: Rng + ?Sized>(vocab: usize, patch_len: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            word_table: scaled_uniform(&[vocab, dim], dim, rng),
            patch_proj: scaled_uniform(&[patch_len, dim], dim, rng),
            conv_prev: scaled_uniform(&[dim, dim], dim, rng),
            conv_center: scaled_uniform(&[dim, dim], dim, rng),
            conv_next: scaled_uniform(&[dim, dim], dim, rng),
            conv_bias: Tensor::zeros(&[1, dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.word_table.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.word_table.shape()[0]
    }
}

impl Parameters for EmbeddingParams {
    type Vars = EmbeddingVars;

    fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("embed.word_table".into(), &self.word_table),
            ("embed.patch_proj".into(), &self.patch_proj),
            ("embed.conv_prev".into(), &self.conv_prev),
            ("embed.conv_center".into(), &self.conv_center),
            ("embed.conv_next".into(), &self.conv_next),
            ("embed.conv_bias".into(), &self.conv_bias),
        ]
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("embed.word_table".into(), &mut self.word_table),
            ("embed.patch_proj".into(), &mut self.patch_proj),
            ("embed.conv_prev".into(), &mut self.conv_prev),
            ("embed.conv_center".into(), &mut self.conv_center),
            ("embed.conv_next".into(), &mut self.conv_next),
            ("embed.conv_bias".into(), &mut self.conv_bias),
        ]
    }

    fn bind(&self, g: &mut Graph) -> EmbeddingVars {
        EmbeddingVars {
            word_table: g.leaf(self.word_table.clone()),
            patch_proj: g.leaf(self.patch_proj.clone()),
            conv_prev: g.leaf(self.conv_prev.clone()),
            conv_center: g.leaf(self.conv_center.clone()),
            conv_next: g.leaf(self.conv_next.clone()),
            conv_bias: g.leaf(self.conv_bias.clone()),
        }
    }

    fn leaves(v: &EmbeddingVars) -> Vec<Var> {
        vec![
            v.word_table,
            v.patch_proj,
            v.conv_prev,
            v.conv_center,
            v.conv_next,
            v.conv_bias,
        ]
    }
}

/// Embeds a batch of texts as a `[B, m, d]` node.
pub fn embed_text_batch(
    g: &mut Graph,
    vars: &EmbeddingVars,
    samples: &[&TextSample],
    max_len: usize,
) -> Result<Var> {
    let dim = g.shape(vars.word_table)[1];
    let pe = position_code(max_len, dim);
    let batch = samples.len();
    let mut ids = Vec::with_capacity(batch * max_len);
    let mut positions = Tensor::zeros(&[batch, max_len, dim]);
    for (b, sample) in samples.iter().enumerate() {
        if sample.token_ids.len() > max_len {
            return Err(FsruError::Shape(format!(
                "text of {} tokens exceeds the maximum length {max_len}",
                sample.token_ids.len()
            )));
        }
        for pos in 0..max_len {
            let id = sample.token_ids.get(pos).copied();
            ids.push(id);
            if id.is_some() {
                let dst = (b * max_len + pos) * dim;
                positions.data_mut()[dst..dst + dim]
                    .copy_from_slice(&pe.data()[pos * dim..(pos + 1) * dim]);
            }
        }
    }
    let words = g.gather(vars.word_table, ids, &[batch, max_len, dim])?;
    let positions = g.constant(positions);
    g.add(words, positions)
}

/// Embeds a batch of images as a `[B, n, d]` node.
pub fn embed_image_batch(g: &mut Graph, vars: &EmbeddingVars, samples: &[&ImageSample]) -> Result<Var> {
    let patch_len = g.shape(vars.patch_proj)[0];
    let Some(first) = samples.first() else {
        return Err(FsruError::Shape("empty image batch".into()));
    };
    let n = first.num_patches();
    let mut pixels = Vec::with_capacity(samples.len() * n * patch_len);
    for s in samples {
        if s.patch_len() != patch_len || s.num_patches() != n {
            return Err(FsruError::Shape(format!(
                "image with {} patches of {} pixels, expected {n} of {patch_len}",
                s.num_patches(),
                s.patch_len()
            )));
        }
        pixels.extend_from_slice(&s.pixels);
    }
    let pixels = g.constant(Tensor::new(&[samples.len(), n, patch_len], pixels)?);
    let projected = g.matmul(pixels, vars.patch_proj)?;
    circular_conv3(g, vars, projected)
}

/// `y[i] = relu(x[i−1]·W_prev + x[i]·W_center + x[i+1]·W_next + b)`, indices mod n.
fn circular_conv3(g: &mut Graph, vars: &EmbeddingVars, x: Var) -> Result<Var> {
    let axis = g.shape(x).len() - 2;
    let prev = g.roll(x, 1, axis)?;
    let next = g.roll(x, -1, axis)?;
    let a = g.matmul(prev, vars.conv_prev)?;
    let b = g.matmul(x, vars.conv_center)?;
    let c = g.matmul(next, vars.conv_next)?;
    let ab = g.add(a, b)?;
    let abc = g.add(ab, c)?;
    let bias = if g.shape(x).len() == 3 {
        let d = g.shape(vars.conv_bias)[1];
        g.reshape(vars.conv_bias, &[1, 1, d])?
    } else {
        vars.conv_bias
    };
    let pre = g.add(abc, bias)?;
    Ok(g.relu(pre))
}

/// Single-sample text embedding, `m × d`.
pub fn embed_text(sample: &TextSample, params: &EmbeddingParams, max_len: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let out = embed_text_batch(&mut g, &vars, &[sample], max_len)?;
    let d = params.dim();
    g.value(out).clone().reshape(&[max_len, d])
}

/// Single-sample image embedding, `n × d`.
pub fn embed_image(sample: &ImageSample, params: &EmbeddingParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let out = embed_image_batch(&mut g, &vars, &[sample])?;
    g.value(out).clone().reshape(&[sample.num_patches(), params.dim()])
}
