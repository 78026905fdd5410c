//! The assembled classifier: embeddings, a token mixer, pooling, fusion and head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{MixerKind, RunConfig};
use crate::embedding::{embed_image_batch, embed_text_batch, EmbeddingParams, EmbeddingVars, ImageSample, TextSample};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::mixers::{self, AttentionParams, MixerParams, MixerVars, SpatialMlpParams};
use crate::objectives::{self, HeadParams, HeadVars, Objective};
use crate::params::Parameters;
use crate::spectral::{spectral_block, SpectralBlockParams, SpectralTrace};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FsruModel {
    pub config: RunConfig,
    pub embedding: EmbeddingParams,
    pub mixer: MixerParams,
    pub head: HeadParams,
}

pub struct ModelVars {
    pub embedding: EmbeddingVars,
    pub mixer: MixerVars,
    pub head: HeadVars,
}

/// Nodes produced by one forward pass over a batch.
pub struct Forward {
    pub text_tokens: Var,
    pub image_tokens: Var,
    pub pooled_text: Var,
    pub pooled_image: Var,
    pub gamma: Var,
    pub fused: Var,
    pub logits: Var,
    /// Present for the spectral mixer.
    pub trace: Option<SpectralTrace>,
}

impl FsruModel {
    /// Initialises every parameter from `config.seed`.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d;
        let embedding = EmbeddingParams::init(config.vocab_size, config.patch_len(), d, &mut rng);
        let mixer = match config.mixer {
            MixerKind::Spectral => MixerParams::Spectral(SpectralBlockParams::init(
                config.filters,
                config.m,
                config.n(),
                d,
                config.channel_map,
                &mut rng,
            )?),
            MixerKind::SelfAttention => MixerParams::SelfAttention {
                text: AttentionParams::init(d, &mut rng),
                image: AttentionParams::init(d, &mut rng),
            },
            MixerKind::SpatialMlp => MixerParams::SpatialMlp {
                text: SpatialMlpParams::init(config.m, &mut rng),
                image: SpatialMlpParams::init(config.n(), &mut rng),
            },
        };
        let head = HeadParams::init(d, &mut rng);
        Ok(Self {
            config: config.clone(),
            embedding,
            mixer,
            head,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        texts: &[&TextSample],
        images: &[&ImageSample],
    ) -> Result<Forward> {
        let xt = embed_text_batch(g, &vars.embedding, texts, self.config.m)?;
        let xv = embed_image_batch(g, &vars.embedding, images)?;
        let (text_tokens, image_tokens, trace) = match &vars.mixer {
            MixerVars::Spectral(sv) => {
                let trace = spectral_block(g, xt, xv, sv, self.config.ablation.stages())?;
                (trace.out_text, trace.out_image, Some(trace))
            }
            MixerVars::SelfAttention { text, image } => (
                mixers::self_attention(g, xt, text)?,
                mixers::self_attention(g, xv, image)?,
                None,
            ),
            MixerVars::SpatialMlp { text, image } => (
                mixers::spatial_mlp(g, xt, *text)?,
                mixers::spatial_mlp(g, xv, *image)?,
                None,
            ),
        };
        let pooled_text = pool(g, text_tokens)?;
        let pooled_image = pool(g, image_tokens)?;
        let gamma = if self.config.ablation.dsf {
            objectives::gamma(g, pooled_text, pooled_image)?
        } else {
            g.constant(Tensor::full(&[texts.len(), 1], 0.5))
        };
        let fused = objectives::fuse(g, pooled_text, pooled_image, gamma, &vars.head)?;
        let logits = objectives::logits(g, fused, &vars.head)?;
        Ok(Forward {
            text_tokens,
            image_tokens,
            pooled_text,
            pooled_image,
            gamma,
            fused,
            logits,
            trace,
        })
    }

    pub fn objective(&self, g: &mut Graph, fwd: &Forward, labels: &[u8]) -> Result<Objective> {
        let (alpha, beta) = self.config.loss_weights();
        objectives::total_loss(
            g,
            fwd.logits,
            fwd.pooled_text,
            fwd.pooled_image,
            fwd.gamma,
            labels,
            alpha,
            beta,
            self.config.tau,
            self.config.pairing,
        )
    }
}

/// Token-axis mean: `[B, L, d] -> [B, d]`.
fn pool(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let pooled = g.mean_axis(x, 1)?;
    g.reshape(pooled, &[shape[0], shape[2]])
}

impl Parameters for FsruModel {
    type Vars = ModelVars;

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.embedding.named();
        v.extend(self.mixer.named());
        v.extend(self.head.named());
        v
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.embedding.named_mut();
        v.extend(self.mixer.named_mut());
        v.extend(self.head.named_mut());
        v
    }

    fn bind(&self, g: &mut Graph) -> ModelVars {
        ModelVars {
            embedding: self.embedding.bind(g),
            mixer: self.mixer.bind(g),
            head: self.head.bind(g),
        }
    }

    fn leaves(vars: &ModelVars) -> Vec<Var> {
        let mut v = EmbeddingParams::leaves(&vars.embedding);
        v.extend(MixerParams::leaves(&vars.mixer));
        v.extend(HeadParams::leaves(&vars.head));
        v
    }
}
