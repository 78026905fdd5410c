//! Run configuration, loaded from TOML with dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FsruError, Result};
use crate::objectives::SupervisedPairing;
use crate::spectral::{ChannelMap, SpectralStages};

/// Token mixer used between the embeddings and the pooled head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    Spectral,
    SelfAttention,
    SpatialMlp,
}

impl MixerKind {
    pub const ALL: [MixerKind; 3] = [MixerKind::Spectral, MixerKind::SelfAttention, MixerKind::SpatialMlp];

    pub fn as_str(self) -> &'static str {
        match self {
            MixerKind::Spectral => "spectral",
            MixerKind::SelfAttention => "self_attention",
            MixerKind::SpatialMlp => "spatial_mlp",
        }
    }
}

impl std::fmt::Display for MixerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MixerKind {
    type Err = FsruError;

    fn from_str(s: &str) -> Result<Self> {
        MixerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FsruError::Config(format!("unknown mixer `{s}`")))
    }
}

/// Model components that can be switched off for ablations. `true` = enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Filter-bank spectrum compression.
    pub usc: bool,
    /// Cross-modal spectrum co-selection.
    pub csc: bool,
    /// Distribution-similarity fusion weight; when off, γ is fixed at 0.5.
    pub dsf: bool,
    /// Both contrastive terms; when off, α = β = 0.
    pub cl: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            usc: true,
            csc: true,
            dsf: true,
            cl: true,
        }
    }
}

impl Ablation {
    pub fn stages(&self) -> SpectralStages {
        SpectralStages {
            compress: self.usc,
            co_select: self.csc,
        }
    }
}

/// Parameters of the synthetic planted-frequency corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train_samples: usize,
    pub test_samples: usize,
    /// Fraction of samples labelled 1 (rumor).
    pub rumor_fraction: f64,
    /// Frequency bins carrying the text signal, per class.
    pub text_bands_rumor: Vec<usize>,
    pub text_bands_nonrumor: Vec<usize>,
    /// Frequency bins carrying the image (patch-sequence) signal, per class.
    pub image_bands_rumor: Vec<usize>,
    pub image_bands_nonrumor: Vec<usize>,
    /// Gaussian noise standard deviation relative to the signal RMS.
    pub noise: f64,
    /// Probability that the image carries the same class signature as the text.
    pub consistency: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_samples: 1000,
            test_samples: 200,
            rumor_fraction: 0.5,
            text_bands_rumor: vec![2],
            text_bands_nonrumor: vec![5, 7, 9, 11],
            image_bands_rumor: vec![1],
            image_bands_nonrumor: vec![3, 5, 6],
            noise: 0.3,
            consistency: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Embedding width.
    pub d: usize,
    /// Text length.
    pub m: usize,
    /// Patch grid; the image sequence length is `n = grid_h · grid_w`.
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_size: usize,
    pub vocab_size: usize,
    /// Number of filters in each compression bank.
    #[serde(alias = "k")]
    pub filters: usize,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mixer: MixerKind,
    pub ablation: Ablation,
    pub channel_map: ChannelMap,
    pub pairing: SupervisedPairing,
    /// Cross-validation folds over the training file; 1 means a single split.
    pub folds: usize,
    /// Stop once test accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub data: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d: 256,
            m: 32,
            grid_h: 4,
            grid_w: 4,
            patch_size: 4,
            vocab_size: 64,
            filters: 2,
            alpha: 0.2,
            beta: 0.2,
            tau: 0.1,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            seed: 7,
            mixer: MixerKind::Spectral,
            ablation: Ablation::default(),
            channel_map: ChannelMap::Diagonal,
            pairing: SupervisedPairing::WithinClass,
            folds: 1,
            target_accuracy: None,
            data: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn n(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Contrastive weights after the `cl` ablation is applied.
    pub fn loss_weights(&self) -> (f64, f64) {
        if self.ablation.cl {
            (self.alpha, self.beta)
        } else {
            (0.0, 0.0)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| FsruError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FsruError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies `key=value` overrides. Keys may be dotted (`data.noise=0.1`);
    /// values are parsed as TOML scalars or arrays, falling back to strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| FsruError::Config(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| FsruError::Config(format!("override `{item}` is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut root, key.trim(), value)?;
        }
        let cfg: RunConfig = root.try_into().map_err(|e: toml::de::Error| FsruError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("m", self.m),
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
            ("patch_size", self.patch_size),
            ("vocab_size", self.vocab_size),
            ("filters", self.filters),
            ("batch_size", self.batch_size),
            ("folds", self.folds),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(FsruError::Config(format!("{name} must be at least 1")));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(FsruError::Config("alpha and beta must be non-negative".into()));
        }
        if self.tau <= 0.0 || self.learning_rate <= 0.0 {
            return Err(FsruError::Config("tau and learning_rate must be positive".into()));
        }
        let d = &self.data;
        if !(0.0..=1.0).contains(&d.rumor_fraction) || !(0.0..=1.0).contains(&d.consistency) {
            return Err(FsruError::Config(
                "rumor_fraction and consistency must lie in [0, 1]".into(),
            ));
        }
        if d.noise < 0.0 {
            return Err(FsruError::Config("noise must be non-negative".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let key = if key == "k" { "filters" } else { key };
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| FsruError::Config(format!("`{key}` does not name a field")))?;
        if i + 1 == parts.len() {
            if !table.contains_key(*part) && *part != "target_accuracy" {
                return Err(FsruError::Config(format!("unknown setting `{key}`")));
            }
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        node = table
            .get_mut(*part)
            .ok_or_else(|| FsruError::Config(format!("unknown setting `{key}`")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = RunConfig::default();
        assert_eq!((c.batch_size, c.epochs, c.filters), (64, 50, 2));
        assert_eq!((c.alpha, c.beta), (0.2, 0.2));
        assert_eq!(c.d, 256);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = RunConfig::default()
            .with_overrides(&["k=4", "data.noise=0.05", "mixer=self_attention", "ablation.usc=false"])
            .unwrap();
        assert_eq!(c.filters, 4);
        assert_eq!(c.data.noise, 0.05);
        assert_eq!(c.mixer, MixerKind::SelfAttention);
        assert!(!c.ablation.usc);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let c = RunConfig::default();
        assert!(c.with_overrides(&["nonsense=1"]).is_err());
        assert!(c.with_overrides(&["d"]).is_err());
        assert!(c.with_overrides(&["d=0"]).is_err());
        assert!(c.with_overrides(&["mixer=transformer"]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default().with_overrides(&["target_accuracy=0.9"]).unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, back);
    }
}
