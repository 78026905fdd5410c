//! Synthetic paired text/image corpus with a class-dependent frequency
//! signature, and its line-oriented file format.
//!
//! # File format
//!
//! ```text
//! file    = header "\n" *(record "\n")
//! header  = "# fsru-dataset v1" *(" " key "=" uint)     ; keys: m vocab_size grid_h grid_w patch_size
//! record  = label TAB ids TAB pixels
//! label   = "0" | "1"                                  ; 1 = rumor
//! ids     = [uint *(" " uint)]                          ; at most m token ids, each < vocab_size
//! pixels  = base64(standard alphabet, padded) of grid_h·grid_w·patch_size² little-endian f64,
//!           patch-major: patch 0 pixels 0..p², patch 1, ...; every value in [0, 1]
//! ```
//!
//! Lines starting with `#` after the header and empty lines are ignored.

use std::f64::consts::PI;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::artifact::write_atomic;
use crate::config::{RunConfig, SyntheticSpec};
use crate::embedding::{ImageSample, TextSample};
use crate::error::{FsruError, Result};
use crate::parallel::map_range;

const MAGIC: &str = "# fsru-dataset v1";
/// Latent signal range mapped onto the vocabulary.
const TEXT_RANGE: f64 = 2.0;
/// Pixel brightness swing per unit of latent signal.
const PIXEL_GAIN: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: u8,
    pub text: TextSample,
    pub image: ImageSample,
}

/// Shape metadata stored in the file header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub m: usize,
    pub vocab_size: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_size: usize,
}

impl DatasetMeta {
    pub fn from_config(c: &RunConfig) -> Self {
        Self {
            m: c.m,
            vocab_size: c.vocab_size,
            grid_h: c.grid_h,
            grid_w: c.grid_w,
            patch_size: c.patch_size,
        }
    }

    /// Errors if the dataset was generated for different shapes than `c`.
    pub fn check(&self, c: &RunConfig) -> Result<()> {
        let want = Self::from_config(c);
        if *self != want {
            return Err(FsruError::Config(format!(
                "dataset shapes {self:?} do not match the configuration {want:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            meta: self.meta,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut out = format!(
            "{MAGIC} m={} vocab_size={} grid_h={} grid_w={} patch_size={}\n",
            m.m, m.vocab_size, m.grid_h, m.grid_w, m.patch_size
        );
        for s in &self.samples {
            let ids: Vec<String> = s.text.token_ids.iter().map(|i| i.to_string()).collect();
            let bytes: Vec<u8> = s.image.pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
            out.push_str(&format!("{}\t{}\t{}\n", s.label, ids.join(" "), STANDARD.encode(bytes)));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(FsruError::Dataset {
            line: 1,
            message: "empty file".into(),
        })?;
        let meta = parse_header(header)?;
        let pixel_count = meta.grid_h * meta.grid_w * meta.patch_size * meta.patch_size;
        let mut samples = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| FsruError::Dataset { line: line_no, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let label = match fields[0] {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("label `{other}` is not 0 or 1"))),
            };
            let ids = fields[1]
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    let id: usize = t.parse().map_err(|_| bad(format!("token `{t}` is not an integer")))?;
                    if id >= meta.vocab_size {
                        return Err(bad(format!("token {id} outside vocabulary of {}", meta.vocab_size)));
                    }
                    Ok(id)
                })
                .collect::<Result<Vec<_>>>()?;
            if ids.len() > meta.m {
                return Err(bad(format!("{} tokens exceed m={}", ids.len(), meta.m)));
            }
            let bytes = STANDARD
                .decode(fields[2])
                .map_err(|e| bad(format!("invalid base64: {e}")))?;
            if bytes.len() != pixel_count * 8 {
                return Err(bad(format!(
                    "{} pixel bytes, expected {}",
                    bytes.len(),
                    pixel_count * 8
                )));
            }
            let pixels = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let image = ImageSample::new(meta.grid_h, meta.grid_w, meta.patch_size, pixels)
                .map_err(|e| bad(e.to_string()))?;
            samples.push(Sample {
                label,
                text: TextSample::new(ids),
                image,
            });
        }
        Ok(Dataset { meta, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| FsruError::io(path, e))?;
        Dataset::parse(&text)
    }
}

fn parse_header(line: &str) -> Result<DatasetMeta> {
    let bad = |message: String| FsruError::Dataset { line: 1, message };
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad(format!("missing `{MAGIC}` header")))?;
    let get = |key: &str| -> Result<usize> {
        rest.split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .ok_or_else(|| bad(format!("header lacks `{key}`")))?
            .1
            .parse()
            .map_err(|_| bad(format!("header `{key}` is not an integer")))
    };
    Ok(DatasetMeta {
        m: get("m")?,
        vocab_size: get("vocab_size")?,
        grid_h: get("grid_h")?,
        grid_w: get("grid_w")?,
        patch_size: get("patch_size")?,
    })
}

fn check_bands(bands: &[usize], len: usize, what: &str) -> Result<()> {
    if bands.is_empty() {
        return Err(FsruError::Config(format!("{what}: no bands given")));
    }
    if let Some(b) = bands.iter().find(|&&b| 2 * b >= len) {
        return Err(FsruError::Config(format!(
            "{what}: band {b} must be below half the sequence length {len}"
        )));
    }
    Ok(())
}

/// A random-phase sum of cosines at `bands` with equal expected power,
/// plus Gaussian noise scaled to the signal RMS.
fn planted_signal<R: Rng>(len: usize, bands: &[usize], noise: f64, rng: &mut R) -> Vec<f64> {
    let base = 1.0 / (bands.len() as f64).sqrt();
    let components: Vec<(usize, f64, f64)> = bands
        .iter()
        .map(|&b| (b, base * rng.random_range(0.75..1.25), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let sigma = noise * std::f64::consts::FRAC_1_SQRT_2;
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    (0..len)
        .map(|i| {
            let s: f64 = components
                .iter()
                .map(|&(b, a, phi)| a * (2.0 * PI * b as f64 * i as f64 / len as f64 + phi).cos())
                .sum();
            if sigma > 0.0 {
                s + normal.sample(rng)
            } else {
                s
            }
        })
        .collect()
}

fn quantise(signal: &[f64], vocab: usize) -> Vec<usize> {
    let top = (vocab - 1) as f64;
    signal
        .iter()
        .map(|s| {
            let unit = (s.clamp(-TEXT_RANGE, TEXT_RANGE) + TEXT_RANGE) / (2.0 * TEXT_RANGE);
            (unit * top).round() as usize
        })
        .collect()
}

fn sample_seed(seed: u64, split: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ split.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (index as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
}

fn generate_split(cfg: &RunConfig, count: usize, split: u64) -> Result<Dataset> {
    let spec = &cfg.data;
    let n = cfg.n();
    let p2 = cfg.patch_len();
    let rumors = (spec.rumor_fraction * count as f64).round() as usize;
    let mut labels: Vec<u8> = (0..count).map(|i| u8::from(i < rumors)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, split, usize::MAX)));
    let samples = map_range(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, split, i));
        let label = labels[i];
        let image_label = if rng.random_bool(spec.consistency) { label } else { 1 - label };
        let (tb, _) = bands_for(spec, label);
        let (_, ib) = bands_for(spec, image_label);
        let text = planted_signal(cfg.m, tb, spec.noise, &mut rng);
        let image = planted_signal(n, ib, spec.noise, &mut rng);
        let jitter = Normal::new(0.0, 0.02).expect("finite sigma");
        let mut pixels = Vec::with_capacity(n * p2);
        for s in &image {
            for _ in 0..p2 {
                let v = 0.5 + PIXEL_GAIN * s + jitter.sample(&mut rng);
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
        Sample {
            label,
            text: TextSample::new(quantise(&text, cfg.vocab_size)),
            image: ImageSample::new(cfg.grid_h, cfg.grid_w, cfg.patch_size, pixels)
                .expect("generated pixels lie in [0, 1]"),
        }
    });
    Ok(Dataset {
        meta: DatasetMeta::from_config(cfg),
        samples,
    })
}

fn bands_for(spec: &SyntheticSpec, label: u8) -> (&[usize], &[usize]) {
    if label == 1 {
        (&spec.text_bands_rumor, &spec.image_bands_rumor)
    } else {
        (&spec.text_bands_nonrumor, &spec.image_bands_nonrumor)
    }
}

/// Generates the train and test splits described by `cfg.data`.
pub fn generate(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let spec = &cfg.data;
    if spec.train_samples < 4 {
        return Err(FsruError::Config("at least 4 training samples are required".into()));
    }
    check_bands(&spec.text_bands_rumor, cfg.m, "text_bands_rumor")?;
    check_bands(&spec.text_bands_nonrumor, cfg.m, "text_bands_nonrumor")?;
    check_bands(&spec.image_bands_rumor, cfg.n(), "image_bands_rumor")?;
    check_bands(&spec.image_bands_nonrumor, cfg.n(), "image_bands_nonrumor")?;
    Ok((
        generate_split(cfg, spec.train_samples, 0)?,
        generate_split(cfg, spec.test_samples, 1)?,
    ))
}

/// Power at each bin of the mean-removed sequence, by direct summation.
fn band_power(seq: &[f64]) -> Vec<f64> {
    let len = seq.len();
    let mean = seq.iter().sum::<f64>() / len as f64;
    (0..len)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in seq.iter().enumerate() {
                let angle = -2.0 * PI * ((k * i) % len) as f64 / len as f64;
                re += (v - mean) * angle.cos();
                im += (v - mean) * angle.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn band_score(power: &[f64], rumor: &[usize], nonrumor: &[usize]) -> f64 {
    let e_r: f64 = rumor.iter().map(|&b| power[b]).sum();
    let e_n: f64 = nonrumor.iter().map(|&b| power[b]).sum();
    (e_r - e_n) / (e_r + e_n).max(f64::MIN_POSITIVE)
}

/// Bin-energy threshold classifier: compares the energy in the rumor bands
/// with the energy in the non-rumor bands, summed over both modalities.
pub fn threshold_predict(spec: &SyntheticSpec, sample: &Sample) -> u8 {
    let text: Vec<f64> = sample.text.token_ids.iter().map(|&i| i as f64).collect();
    let p2 = sample.image.patch_len();
    let patches: Vec<f64> = sample
        .image
        .pixels
        .chunks(p2)
        .map(|c| c.iter().sum::<f64>() / p2 as f64)
        .collect();
    let score = band_score(&band_power(&text), &spec.text_bands_rumor, &spec.text_bands_nonrumor)
        + band_score(&band_power(&patches), &spec.image_bands_rumor, &spec.image_bands_nonrumor);
    u8::from(score > 0.0)
}

/// Accuracy of [`threshold_predict`] over a dataset.
pub fn threshold_accuracy(spec: &SyntheticSpec, data: &Dataset) -> f64 {
    let hits = data
        .samples
        .iter()
        .filter(|s| threshold_predict(spec, s) == s.label)
        .count();
    hits as f64 / data.len().max(1) as f64
}
