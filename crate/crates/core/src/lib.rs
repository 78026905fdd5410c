//! Frequency-spectrum representation and fusion for paired text/image
//! classification, built on a small f64 tensor library with reverse-mode
//! differentiation.
//!
//! The `parallel` feature (on by default) runs batched kernels on rayon;
//! without it every kernel runs sequentially.

pub mod artifact;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod mixers;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod project;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use config::{MixerKind, RunConfig};
pub use error::{FsruError, Result};
pub use graph::Graph;
pub use model::FsruModel;
pub use tensor::{ComplexTensor, Tensor};
