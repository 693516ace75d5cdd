//! Super-resolution training and evaluation toolkit built around RCAN.
//!
//! The crate is organised by stage of the pipeline:
//!
//! * [`model`]: the network, its parameter layout and backward pass
//! * [`data`]: dataset indexing, bicubic degradation, patch sampling and
//!   augmentation
//! * [`optim`]: Adam, Lamb, learning-rate schedules and the precision policy
//! * [`trainer`]: the training loop, checkpoints and the procedures built on it
//! * [`metrics`]: Y-channel PSNR/SSIM, self-ensemble and benchmark reports
//! * [`config`]: flat run configuration and recipe presets
//!
//! [`synth`] generates deterministic procedural images for tests and demos.

pub mod config;
pub mod data;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use config::{Preset, RunConfig};
pub use error::{Error, Result};
pub use image::{ColorSpace, ImageTensor};
pub use metrics::{MetricReport, Upscaler};
pub use model::{build_model, nearest_neighbor_model, BranchPolicy, Model, ModelConfig, Partition, Trainable};
pub use nn::Activation;
pub use tensor::{Scalar, Tensor};
pub use trainer::{Checkpoint, TrainConfig};
