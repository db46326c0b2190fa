//! Toy networks: a grid detector that emits box prompts, a frozen
//! convolutional encoder, and a box-prompted mask decoder adapted through
//! LoRA pairs and light heads.

mod decode;
mod detector;
mod lora;
mod segmenter;

use bloinst_autodiff::{AdError, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::{decode_detections, encode_detections, Detection};
pub use detector::{init_detector, Detector};
pub use lora::{lora_apply, lora_linear_rows};
pub use segmenter::{init_segmenter, Segmenter, SegmenterParams, FROZEN_SEED};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("LoRA rank mismatch: A is {a:?}, B is {b:?}")]
    RankMismatch { a: Vec<usize>, b: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] AdError),
}

/// Which segmenter weights receive gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainableSet {
    /// LoRA pairs plus prompt embedding and heads; encoder and decoder base frozen.
    #[default]
    DecoderLora,
    /// Every segmenter weight, encoder included.
    All,
}

/// Geometry and widths of both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Pixels per detection cell; a power of two.
    pub grid_stride: usize,
    pub detector_width: usize,
    /// Stride-1 convolutions after the downsampling stack.
    pub detector_depth: usize,
    /// Box side decoded from a saturated size logit.
    pub max_box_size: f64,
    pub encoder_channels: usize,
    /// Downsampling of the encoder; a power of two.
    pub encoder_stride: usize,
    pub prompt_dim: usize,
    pub decoder_hidden: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    /// Slope (per pixel) of the soft box indicator.
    pub box_sharpness: f64,
    /// Initial weight of the box indicator in the mask logits.
    pub box_prior_gain: f64,
    pub trainable: TrainableSet,
    /// Steps of seed-independent pretraining for the decoder base, prompt
    /// embedding and head; 0 keeps the random frozen draw.
    pub foundation_steps: usize,
    /// Keep prompt embedding and heads trainable next to the LoRA pairs.
    pub train_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 1,
            num_classes: 3,
            grid_stride: 8,
            detector_width: 16,
            detector_depth: 1,
            max_box_size: 64.0,
            encoder_channels: 8,
            encoder_stride: 4,
            prompt_dim: 8,
            decoder_hidden: 16,
            lora_rank: 4,
            lora_scale: 1.0,
            box_sharpness: 1.0,
            box_prior_gain: 4.0,
            trainable: TrainableSet::DecoderLora,
            foundation_steps: 1500,
            train_heads: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let pow2 = |v: usize| v >= 2 && v.is_power_of_two();
        let err = |m: String| Err(ModelError::Config(m));
        if !pow2(self.grid_stride) || !self.image_size.is_multiple_of(self.grid_stride) {
            return err(format!(
                "image size {} must be divisible by the power-of-two grid stride {}",
                self.image_size, self.grid_stride
            ));
        }
        if !pow2(self.encoder_stride) || !self.image_size.is_multiple_of(self.encoder_stride) {
            return err(format!(
                "image size {} must be divisible by the power-of-two encoder stride {}",
                self.image_size, self.encoder_stride
            ));
        }
        if self.channels == 0
            || self.num_classes == 0
            || self.detector_width < 2
            || self.detector_depth == 0
        {
            return err("channels, classes, detector width and depth must be positive".into());
        }
        if self.lora_rank == 0
            || self.encoder_channels == 0
            || self.prompt_dim == 0
            || self.decoder_hidden == 0
        {
            return err("rank and widths must be positive".into());
        }
        if !(self.max_box_size > 0.0 && self.box_sharpness > 0.0) {
            return err("box size and sharpness must be positive".into());
        }
        Ok(())
    }

    pub fn grid_cells(&self) -> usize {
        self.image_size / self.grid_stride
    }

    pub fn feature_size(&self) -> usize {
        self.image_size / self.encoder_stride
    }

    /// Per-cell output channels: 4 box, 1 objectness, C classes.
    pub fn head_channels(&self) -> usize {
        5 + self.num_classes
    }
}

/// `N(0, std²)` tensor drawn from `rng`.
pub(crate) fn normal_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// He-normal initialisation for a layer with `fan_in` inputs.
pub(crate) fn he(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    normal_tensor(rng, shape, (2.0 / fan_in as f64).sqrt())
}

/// Logit of a prior probability, used to bias heads towards rare positives.
pub(crate) fn prior_logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
