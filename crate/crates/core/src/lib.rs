//! Bi-level training of a box-prompt generator (a grid detector) and a
//! promptable mask segmenter on disjoint data splits.
//!
//! The lower level adapts the segmenter's trainable parameters on one split
//! while the detector is held fixed; the upper level updates the detector on
//! the other split against the adapted segmenter, with either a first-order
//! gradient or a finite-difference second-order hypergradient.
//!
//! Module map:
//! - [`losses`]: CIoU box loss, focal BCE, box-cropped mask BCE, grid target
//!   assignment and the weighted four-term objective.
//! - [`models`]: the toy detector, the frozen encoder, LoRA-adapted decoder
//!   and detection decoding.
//! - [`engine`]: splitting, pretraining, lower/upper steps, the bi-level
//!   loop and the single-level and separate baselines.
//! - [`data`]: synthetic shapes, annotation files and checkpoints.
//! - [`eval`]: mask IoU, matching and COCO-style AP.

pub mod data;
pub mod engine;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod models;
pub mod params;
pub mod rng;

pub use bloinst_autodiff as autodiff;
