//! Instance-segmentation samples, the synthetic shapes generator, and the
//! on-disk formats for annotations and checkpoints.

mod annotations;
mod checkpoint;
mod shapes;

use std::path::PathBuf;

use bloinst_autodiff::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Mask};

pub use annotations::{load_annotations, save_annotations, ANNOTATION_FILE, ANNOTATION_VERSION};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use shapes::generate_shapes;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed document: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(
        "{path}: format version {found} is not supported (this build reads version {expected})"
    )]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: content digest mismatch (expected {expected}, computed {actual})")]
    Digest {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("{path}: run-length counts sum to {sum}, expected {expected} pixels")]
    MalformedRle {
        path: PathBuf,
        sum: u64,
        expected: u64,
    },
    #[error("{path}: truncated, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: bad magic bytes {found:?}")]
    BadMagic { path: PathBuf, found: Vec<u8> },
    #[error("invalid generator request: {0}")]
    InvalidRequest(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| DataError::Io { path, source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// One annotated object. `bbox` is the tight box of `mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub bbox: BBox,
    pub class_id: usize,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    /// `[C, H, W]` intensities in `[0, 1]`.
    pub image: Tensor,
    pub instances: Vec<Instance>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Category names; instance `class_id`s index this list.
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_instances(&self) -> usize {
        self.samples.iter().map(|s| s.instances.len()).sum()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}
