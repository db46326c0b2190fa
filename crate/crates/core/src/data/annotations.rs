//! Annotation document plus raw image sidecars.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! annotations.json          {"format", "version", "categories", "images", "annotations"}
//! images/<id>.f64           C·H·W little-endian f64 values, row-major
//! ```
//!
//! Boxes are stored as `[x, y, w, h]`. Masks are run-length encoded over
//! row-major pixels, the first run always counting zeros (it may be 0).

use std::fs;
use std::path::{Path, PathBuf};

use bloinst_autodiff::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Dataset, Instance, Sample};
use crate::geometry::{BBox, Mask};

pub const ANNOTATION_FILE: &str = "annotations.json";
pub const ANNOTATION_VERSION: u32 = 1;
const FORMAT_TAG: &str = "bloinst-annotations";

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    categories: Vec<Category>,
    images: Vec<ImageEntry>,
    annotations: Vec<AnnotationEntry>,
}

#[derive(Serialize, Deserialize)]
struct Category {
    id: usize,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct ImageEntry {
    id: u64,
    file_name: String,
    channels: usize,
    height: usize,
    width: usize,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct AnnotationEntry {
    id: u64,
    image_id: u64,
    category_id: usize,
    bbox: [f64; 4],
    area: usize,
    segmentation: Rle,
}

#[derive(Serialize, Deserialize)]
struct Rle {
    size: [usize; 2],
    counts: Vec<u64>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn image_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `annotations.json` and one sidecar per image under `dir`.
pub fn save_annotations(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(DataError::io(&img_dir))?;
    let mut images = Vec::with_capacity(dataset.len());
    let mut annotations = Vec::new();
    for s in &dataset.samples {
        let file_name = format!("images/{:06}.f64", s.id);
        let bytes = image_bytes(&s.image);
        let path = dir.join(&file_name);
        fs::write(&path, &bytes).map_err(DataError::io(&path))?;
        let shape = s.image.shape();
        images.push(ImageEntry {
            id: s.id,
            file_name,
            channels: shape[0],
            height: shape[1],
            width: shape[2],
            sha256: sha256_hex(&bytes),
        });
        for inst in &s.instances {
            annotations.push(AnnotationEntry {
                id: annotations.len() as u64,
                image_id: s.id,
                category_id: inst.class_id,
                bbox: inst.bbox.to_xywh(),
                area: inst.mask.area(),
                segmentation: Rle {
                    size: [inst.mask.height(), inst.mask.width()],
                    counts: inst.mask.to_rle(),
                },
            });
        }
    }
    let doc = Document {
        format: FORMAT_TAG.into(),
        version: ANNOTATION_VERSION,
        categories: dataset
            .classes
            .iter()
            .enumerate()
            .map(|(id, name)| Category {
                id,
                name: name.clone(),
            })
            .collect(),
        images,
        annotations,
    };
    let path = dir.join(ANNOTATION_FILE);
    let text = serde_json::to_string_pretty(&doc).expect("annotation document serializes");
    fs::write(&path, text).map_err(DataError::io(&path))
}

/// Reads a directory written by [`save_annotations`], verifying every image
/// digest and mask encoding.
pub fn load_annotations(dir: &Path) -> Result<Dataset, DataError> {
    let path = dir.join(ANNOTATION_FILE);
    let text = fs::read_to_string(&path).map_err(DataError::io(&path))?;
    let format_err = |msg: String| DataError::Format {
        path: path.clone(),
        msg,
    };
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != ANNOTATION_VERSION {
        return Err(DataError::Version {
            path,
            found: version,
            expected: ANNOTATION_VERSION,
        });
    }
    let doc: Document = serde_json::from_value(raw).map_err(|e| format_err(e.to_string()))?;
    if doc.format != FORMAT_TAG {
        return Err(format_err(format!(
            "unexpected format tag {:?}",
            doc.format
        )));
    }
    let mut classes = vec![String::new(); doc.categories.len()];
    for c in &doc.categories {
        let slot = classes
            .get_mut(c.id)
            .ok_or_else(|| format_err(format!("category id {} out of range", c.id)))?;
        *slot = c.name.clone();
    }

    let mut samples = Vec::with_capacity(doc.images.len());
    for img in &doc.images {
        let ipath: PathBuf = dir.join(&img.file_name);
        let bytes = fs::read(&ipath).map_err(DataError::io(&ipath))?;
        let actual = sha256_hex(&bytes);
        if actual != img.sha256 {
            return Err(DataError::Digest {
                path: ipath,
                expected: img.sha256.clone(),
                actual,
            });
        }
        let expected = (img.channels * img.height * img.width * 8) as u64;
        if bytes.len() as u64 != expected {
            return Err(DataError::Truncated {
                path: ipath,
                expected,
                actual: bytes.len() as u64,
            });
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let image = Tensor::new(vec![img.channels, img.height, img.width], values)
            .map_err(|e| format_err(e.to_string()))?;
        samples.push(Sample {
            id: img.id,
            image,
            instances: Vec::new(),
        });
    }

    for ann in &doc.annotations {
        let [h, w] = ann.segmentation.size;
        let mask = Mask::from_rle(h, w, &ann.segmentation.counts).map_err(|sum| {
            DataError::MalformedRle {
                path: path.clone(),
                sum,
                expected: (h * w) as u64,
            }
        })?;
        if ann.category_id >= classes.len() {
            return Err(format_err(format!(
                "annotation {} has unknown category {}",
                ann.id, ann.category_id
            )));
        }
        let sample = samples
            .iter_mut()
            .find(|s| s.id == ann.image_id)
            .ok_or_else(|| {
                format_err(format!(
                    "annotation {} refers to missing image {}",
                    ann.id, ann.image_id
                ))
            })?;
        sample.instances.push(Instance {
            bbox: BBox::from_xywh(ann.bbox),
            class_id: ann.category_id,
            mask,
        });
    }
    Ok(Dataset { classes, samples })
}
