use bloinst_autodiff::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset, Instance, Sample, ShapeKind};
use crate::geometry::Mask;
use crate::rng;

/// Placement attempts per shape before giving up on it.
const PLACEMENT_TRIES: usize = 24;
/// A placed shape may not leave any earlier instance with less than this
/// fraction of its own pixels visible.
const MIN_VISIBLE_FRACTION: f64 = 0.5;
const NOISE_STD: f64 = 0.04;

/// Synthetic grey-level images of disks, squares and triangles.
///
/// Each image holds between 1 and `density` shapes drawn back to front over
/// a noisy background; masks keep only the visible pixels and boxes are the
/// tight boxes of those masks. Sample `i` draws from a stream derived from
/// `(seed, i)`, so the result depends only on the arguments.
pub fn generate_shapes(
    n: usize,
    image_size: usize,
    classes: &[ShapeKind],
    density: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n == 0 {
        return Err(DataError::InvalidRequest("n must be at least 1".into()));
    }
    if image_size < 32 {
        return Err(DataError::InvalidRequest(format!(
            "image_size {image_size} is below 32"
        )));
    }
    if classes.is_empty() || density == 0 {
        return Err(DataError::InvalidRequest(
            "need at least one class and density >= 1".into(),
        ));
    }
    let samples = (0..n)
        .map(|i| generate_sample(i as u64, image_size, classes, density, seed))
        .collect();
    Ok(Dataset {
        classes: classes.iter().map(|c| c.name().to_string()).collect(),
        samples,
    })
}

fn rasterize(kind: ShapeKind, cx: f64, cy: f64, r: f64, angle: f64, size: usize) -> Vec<bool> {
    let mut out = vec![false; size * size];
    let tri: Vec<(f64, f64)> = (0..3)
        .map(|k| {
            let a = angle + k as f64 * std::f64::consts::TAU / 3.0;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    let half = 0.85 * r;
    for row in 0..size {
        for col in 0..size {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            out[row * size + col] = match kind {
                ShapeKind::Disk => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
                ShapeKind::Square => (x - cx).abs() <= half && (y - cy).abs() <= half,
                ShapeKind::Triangle => {
                    let side = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| {
                        (bx - ax) * (y - ay) - (by - ay) * (x - ax)
                    };
                    let d = [
                        side(tri[0], tri[1]),
                        side(tri[1], tri[2]),
                        side(tri[2], tri[0]),
                    ];
                    d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
                }
            };
        }
    }
    out
}

fn generate_sample(
    index: u64,
    size: usize,
    classes: &[ShapeKind],
    density: usize,
    seed: u64,
) -> Sample {
    let mut rng = rng::stream(seed, index);
    let count = rng.gen_range(1..=density);
    // owner[p] = index into `drawn` of the shape visible at pixel p
    let mut owner: Vec<Option<usize>> = vec![None; size * size];
    let mut drawn: Vec<(ShapeKind, usize, f64)> = Vec::new(); // (kind, drawn pixel count, intensity)
    let s = size as f64;

    for _ in 0..count {
        for _ in 0..PLACEMENT_TRIES {
            let kind = classes[rng.gen_range(0..classes.len())];
            let r = rng.gen_range(0.09 * s..0.2 * s);
            let cx = rng.gen_range(r..s - r);
            let cy = rng.gen_range(r..s - r);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let intensity = rng.gen_range(0.5..1.0);
            let cover = rasterize(kind, cx, cy, r, angle, size);
            let area = cover.iter().filter(|&&b| b).count();
            if area == 0 {
                continue;
            }
            let mut visible: Vec<usize> = vec![0; drawn.len()];
            for (p, &o) in owner.iter().enumerate() {
                if let (Some(o), false) = (o, cover[p]) {
                    visible[o] += 1;
                }
            }
            let ok = drawn
                .iter()
                .zip(&visible)
                .all(|((_, a, _), &v)| v as f64 >= MIN_VISIBLE_FRACTION * *a as f64);
            if !ok {
                continue;
            }
            let id = drawn.len();
            for (p, &c) in cover.iter().enumerate() {
                if c {
                    owner[p] = Some(id);
                }
            }
            drawn.push((kind, area, intensity));
            break;
        }
    }

    let background = rng.gen_range(0.05..0.25);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let pixels: Vec<f64> = owner
        .iter()
        .map(|o| {
            let base = o.map_or(background, |i| drawn[i].2);
            (base + noise.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();

    let instances = drawn
        .iter()
        .enumerate()
        .map(|(id, &(kind, _, _))| {
            let bits: Vec<bool> = owner.iter().map(|&o| o == Some(id)).collect();
            let mask = Mask::new(size, size, bits);
            Instance {
                bbox: mask.tight_box().expect("placed shapes keep visible pixels"),
                class_id: classes.iter().position(|&c| c == kind).unwrap(),
                mask,
            }
        })
        .collect();

    Sample {
        id: index,
        image: Tensor::new(vec![1, size, size], pixels).unwrap(),
        instances,
    }
}
