use bloinst_autodiff::{sigmoid, Tensor};

use crate::geometry::BBox;
use crate::losses::GridGeometry;

/// One decoded detector cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    /// xyxy, clamped to the image.
    pub bbox: BBox,
    pub objectness: f64,
    pub class_scores: Vec<f64>,
    pub class_id: usize,
    /// Row-major grid cell the detection came from.
    pub cell: usize,
}

impl Detection {
    /// Objectness times the best class probability.
    pub fn confidence(&self) -> f64 {
        self.objectness * self.class_scores[self.class_id]
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Thresholds objectness and applies greedy NMS for one image.
///
/// `boxes: [4, G·G]` decoded xyxy, `objectness: [1, G·G]` and
/// `class_logits: [C, G·G]` logits. Candidates are visited by objectness
/// descending, ties by cell index; a candidate is dropped when its IoU with
/// an already kept box exceeds `nms_iou`.
pub fn decode_detections(
    boxes: &Tensor,
    objectness: &Tensor,
    class_logits: &Tensor,
    image_size: f64,
    conf_threshold: f64,
    nms_iou: f64,
) -> Vec<Detection> {
    let cells = objectness.len();
    let classes = class_logits.len() / cells;
    let b = boxes.data();
    let mut cand: Vec<Detection> = (0..cells)
        .filter_map(|k| {
            let obj = sigmoid(objectness.data()[k]);
            if obj < conf_threshold {
                return None;
            }
            let scores: Vec<f64> = (0..classes)
                .map(|c| sigmoid(class_logits.data()[c * cells + k]))
                .collect();
            Some(Detection {
                bbox: BBox([b[k], b[cells + k], b[2 * cells + k], b[3 * cells + k]])
                    .clamped(image_size, image_size),
                objectness: obj,
                class_id: argmax(&scores),
                class_scores: scores,
                cell: k,
            })
        })
        .collect();
    cand.sort_by(|p, q| {
        q.objectness
            .total_cmp(&p.objectness)
            .then(p.cell.cmp(&q.cell))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for d in cand {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= nms_iou) {
            kept.push(d);
        }
    }
    kept
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    (p / (1.0 - p)).ln()
}

/// Writes detections back into raw per-cell tensors `(boxes, objectness,
/// class logits)` in the layout [`decode_detections`] reads. Cells without
/// a detection get objectness logit −50.
pub fn encode_detections(
    dets: &[Detection],
    grid: &GridGeometry,
    num_classes: usize,
) -> (Tensor, Tensor, Tensor) {
    let cells = grid.cells * grid.cells;
    let mut boxes = Tensor::zeros(&[4, cells]);
    let mut obj = Tensor::full(&[1, cells], -50.0);
    let mut cls = Tensor::zeros(&[num_classes, cells]);
    for d in dets {
        let k = d.cell;
        for (i, v) in d.bbox.0.iter().enumerate() {
            boxes.data_mut()[i * cells + k] = *v;
        }
        obj.data_mut()[k] = logit(d.objectness);
        for (c, s) in d.class_scores.iter().enumerate() {
            cls.data_mut()[c * cells + k] = logit(*s);
        }
    }
    (boxes, obj, cls)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(entries: &[(usize, [f64; 4], f64)]) -> (Tensor, Tensor, Tensor) {
        let cells = 4;
        let mut b = Tensor::zeros(&[4, cells]);
        let mut o = Tensor::full(&[1, cells], -20.0);
        for &(k, bx, p) in entries {
            for (i, v) in bx.iter().enumerate() {
                b.data_mut()[i * cells + k] = *v;
            }
            o.data_mut()[k] = logit(p);
        }
        (b, o, Tensor::zeros(&[2, cells]))
    }

    #[test]
    fn below_threshold_is_empty() {
        let (b, _, c) = grid_with(&[]);
        let o = Tensor::full(&[1, 4], -1e3);
        assert!(decode_detections(&b, &o, &c, 16.0, 0.5, 0.5).is_empty());
    }

    #[test]
    fn identical_boxes_suppressed() {
        let (b, o, c) = grid_with(&[
            (0, [1.0, 1.0, 5.0, 5.0], 0.8),
            (1, [1.0, 1.0, 5.0, 5.0], 0.9),
        ]);
        let d = decode_detections(&b, &o, &c, 16.0, 0.5, 0.5);
        assert_eq!(d.len(), 1);
        assert!((d[0].objectness - 0.9).abs() < 1e-12);
    }

    #[test]
    fn disjoint_boxes_kept_in_score_order() {
        let (b, o, c) = grid_with(&[
            (0, [1.0, 1.0, 5.0, 5.0], 0.6),
            (3, [9.0, 9.0, 14.0, 14.0], 0.9),
        ]);
        let d = decode_detections(&b, &o, &c, 16.0, 0.5, 0.5);
        assert_eq!(d.iter().map(|d| d.cell).collect::<Vec<_>>(), vec![3, 0]);
    }

    #[test]
    fn round_trip_through_encoding() {
        let (b, o, c) = grid_with(&[
            (0, [1.0, 1.0, 5.0, 5.0], 0.6),
            (3, [9.0, 9.0, 14.0, 14.0], 0.9),
        ]);
        let d = decode_detections(&b, &o, &c, 16.0, 0.5, 0.5);
        let g = GridGeometry {
            cells: 2,
            stride: 8.0,
        };
        let (b2, o2, c2) = encode_detections(&d, &g, 2);
        let e = decode_detections(&b2, &o2, &c2, 16.0, 0.5, 0.5);
        assert_eq!(d.len(), e.len());
        for (x, y) in d.iter().zip(&e) {
            assert_eq!(x.bbox, y.bbox);
            assert!((x.objectness - y.objectness).abs() < 1e-12);
        }
    }
}
