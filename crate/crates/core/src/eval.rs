//! Mask AP over IoU thresholds 0.50:0.05:0.95.
//!
//! IoU comparisons are done on integer pixel counts (`100·inter ≥ k·union`)
//! so a threshold is met or missed exactly, with no rounding at the edges.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Instance;
use crate::geometry::Mask;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("mask shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("IoU of two empty masks is undefined")]
    BothEmpty,
}

/// A predicted instance ready for matching.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedInstance {
    pub mask: Mask,
    pub class_id: usize,
    /// Objectness times class probability, in `[0, 1]`.
    pub confidence: f64,
}

/// Pixel intersection and union of two masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub inter: u64,
    pub union: u64,
}

impl Overlap {
    pub fn iou(&self) -> f64 {
        self.inter as f64 / self.union as f64
    }

    pub fn meets(&self, t: IouThreshold) -> bool {
        100 * self.inter >= t.percent() as u64 * self.union
    }

    /// Exact ordering of the two ratios.
    pub fn cmp_iou(&self, other: &Overlap) -> Ordering {
        (self.inter as u128 * other.union as u128).cmp(&(other.inter as u128 * self.union as u128))
    }
}

pub fn overlap(a: &Mask, b: &Mask) -> Result<Overlap, EvalError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(EvalError::ShapeMismatch(
            (a.height(), a.width()),
            (b.height(), b.width()),
        ));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    if union == 0 {
        return Err(EvalError::BothEmpty);
    }
    Ok(Overlap { inter, union })
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, EvalError> {
    overlap(a, b).map(|o| o.iou())
}

/// IoU threshold in whole percent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IouThreshold(u32);

impl IouThreshold {
    pub fn from_percent(p: u32) -> Option<Self> {
        (p <= 100).then_some(Self(p))
    }

    pub fn percent(&self) -> u32 {
        self.0
    }

    pub fn value(&self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// 0.50, 0.55, …, 0.95.
    pub fn standard() -> [IouThreshold; 10] {
        std::array::from_fn(|i| IouThreshold(50 + 5 * i as u32))
    }
}

/// Outcome of greedy matching for one image and class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// Per prediction, in input order.
    pub pred_tp: Vec<bool>,
    pub gt_matched: Vec<bool>,
}

/// Visiting order: confidence descending, ties by lower index.
pub fn confidence_order(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    order
}

/// Greedy matching from a precomputed `overlaps[pred][gt]` table.
pub fn match_overlaps(
    order: &[usize],
    overlaps: &[Vec<Overlap>],
    n_gt: usize,
    t: IouThreshold,
) -> MatchResult {
    let mut pred_tp = vec![false; overlaps.len()];
    let mut gt_matched = vec![false; n_gt];
    for &p in order {
        let mut best: Option<usize> = None;
        for g in 0..n_gt {
            let o = &overlaps[p][g];
            if gt_matched[g] || !o.meets(t) {
                continue;
            }
            if best.is_none_or(|b| o.cmp_iou(&overlaps[p][b]) == Ordering::Greater) {
                best = Some(g);
            }
        }
        if let Some(g) = best {
            gt_matched[g] = true;
            pred_tp[p] = true;
        }
    }
    MatchResult {
        pred_tp,
        gt_matched,
    }
}

/// Predictions visit by confidence; each takes the unmatched ground truth
/// with the highest IoU at or above `t` (lower index on ties). All inputs
/// are assumed to share one class.
pub fn match_instances(
    preds: &[PredictedInstance],
    gts: &[&Mask],
    t: IouThreshold,
) -> Result<MatchResult, EvalError> {
    let overlaps = preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| overlap(&p.mask, g))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let conf: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    Ok(match_overlaps(
        &confidence_order(&conf),
        &overlaps,
        gts.len(),
        t,
    ))
}

/// All-point interpolated AP of a confidence-ordered TP/FP sequence.
///
/// `None` when there is nothing to score (no ground truth and no
/// predictions); predictions without ground truth score 0.
pub fn average_precision(tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if tp.is_empty() { None } else { Some(0.0) };
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Some(ap)
}

/// Mask AP summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    /// Threshold-averaged AP per class; `None` for classes with neither
    /// ground truth nor predictions.
    pub per_class: Vec<Option<f64>>,
    /// Class-averaged AP at each standard threshold.
    pub per_threshold: Vec<f64>,
    pub n_pred: usize,
    pub n_gt: usize,
}

/// AP over a set of images.
///
/// For each class and threshold, predictions are matched per image and then
/// pooled across images in confidence order (ties by image, then input
/// order). Empty predicted masks are dropped first. mAP is the mean over
/// thresholds of the mean over scored classes.
pub fn evaluate(
    preds: &[Vec<PredictedInstance>],
    gts: &[&[Instance]],
    num_classes: usize,
) -> Result<ApReport, EvalError> {
    assert_eq!(preds.len(), gts.len(), "one prediction list per image");
    let thresholds = IouThreshold::standard();
    let mut per_class_t: Vec<Vec<Option<f64>>> = Vec::with_capacity(num_classes);
    let mut n_pred = 0;
    let mut n_gt = 0;

    for class in 0..num_classes {
        // (confidence, image, index, per-threshold tp)
        let mut pooled: Vec<(f64, usize, usize, Vec<bool>)> = Vec::new();
        let mut class_gt = 0;
        for (img, (p, g)) in preds.iter().zip(gts).enumerate() {
            let cp: Vec<&PredictedInstance> = p
                .iter()
                .filter(|x| x.class_id == class && !x.mask.is_empty())
                .collect();
            let cg: Vec<&Mask> = g
                .iter()
                .filter(|x| x.class_id == class)
                .map(|x| &x.mask)
                .collect();
            class_gt += cg.len();
            let overlaps = cp
                .iter()
                .map(|x| {
                    cg.iter()
                        .map(|m| overlap(&x.mask, m))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let conf: Vec<f64> = cp.iter().map(|x| x.confidence).collect();
            let order = confidence_order(&conf);
            let results: Vec<MatchResult> = thresholds
                .iter()
                .map(|&t| match_overlaps(&order, &overlaps, cg.len(), t))
                .collect();
            for (i, c) in conf.iter().enumerate() {
                pooled.push((*c, img, i, results.iter().map(|r| r.pred_tp[i]).collect()));
            }
        }
        n_pred += pooled.len();
        n_gt += class_gt;
        pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        per_class_t.push(
            (0..thresholds.len())
                .map(|k| {
                    let seq: Vec<bool> = pooled.iter().map(|x| x.3[k]).collect();
                    average_precision(&seq, class_gt)
                })
                .collect(),
        );
    }

    let per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|k| {
            let scored: Vec<f64> = per_class_t.iter().filter_map(|c| c[k]).collect();
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().sum::<f64>() / scored.len() as f64
            }
        })
        .collect();
    let per_class = per_class_t
        .iter()
        .map(|c| {
            let v: Option<Vec<f64>> = c.iter().copied().collect();
            v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok(ApReport {
        map: per_threshold.iter().sum::<f64>() / per_threshold.len() as f64,
        ap50: per_threshold[0],
        ap75: per_threshold[5],
        per_class,
        per_threshold,
        n_pred,
        n_gt,
    })
}
