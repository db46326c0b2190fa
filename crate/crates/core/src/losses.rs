//! The weighted four-term objective and its components.

use bloinst_autodiff::{AdError, Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Instance;
use crate::geometry::BBox;

/// Keeps the aspect-ratio weight finite when IoU = 1 and v = 0.
const CIOU_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("degenerate box {0:?}: width and height must be positive")]
    DegenerateBox([f64; 4]),
    #[error("box {0:?} covers no pixels of the {1}x{2} mask")]
    EmptyCrop([f64; 4], usize, usize),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("invalid focal parameters: alpha {alpha}, gamma {gamma}")]
    InvalidFocal { alpha: f64, gamma: f64 },
    #[error("target values must be 0 or 1")]
    NonBinaryTarget,
    #[error(transparent)]
    Tensor(#[from] AdError),
}

/// `λ1..λ4` of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_box: f64,
    pub lambda_obj: f64,
    pub lambda_cls: f64,
    pub lambda_seg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_box: 0.3,
            lambda_obj: 0.7,
            lambda_cls: 0.3,
            lambda_seg: 0.7,
        }
    }
}

impl LossWeights {
    pub fn new(
        lambda_box: f64,
        lambda_obj: f64,
        lambda_cls: f64,
        lambda_seg: f64,
    ) -> Result<Self, LossError> {
        let w = Self {
            lambda_box,
            lambda_obj,
            lambda_cls,
            lambda_seg,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.lambda_box,
            self.lambda_obj,
            self.lambda_cls,
            self.lambda_seg,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(LossError::InvalidWeights(format!(
                "{all:?} must be finite and non-negative"
            )))
        }
    }

    /// Same detection weights with the segmentation term switched off.
    pub fn detection_only(&self) -> Self {
        Self {
            lambda_seg: 0.0,
            ..*self
        }
    }

    /// Only the segmentation term keeps its weight.
    pub fn segmentation_only(&self) -> Self {
        Self {
            lambda_box: 0.0,
            lambda_obj: 0.0,
            lambda_cls: 0.0,
            lambda_seg: self.lambda_seg,
        }
    }
}

/// Balance factor and modulation exponent of the focal loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha_bal: f64,
    pub gamma_mod: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha_bal: 0.25,
            gamma_mod: 2.0,
        }
    }
}

impl FocalParams {
    pub fn new(alpha_bal: f64, gamma_mod: f64) -> Result<Self, LossError> {
        let p = Self {
            alpha_bal,
            gamma_mod,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.alpha_bal > 0.0
            && self.alpha_bal <= 1.0
            && self.gamma_mod >= 0.0
            && self.gamma_mod.is_finite()
        {
            Ok(())
        } else {
            Err(LossError::InvalidFocal {
                alpha: self.alpha_bal,
                gamma: self.gamma_mod,
            })
        }
    }
}

/// Scalar loss values, detached from any tape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    #[serde(rename = "box")]
    pub box_loss: f64,
    pub obj: f64,
    pub cls: f64,
    pub seg: f64,
    pub total: f64,
}

impl LossValues {
    pub fn is_finite(&self) -> bool {
        [self.box_loss, self.obj, self.cls, self.seg, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// The four components and their weighted total, on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown<'t> {
    pub box_loss: Var<'t>,
    pub obj: Var<'t>,
    pub cls: Var<'t>,
    pub seg: Var<'t>,
    pub total: Var<'t>,
}

impl<'t> LossBreakdown<'t> {
    /// `total = λ1·box + λ2·obj + λ3·cls + λ4·seg`, summed in that order.
    pub fn combine(
        box_loss: Var<'t>,
        obj: Var<'t>,
        cls: Var<'t>,
        seg: Var<'t>,
        w: &LossWeights,
    ) -> Result<Self, LossError> {
        let total = box_loss
            .scale(w.lambda_box)
            .add(obj.scale(w.lambda_obj))?
            .add(cls.scale(w.lambda_cls))?
            .add(seg.scale(w.lambda_seg))?;
        Ok(Self {
            box_loss,
            obj,
            cls,
            seg,
            total,
        })
    }

    pub fn values(&self) -> LossValues {
        LossValues {
            box_loss: self.box_loss.item(),
            obj: self.obj.item(),
            cls: self.cls.item(),
            seg: self.seg.item(),
            total: self.total.item(),
        }
    }
}

fn check_box(b: &[f64]) -> Result<(), LossError> {
    if b[2] > b[0] && b[3] > b[1] && b.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LossError::DegenerateBox([b[0], b[1], b[2], b[3]]))
    }
}

/// `1 - CIoU` for a single pair of `[4]` xyxy boxes.
pub fn ciou_loss<'t>(pred: Var<'t>, gt: Var<'t>) -> Result<Var<'t>, LossError> {
    let rows = ciou_loss_rows(pred.reshape(&[1, 4])?, gt.reshape(&[1, 4])?)?;
    Ok(rows.reshape(&[])?)
}

/// Row-wise `1 - CIoU` for `[P,4]` box batches, returned as `[P,1]`.
///
/// CIoU = IoU - ρ²/c² - α_v·v, with ρ the centre distance, c the diagonal
/// of the enclosing box, v = (4/π²)(atan(w_gt/h_gt) - atan(w/h))² and
/// α_v = v / ((1 - IoU) + v). The whole expression, α_v included, is
/// differentiated.
pub fn ciou_loss_rows<'t>(pred: Var<'t>, gt: Var<'t>) -> Result<Var<'t>, LossError> {
    for b in [pred, gt] {
        let v = b.value();
        if v.shape().len() != 2 || v.shape()[1] != 4 {
            return Err(AdError::ShapeMismatch {
                op: "ciou_loss",
                lhs: v.shape().to_vec(),
                rhs: vec![0, 4],
            }
            .into());
        }
        for row in v.data().chunks(4) {
            check_box(row)?;
        }
    }
    let col = |b: Var<'t>, i: usize| b.slice(1, i, i + 1);
    let (px1, py1, px2, py2) = (col(pred, 0)?, col(pred, 1)?, col(pred, 2)?, col(pred, 3)?);
    let (gx1, gy1, gx2, gy2) = (col(gt, 0)?, col(gt, 1)?, col(gt, 2)?, col(gt, 3)?);

    let iw = px2.minimum(gx2)?.sub(px1.maximum(gx1)?)?.relu();
    let ih = py2.minimum(gy2)?.sub(py1.maximum(gy1)?)?.relu();
    let inter = iw.mul(ih)?;
    let (pw, ph) = (px2.sub(px1)?, py2.sub(py1)?);
    let (gw, gh) = (gx2.sub(gx1)?, gy2.sub(gy1)?);
    let union = pw.mul(ph)?.add(gw.mul(gh)?)?.sub(inter)?;
    let iou = inter.div(union)?;

    let dx = px1.add(px2)?.sub(gx1.add(gx2)?)?;
    let dy = py1.add(py2)?.sub(gy1.add(gy2)?)?;
    let rho2 = dx.square().add(dy.square())?.scale(0.25);
    let cw = px2.maximum(gx2)?.sub(px1.minimum(gx1)?)?;
    let ch = py2.maximum(gy2)?.sub(py1.minimum(gy1)?)?;
    let c2 = cw.square().add(ch.square())?;

    let dv = gw.div(gh)?.atan().sub(pw.div(ph)?.atan())?;
    let v = dv
        .square()
        .scale(4.0 / (std::f64::consts::PI * std::f64::consts::PI));
    let alpha_v = v.div(iou.neg().add_scalar(1.0 + CIOU_EPS).add(v)?)?;

    let ciou = iou.sub(rho2.div(c2)?)?.sub(alpha_v.mul(v)?)?;
    Ok(ciou.neg().add_scalar(1.0))
}

fn check_binary(t: &Tensor) -> Result<(), LossError> {
    if t.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(LossError::NonBinaryTarget)
    }
}

/// Mean of `-α(1 - p_t)^γ log p_t` over all elements, evaluated through
/// `log σ` so no logarithm of zero is ever formed.
pub fn focal_bce<'t>(
    logits: Var<'t>,
    targets: &Tensor,
    params: &FocalParams,
) -> Result<Var<'t>, LossError> {
    if logits.shape() != targets.shape() {
        return Err(AdError::ShapeMismatch {
            op: "focal_bce",
            lhs: logits.shape(),
            rhs: targets.shape().to_vec(),
        }
        .into());
    }
    check_binary(targets)?;
    let tape = logits.tape();
    let sign = tape.constant(targets.map(|t| 2.0 * t - 1.0));
    let zt = logits.mul(sign)?;
    let log_pt = zt.log_sigmoid();
    let per = if params.gamma_mod == 0.0 {
        log_pt
    } else {
        // (1 - p_t)^γ = exp(γ · log σ(-z_t))
        let modulator = zt.neg().log_sigmoid().scale(params.gamma_mod).exp();
        modulator.mul(log_pt)?
    };
    Ok(per.scale(-params.alpha_bal).mean())
}

/// Pixel BCE averaged over the pixels of `bbox` (rounded outward, clipped to
/// the mask). Pixels outside the box receive exactly zero gradient.
pub fn masked_seg_bce<'t>(
    mask_logits: Var<'t>,
    mask_gt: &Tensor,
    bbox: &BBox,
) -> Result<Var<'t>, LossError> {
    let shape = mask_logits.shape();
    if shape.len() != 2 || shape != mask_gt.shape() {
        return Err(AdError::ShapeMismatch {
            op: "masked_seg_bce",
            lhs: shape,
            rhs: mask_gt.shape().to_vec(),
        }
        .into());
    }
    check_binary(mask_gt)?;
    let (h, w) = (shape[0], shape[1]);
    let (r0, r1, c0, c1) = bbox
        .pixel_span(h, w)
        .ok_or(LossError::EmptyCrop(bbox.0, h, w))?;
    let crop = mask_logits.slice(0, r0, r1)?.slice(1, c0, c1)?;
    let mut signs = Vec::with_capacity((r1 - r0) * (c1 - c0));
    for r in r0..r1 {
        for c in c0..c1 {
            signs.push(2.0 * mask_gt.data()[r * w + c] - 1.0);
        }
    }
    let sign = mask_logits
        .tape()
        .constant(Tensor::new(vec![r1 - r0, c1 - c0], signs)?);
    Ok(crop.mul(sign)?.log_sigmoid().neg().mean())
}

/// Square detection grid geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub cells: usize,
    pub stride: f64,
}

impl GridGeometry {
    /// Row-major cell holding point `(x, y)`, clamped to the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> usize {
        let clamp = |v: f64| ((v / self.stride).floor().max(0.0) as usize).min(self.cells - 1);
        clamp(y) * self.cells + clamp(x)
    }
}

/// Maps each grid cell to the ground-truth instance whose box centre falls
/// in it, or `None` for background. Two centres in one cell go to the
/// larger box, then to the lower index.
pub fn assign_targets(grid: &GridGeometry, gt_boxes: &[BBox]) -> Vec<Option<usize>> {
    let mut cells: Vec<Option<usize>> = vec![None; grid.cells * grid.cells];
    for (i, b) in gt_boxes.iter().enumerate() {
        let (cx, cy) = b.center();
        let slot = &mut cells[grid.cell_of(cx, cy)];
        match *slot {
            Some(j) if gt_boxes[j].area() >= b.area() => {}
            _ => *slot = Some(i),
        }
    }
    cells
}

/// Per-cell detector outputs for a batch, channel-first over `G·G` cells.
#[derive(Clone, Copy, Debug)]
pub struct GridOutputs<'t> {
    /// `[N, 4, G·G]` decoded xyxy boxes in pixels.
    pub boxes: Var<'t>,
    /// `[N, 1, G·G]` objectness logits.
    pub objectness: Var<'t>,
    /// `[N, C, G·G]` class logits.
    pub class_logits: Var<'t>,
    pub grid: GridGeometry,
}

/// Box-prompted segmentation callback: `(image index in batch, [4] box)`
/// to `[H, W]` mask logits.
pub type SegmentFn<'a, 't> = dyn FnMut(usize, Var<'t>) -> Result<Var<'t>, AdError> + 'a;

/// The weighted objective over a batch.
///
/// Box and class terms average over positive cells, objectness averages
/// over every cell, and the mask term averages over assigned instances,
/// each prompted with the regressed box at its assigned cell so that the
/// mask loss stays differentiable in the detector. With no positives the
/// box, class and mask terms are exact zeros. Passing no segmenter also
/// zeroes the mask term.
pub fn total_loss<'t>(
    pred: &GridOutputs<'t>,
    gts: &[&[Instance]],
    weights: &LossWeights,
    focal: &FocalParams,
    segment: Option<&mut SegmentFn<'_, 't>>,
) -> Result<LossBreakdown<'t>, LossError> {
    let tape = pred.boxes.tape();
    let n = pred.boxes.shape()[0];
    let cells = pred.grid.cells * pred.grid.cells;
    let classes = pred.class_logits.shape()[1];
    assert_eq!(gts.len(), n, "one ground-truth list per image");

    let mut obj_target = vec![0.0; n * cells];
    // (image, cell, instance)
    let mut positives = Vec::new();
    for (img, inst) in gts.iter().enumerate() {
        let boxes: Vec<BBox> = inst.iter().map(|i| i.bbox).collect();
        for (cell, owner) in assign_targets(&pred.grid, &boxes).into_iter().enumerate() {
            if let Some(g) = owner {
                obj_target[img * cells + cell] = 1.0;
                positives.push((img, cell, g));
            }
        }
    }

    let obj_logits = pred.objectness.reshape(&[n * cells])?;
    let obj = focal_bce(
        obj_logits,
        &Tensor::new(vec![n * cells], obj_target)?,
        focal,
    )?;

    if positives.is_empty() {
        let zero = tape.scalar(0.0);
        return LossBreakdown::combine(zero, obj, zero, zero, weights);
    }

    let cell_of = |v: Var<'t>, img: usize, cell: usize, width: usize| -> Result<Var<'t>, AdError> {
        v.slice(0, img, img + 1)?
            .slice(2, cell, cell + 1)?
            .reshape(&[1, width])
    };
    let mut pboxes = Vec::with_capacity(positives.len());
    let mut plogits = Vec::with_capacity(positives.len());
    let mut gt_rows = Vec::with_capacity(positives.len() * 4);
    let mut onehot = vec![0.0; positives.len() * classes];
    for (p, &(img, cell, g)) in positives.iter().enumerate() {
        pboxes.push(cell_of(pred.boxes, img, cell, 4)?);
        plogits.push(cell_of(pred.class_logits, img, cell, classes)?);
        let inst = &gts[img][g];
        gt_rows.extend_from_slice(&inst.bbox.0);
        onehot[p * classes + inst.class_id] = 1.0;
    }
    let pred_boxes = Var::concat(&pboxes, 0)?;
    let gt_boxes = tape.constant(Tensor::new(vec![positives.len(), 4], gt_rows)?);
    let box_loss = ciou_loss_rows(pred_boxes, gt_boxes)?.mean();
    let cls = focal_bce(
        Var::concat(&plogits, 0)?,
        &Tensor::new(vec![positives.len(), classes], onehot)?,
        focal,
    )?;

    let seg = match segment {
        None => tape.scalar(0.0),
        Some(segment) => {
            let mut terms = Vec::with_capacity(positives.len());
            for (p, &(img, _, g)) in positives.iter().enumerate() {
                let prompt = pboxes[p].reshape(&[4])?;
                let crop = {
                    let v = prompt.value();
                    BBox([v.data()[0], v.data()[1], v.data()[2], v.data()[3]])
                };
                let logits = segment(img, prompt)?;
                let mask = &gts[img][g].mask;
                let target = Tensor::new(vec![mask.height(), mask.width()], mask.to_f64())?;
                terms.push(masked_seg_bce(logits, &target, &crop)?.reshape(&[1])?);
            }
            Var::concat(&terms, 0)?.mean()
        }
    };
    LossBreakdown::combine(box_loss, obj, cls, seg, weights)
}
