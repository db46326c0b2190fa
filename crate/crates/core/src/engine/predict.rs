use bloinst_autodiff::{Tape, Tensor};

use super::{ModelContext, TrainError};
use crate::data::Instance;
use crate::eval::{evaluate, ApReport, PredictedInstance};
use crate::geometry::Mask;
use crate::models::decode_detections;
use crate::params::ParamSet;

/// Detect, prompt the segmenter with every kept box and binarise at
/// probability 0.5, for sample `index` of the context's dataset.
pub fn predict_instances(
    ctx: &ModelContext<'_>,
    phi: &ParamSet,
    theta: &ParamSet,
    index: usize,
    conf_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<PredictedInstance>, TrainError> {
    let tape = Tape::new();
    let phi_b = phi.bind(&tape, false);
    let seg_b = ctx
        .frozen
        .bind(&tape, false)
        .merged(theta.bind(&tape, false));
    let raw = ctx
        .detector
        .forward(tape.constant(ctx.stack_images(&[index])), &phi_b)?;
    let out = ctx.detector.outputs(raw)?;
    let cells = out.grid.cells * out.grid.cells;
    let squeeze = |t: Tensor| -> Result<Tensor, TrainError> {
        let c = t.len() / cells;
        Ok(t.reshaped(&[c, cells])?)
    };
    let cfg = ctx.detector.config();
    let dets = decode_detections(
        &squeeze(out.boxes.to_tensor())?,
        &squeeze(out.objectness.to_tensor())?,
        &squeeze(out.class_logits.to_tensor())?,
        cfg.image_size as f64,
        conf_threshold,
        nms_iou,
    );
    if dets.is_empty() {
        return Ok(Vec::new());
    }
    let features = match ctx.cached_features(index) {
        Some(f) => tape.constant(f.clone()),
        None => ctx
            .segmenter
            .encode_var(tape.constant(ctx.data.samples[index].image.clone()), &seg_b)?,
    };
    let s = cfg.image_size;
    let mut preds = Vec::with_capacity(dets.len());
    for d in dets {
        let prompt = tape.constant(Tensor::from_vec(d.bbox.0.to_vec()));
        let logits = ctx.segmenter.forward(features, prompt, &seg_b)?;
        let bits = logits.value().data().iter().map(|&z| z >= 0.0).collect();
        preds.push(PredictedInstance {
            mask: Mask::new(s, s, bits),
            class_id: d.class_id,
            confidence: d.confidence(),
        });
    }
    Ok(preds)
}

/// Mask AP of the two networks over the context's whole dataset.
pub fn evaluate_model(
    ctx: &ModelContext<'_>,
    phi: &ParamSet,
    theta: &ParamSet,
    conf_threshold: f64,
    nms_iou: f64,
) -> Result<ApReport, TrainError> {
    let preds = (0..ctx.data.len())
        .map(|i| predict_instances(ctx, phi, theta, i, conf_threshold, nms_iou))
        .collect::<Result<Vec<_>, _>>()?;
    let gts: Vec<&[Instance]> = ctx
        .data
        .samples
        .iter()
        .map(|s| s.instances.as_slice())
        .collect();
    Ok(evaluate(&preds, &gts, ctx.detector.config().num_classes)?)
}
