use std::path::PathBuf;

use bloinst_core::data::{load_annotations, load_checkpoint};
use bloinst_core::engine::{evaluate_model, ModelContext, TrainError};
use bloinst_core::eval::ApReport;
use bloinst_core::models::{init_detector, init_segmenter};
use bloinst_core::params::ParamSet;
use clap::Args;
use serde::Serialize;

use super::report_line;
use crate::config::{write_json, RunConfig};
use crate::error::CliError;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    /// Objectness threshold for decoding detections.
    #[arg(long, default_value_t = 0.25)]
    pub conf: f64,
    /// Box IoU above which NMS suppresses a detection.
    #[arg(long, default_value_t = 0.5)]
    pub nms: f64,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    conf: f64,
    nms: f64,
    images: usize,
    #[serde(flatten)]
    report: &'a ApReport,
}

fn same_layout(a: &ParamSet, b: &ParamSet) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    for (name, v) in [("--conf", args.conf), ("--nms", args.nms)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::Usage(format!(
                "{name} must lie in (0, 1), got {v}"
            )));
        }
    }
    let ck = load_checkpoint(&args.checkpoint)?;
    let run: RunConfig = serde_json::from_value(ck.config.clone()).map_err(|e| {
        CliError::Incompatible(format!("checkpoint configuration is not readable: {e}"))
    })?;
    let model = &run.train.model;
    let expected_seg = init_segmenter(model, 0);
    if !same_layout(&ck.detector, &init_detector(model, 0))
        || !same_layout(&ck.segmenter.all(), &expected_seg.all())
    {
        return Err(CliError::Incompatible(
            "checkpoint parameters do not match its recorded model configuration".into(),
        ));
    }
    let data = load_annotations(&args.data)?;
    if data.classes.len() != model.num_classes {
        return Err(CliError::Incompatible(format!(
            "dataset has {} classes, checkpoint model has {}",
            data.classes.len(),
            model.num_classes
        )));
    }
    let shape = [model.channels, model.image_size, model.image_size];
    if let Some(s) = data
        .samples
        .iter()
        .find(|s| s.image.shape() != shape.as_slice())
    {
        return Err(CliError::Incompatible(format!(
            "image {} has shape {:?}, checkpoint model expects {:?}",
            s.id,
            s.image.shape(),
            shape
        )));
    }
    let ctx = ModelContext::new(model, &ck.segmenter.frozen, &data).map_err(TrainError::from)?;
    let report = evaluate_model(
        &ctx,
        &ck.detector,
        &ck.segmenter.trainable,
        args.conf,
        args.nms,
    )?;
    write_json(
        &args.out,
        &EvalReport {
            conf: args.conf,
            nms: args.nms,
            images: data.len(),
            report: &report,
        },
    )?;
    println!("{} over {} images", report_line(&report), data.len());
    Ok(())
}
