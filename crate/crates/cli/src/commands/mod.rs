pub mod ablate;
pub mod eval;
pub mod generate;
pub mod train;

use std::fs;
use std::path::Path;
use std::time::Instant;

use bloinst_core::data::{save_checkpoint, Checkpoint, Dataset};
use bloinst_core::engine::{run_strategy, TrainError};
use bloinst_core::eval::ApReport;
use bloinst_core::models::SegmenterParams;
use bloinst_core::params::ParamSet;

use crate::config::{write_json, RunConfig};
use crate::error::CliError;
use crate::output::{write_trace, Divergence, Summary, CHECKPOINT_FILE, SUMMARY_FILE, TRACE_FILE};

/// Fits the model geometry to the training images and checks the test set
/// against it.
pub fn adapt_to_data(
    run: &mut RunConfig,
    data: &Dataset,
    test: Option<&Dataset>,
) -> Result<(), CliError> {
    let first = data
        .samples
        .first()
        .ok_or_else(|| CliError::Usage("training dataset is empty".into()))?;
    let shape = first.image.shape().to_vec();
    let model = &mut run.train.model;
    model.num_classes = data.classes.len();
    model.channels = shape[0];
    model.image_size = shape[1];
    for (name, d) in std::iter::once(("training", data)).chain(test.map(|t| ("test", t))) {
        if d.classes != data.classes {
            return Err(CliError::Incompatible(format!(
                "{name} set categories {:?} differ from training categories {:?}",
                d.classes, data.classes
            )));
        }
        if let Some(s) = d
            .samples
            .iter()
            .find(|s| s.image.shape() != shape.as_slice())
        {
            return Err(CliError::Incompatible(format!(
                "{name} image {} has shape {:?}, expected {:?}",
                s.id,
                s.image.shape(),
                shape
            )));
        }
    }
    if shape[1] != shape[2] {
        return Err(CliError::Incompatible(format!(
            "images must be square, not {:?}",
            shape
        )));
    }
    run.train
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub struct RunResult {
    pub final_report: Option<ApReport>,
    pub wall_seconds: f64,
}

fn checkpoint(
    run: &RunConfig,
    detector: ParamSet,
    segmenter: SegmenterParams,
    out: &Path,
) -> Result<(), CliError> {
    let ck = Checkpoint {
        config: serde_json::to_value(run).expect("run config serializes"),
        detector,
        segmenter,
    };
    Ok(save_checkpoint(&ck, &out.join(CHECKPOINT_FILE))?)
}

/// Runs `run.strategy` and writes the config echo, trace, summary and
/// (optionally) checkpoint under `out`. A diverged run still leaves its
/// last good parameters and a summary behind.
pub fn execute(
    run: &RunConfig,
    data: &Dataset,
    test: Option<&Dataset>,
    out: &Path,
    keep_checkpoint: bool,
) -> Result<RunResult, CliError> {
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    run.echo(out)?;
    let started = Instant::now();
    match run_strategy(run.strategy, &run.train, data, test, None) {
        Ok(o) => {
            let summary = Summary {
                status: "ok",
                strategy: run.strategy,
                iterations_run: o.trace.rows.len(),
                split_sizes: Some(o.trace.split_sizes),
                pretrain_final: o.trace.pretrain.last().copied(),
                final_lower: o.trace.rows.iter().rev().find_map(|r| r.lower),
                final_upper: o.trace.rows.iter().rev().find_map(|r| r.upper),
                pretrain_report: o.pretrain_report.as_ref(),
                final_report: o.final_report.as_ref(),
                divergence: None,
                detector_sha256: o.detector.digest(),
                segmenter_sha256: o.segmenter.all().digest(),
                wall_seconds: o.trace.wall_seconds,
                config: run,
            };
            write_trace(&out.join(TRACE_FILE), &o.trace)?;
            write_json(&out.join(SUMMARY_FILE), &summary)?;
            if keep_checkpoint {
                checkpoint(run, o.detector, o.segmenter, out)?;
            }
            Ok(RunResult {
                final_report: o.final_report,
                wall_seconds: o.trace.wall_seconds,
            })
        }
        Err(TrainError::Diverged {
            iteration,
            phase,
            reason,
            last_good,
        }) => {
            let (detector, segmenter) = *last_good;
            let summary = Summary {
                status: "diverged",
                strategy: run.strategy,
                iterations_run: iteration,
                split_sizes: None,
                pretrain_final: None,
                final_lower: None,
                final_upper: None,
                pretrain_report: None,
                final_report: None,
                divergence: Some(Divergence {
                    iteration,
                    phase: phase.to_string(),
                    reason: reason.clone(),
                }),
                detector_sha256: detector.digest(),
                segmenter_sha256: segmenter.all().digest(),
                wall_seconds: started.elapsed().as_secs_f64(),
                config: run,
            };
            write_json(&out.join(SUMMARY_FILE), &summary)?;
            checkpoint(run, detector, segmenter, out)?;
            Err(CliError::Diverged(format!(
                "training diverged at iteration {iteration} during {phase}: {reason}; last good parameters kept in {}",
                out.join(CHECKPOINT_FILE).display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn report_line(r: &ApReport) -> String {
    format!(
        "mAP {:.4} AP50 {:.4} AP75 {:.4} ({} predictions, {} instances)",
        r.map, r.ap50, r.ap75, r.n_pred, r.n_gt
    )
}
