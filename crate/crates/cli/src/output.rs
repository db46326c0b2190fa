//! Trace CSVs and run summaries.

use std::path::Path;

use bloinst_core::engine::{Strategy, TrainTrace};
use bloinst_core::eval::ApReport;
use bloinst_core::losses::LossValues;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bloi";

fn losses_cells(l: Option<&LossValues>) -> [String; 5] {
    match l {
        Some(l) => [l.box_loss, l.obj, l.cls, l.seg, l.total].map(|v| v.to_string()),
        None => Default::default(),
    }
}

/// One row per outer iteration; empty cells where a level did not step or
/// no evaluation ran.
pub fn write_trace(path: &Path, trace: &TrainTrace) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["iteration".to_string()];
    for level in ["lower", "upper"] {
        for part in ["box", "obj", "cls", "seg", "total"] {
            header.push(format!("{level}_{part}"));
        }
    }
    header.extend(["hyper_skipped", "mAP", "AP50", "AP75"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in &trace.rows {
        let mut rec = vec![row.iteration.to_string()];
        rec.extend(losses_cells(row.lower.as_ref()));
        rec.extend(losses_cells(row.upper.as_ref()));
        rec.push(row.hyper_skipped.to_string());
        match &row.eval {
            Some(e) => rec.extend([e.map, e.ap50, e.ap75].map(|v| v.to_string())),
            None => rec.extend([String::new(), String::new(), String::new()]),
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    };
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize)]
pub struct Divergence {
    pub iteration: usize,
    pub phase: String,
    pub reason: String,
}

/// Machine-readable result of one training run. Only `wall_seconds`
/// differs between reruns of the same configuration.
#[derive(Serialize)]
pub struct Summary<'a> {
    pub status: &'static str,
    pub strategy: Strategy,
    pub iterations_run: usize,
    pub split_sizes: Option<(usize, usize)>,
    pub pretrain_final: Option<LossValues>,
    pub final_lower: Option<LossValues>,
    pub final_upper: Option<LossValues>,
    pub pretrain_report: Option<&'a ApReport>,
    pub final_report: Option<&'a ApReport>,
    pub divergence: Option<Divergence>,
    pub detector_sha256: String,
    pub segmenter_sha256: String,
    pub wall_seconds: f64,
    pub config: &'a RunConfig,
}
