//! Splitting, pretraining, the two update levels and the training loops.

mod config;
mod foundation;
mod objective;
mod predict;
mod split;
mod steps;
mod train;

use bloinst_autodiff::AdError;
use thiserror::Error;

use crate::eval::EvalError;
use crate::losses::LossError;
use crate::models::{ModelError, SegmenterParams};
use crate::params::ParamSet;

pub use config::{Order, Strategy, TrainConfig};
pub use foundation::{initial_segmenter, pretrained_base};
pub use objective::{Evaluation, InstanceObjective, ModelContext, Objective, Wrt};
pub use predict::{evaluate_model, predict_instances};
pub use split::{split_dataset, EpochSampler, SplitData};
pub use steps::{
    lower_step, second_order_hypergradient, upper_step_first_order, upper_step_second_order,
    Hypergradient, StepOutcome, HYPERGRAD_MIN_NORM,
};
pub use train::{
    pretrain_detector, run_strategy, train, train_separate, train_single_level, EvalPoint,
    Observer, Phase, StepEvent, TraceRow, TrainOutcome, TrainTrace,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("cannot split {n} samples at ratio {gamma} into two non-empty parts")]
    SplitTooSmall { n: usize, gamma: f64 },
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training diverged at iteration {iteration} during {phase}: {reason}")]
    Diverged {
        iteration: usize,
        phase: Phase,
        reason: String,
        /// Parameters from the last step that finished with finite values.
        last_good: Box<(ParamSet, SegmenterParams)>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] AdError),
}
