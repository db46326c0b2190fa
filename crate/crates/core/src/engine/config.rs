use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::losses::{FocalParams, LossWeights};
use crate::models::ModelConfig;

/// Hypergradient used by the upper level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    #[default]
    First,
    Second,
}

/// Training pipelines compared in the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    BilevelFirst,
    BilevelSecond,
    SingleLevel,
    Separate,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::BilevelFirst,
        Strategy::BilevelSecond,
        Strategy::SingleLevel,
        Strategy::Separate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::BilevelFirst => "bilevel-first",
            Strategy::BilevelSecond => "bilevel-second",
            Strategy::SingleLevel => "single-level",
            Strategy::Separate => "separate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Segmenter (lower level) learning rate.
    pub alpha: f64,
    /// Detector (upper level) learning rate.
    pub beta: f64,
    pub weights: LossWeights,
    pub focal: FocalParams,
    /// Outer iterations.
    pub iterations: usize,
    /// `|D1| / |D2|`.
    pub gamma_split: f64,
    pub order: Order,
    /// Numerator of the finite-difference step `eps_scale / ‖∇‖₂`.
    pub eps_scale: f64,
    pub pretrain_iters: usize,
    pub pretrain_lr: f64,
    pub seed: u64,
    pub batch_lower: usize,
    pub batch_upper: usize,
    /// Linear decay of both rates to zero over the run.
    pub lr_decay: bool,
    /// Test-set evaluation period in iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 1e-3,
            weights: LossWeights::default(),
            focal: FocalParams::default(),
            iterations: 2000,
            gamma_split: 1.0,
            order: Order::First,
            eps_scale: 0.01,
            pretrain_iters: 100,
            pretrain_lr: 0.5,
            seed: 0,
            batch_lower: 4,
            batch_upper: 4,
            lr_decay: false,
            eval_every: 0,
            conf_threshold: 0.25,
            nms_iou: 0.5,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.into()));
        let rate_ok = |r: f64| r.is_finite() && r >= 0.0;
        if !rate_ok(self.alpha) || !rate_ok(self.beta) || !rate_ok(self.pretrain_lr) {
            return err("learning rates must be finite and non-negative");
        }
        if self.iterations == 0 {
            return err("iterations must be at least 1");
        }
        if !(self.gamma_split.is_finite() && self.gamma_split > 0.0) {
            return err("gamma_split must be positive");
        }
        if !(self.eps_scale.is_finite() && self.eps_scale > 0.0) {
            return err("eps_scale must be positive");
        }
        if self.batch_lower == 0 || self.batch_upper == 0 {
            return err("batch sizes must be positive");
        }
        let prob = |p: f64| p > 0.0 && p < 1.0;
        if !prob(self.conf_threshold) || !prob(self.nms_iou) {
            return err("confidence and NMS thresholds must lie in (0, 1)");
        }
        self.weights.validate()?;
        self.focal.validate()?;
        self.model.validate()?;
        Ok(())
    }

    /// Rate multiplier at `iteration` of `total`.
    pub(crate) fn decay(&self, iteration: usize, total: usize) -> f64 {
        if self.lr_decay {
            1.0 - iteration as f64 / total as f64
        } else {
            1.0
        }
    }
}
