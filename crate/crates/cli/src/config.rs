//! Run configuration files and the flags that override them.

use std::fs;
use std::path::{Path, PathBuf};

use bloinst_core::data::{load_annotations, Dataset};
use bloinst_core::engine::{Strategy, TrainConfig};
use bloinst_core::models::TrainableSet;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";

/// Everything a training run or sweep reads besides its output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub data: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::BilevelFirst,
            data: None,
            test: None,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Writes the effective configuration as `config.json` under `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join(CONFIG_FILE), self)
    }

    pub fn training_data(&self) -> Result<Dataset, CliError> {
        let dir = self.data.as_ref().ok_or_else(|| {
            CliError::Usage("no training data: pass --data or set \"data\" in --config".into())
        })?;
        Ok(load_annotations(dir)?)
    }

    pub fn test_data(&self) -> Result<Option<Dataset>, CliError> {
        self.test
            .as_deref()
            .map(load_annotations)
            .transpose()
            .map_err(Into::into)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).ok_or_else(|| {
        let names: Vec<_> = Strategy::ALL.iter().map(|k| k.name()).collect();
        format!(
            "unknown strategy {s:?}; expected one of {}",
            names.join(", ")
        )
    })
}

fn parse_trainable(s: &str) -> Result<TrainableSet, String> {
    match s {
        "decoder-lora" => Ok(TrainableSet::DecoderLora),
        "all" => Ok(TrainableSet::All),
        _ => Err(format!(
            "unknown trainable set {s:?}; expected decoder-lora or all"
        )),
    }
}

/// Training flags shared by `train` and `ablate`. Each given flag replaces
/// the matching field of `--config` (or of the defaults).
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// JSON run configuration, as echoed into every output directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out dataset directory for evaluation.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Segmenter (lower level) learning rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Detector (upper level) learning rate.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Outer iterations.
    #[arg(long, visible_alias = "T")]
    pub iterations: Option<usize>,
    /// Split ratio |D1|/|D2|.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eps_scale: Option<f64>,
    #[arg(long)]
    pub pretrain_iters: Option<usize>,
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_lower: Option<usize>,
    #[arg(long)]
    pub batch_upper: Option<usize>,
    /// Decay both rates linearly to zero.
    #[arg(long)]
    pub lr_decay: Option<bool>,
    /// Evaluate on --test every N iterations (0: only at the end).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Objectness threshold for decoding detections.
    #[arg(long)]
    pub conf: Option<f64>,
    /// Box IoU above which NMS suppresses a detection.
    #[arg(long)]
    pub nms: Option<f64>,
    #[arg(long)]
    pub lambda_box: Option<f64>,
    #[arg(long)]
    pub lambda_obj: Option<f64>,
    #[arg(long)]
    pub lambda_cls: Option<f64>,
    #[arg(long)]
    pub lambda_seg: Option<f64>,
    #[arg(long)]
    pub focal_alpha: Option<f64>,
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    /// LoRA rank.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Segmenter weights that train: decoder-lora or all.
    #[arg(long, value_parser = parse_trainable)]
    pub trainable: Option<TrainableSet>,
    /// Keep prompt embedding and heads trainable next to the LoRA pairs.
    #[arg(long)]
    pub train_heads: Option<bool>,
    /// Steps of segmenter base pretraining (0: random frozen base).
    #[arg(long)]
    pub foundation_steps: Option<usize>,
}

fn set<T: Copy>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl TrainFlags {
    /// The configuration file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut run = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            run.data = Some(d.clone());
        }
        if let Some(t) = &self.test {
            run.test = Some(t.clone());
        }
        let t = &mut run.train;
        set(&mut t.alpha, self.alpha);
        set(&mut t.beta, self.beta);
        set(&mut t.iterations, self.iterations);
        set(&mut t.gamma_split, self.gamma);
        set(&mut t.eps_scale, self.eps_scale);
        set(&mut t.pretrain_iters, self.pretrain_iters);
        set(&mut t.pretrain_lr, self.pretrain_lr);
        set(&mut t.seed, self.seed);
        set(&mut t.batch_lower, self.batch_lower);
        set(&mut t.batch_upper, self.batch_upper);
        set(&mut t.lr_decay, self.lr_decay);
        set(&mut t.eval_every, self.eval_every);
        set(&mut t.conf_threshold, self.conf);
        set(&mut t.nms_iou, self.nms);
        set(&mut t.weights.lambda_box, self.lambda_box);
        set(&mut t.weights.lambda_obj, self.lambda_obj);
        set(&mut t.weights.lambda_cls, self.lambda_cls);
        set(&mut t.weights.lambda_seg, self.lambda_seg);
        set(&mut t.focal.alpha_bal, self.focal_alpha);
        set(&mut t.focal.gamma_mod, self.focal_gamma);
        set(&mut t.model.lora_rank, self.rank);
        set(&mut t.model.trainable, self.trainable);
        set(&mut t.model.train_heads, self.train_heads);
        set(&mut t.model.foundation_steps, self.foundation_steps);
        t.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(run)
    }
}
