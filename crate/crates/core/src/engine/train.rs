use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::foundation::initial_segmenter;
use super::{
    evaluate_model, lower_step, split_dataset, upper_step_first_order, upper_step_second_order,
    EpochSampler, InstanceObjective, ModelContext, Objective, Order, Strategy, TrainConfig,
    TrainError, Wrt,
};
use crate::data::Dataset;
use crate::eval::ApReport;
use crate::losses::{LossError, LossValues, LossWeights};
use crate::models::{init_detector, SegmenterParams};
use crate::params::ParamSet;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Lower,
    Upper,
    Joint,
    DetectorStage,
    SegmenterStage,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Pretrain => "pretrain",
            Phase::Lower => "lower step",
            Phase::Upper => "upper step",
            Phase::Joint => "joint step",
            Phase::DetectorStage => "detector stage",
            Phase::SegmenterStage => "segmenter stage",
        };
        f.write_str(s)
    }
}

/// Parameter state right after an update.
pub struct StepEvent<'a> {
    pub iteration: usize,
    pub phase: Phase,
    pub detector: &'a ParamSet,
    pub trainable: &'a ParamSet,
    pub frozen: &'a ParamSet,
}

pub type Observer<'a> = dyn FnMut(&StepEvent<'_>) + 'a;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
}

impl From<&ApReport> for EvalPoint {
    fn from(r: &ApReport) -> Self {
        Self {
            map: r.map,
            ap50: r.ap50,
            ap75: r.ap75,
        }
    }
}

/// One outer iteration. Joint steps report the same loss on both levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lower: Option<LossValues>,
    pub upper: Option<LossValues>,
    pub hyper_skipped: bool,
    pub eval: Option<EvalPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub strategy: Strategy,
    /// Samples driving the lower and upper levels.
    pub split_sizes: (usize, usize),
    pub pretrain: Vec<LossValues>,
    pub rows: Vec<TraceRow>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub detector: ParamSet,
    pub segmenter: SegmenterParams,
    pub trace: TrainTrace,
    pub pretrain_report: Option<ApReport>,
    pub final_report: Option<ApReport>,
}

struct State<'d, 'o, 'f> {
    cfg: &'d TrainConfig,
    train: ModelContext<'d>,
    test: Option<ModelContext<'d>>,
    phi: ParamSet,
    seg: SegmenterParams,
    observer: Option<&'o mut Observer<'f>>,
    started: Instant,
}

impl<'d, 'o, 'f> State<'d, 'o, 'f> {
    fn new(
        cfg: &'d TrainConfig,
        data: &'d Dataset,
        test: Option<&'d Dataset>,
        observer: Option<&'o mut Observer<'f>>,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        for d in std::iter::once(data).chain(test) {
            if d.classes.len() != cfg.model.num_classes {
                return Err(TrainError::Config(format!(
                    "dataset has {} classes, model expects {}",
                    d.classes.len(),
                    cfg.model.num_classes
                )));
            }
        }
        let seg = initial_segmenter(&cfg.model, rng::derive(cfg.seed, rng::tag("segmenter")))?;
        let phi = init_detector(&cfg.model, rng::derive(cfg.seed, rng::tag("detector")));
        let train = ModelContext::new(&cfg.model, &seg.frozen, data)?;
        let test = test
            .map(|t| ModelContext::new(&cfg.model, &seg.frozen, t))
            .transpose()?;
        Ok(Self {
            cfg,
            train,
            test,
            phi,
            seg,
            observer,
            started: Instant::now(),
        })
    }

    fn objective(&self, weights: LossWeights) -> InstanceObjective<'_, 'd> {
        InstanceObjective {
            ctx: &self.train,
            weights,
            focal: self.cfg.focal,
        }
    }

    fn notify(&mut self, iteration: usize, phase: Phase) {
        if let Some(obs) = self.observer.as_mut() {
            obs(&StepEvent {
                iteration,
                phase,
                detector: &self.phi,
                trainable: &self.seg.trainable,
                frozen: &self.seg.frozen,
            });
        }
    }

    fn diverged(&self, iteration: usize, phase: Phase, e: TrainError) -> TrainError {
        // collapsed predicted boxes surface as loss errors
        let reason = match e {
            TrainError::NonFinite(reason) => reason,
            TrainError::Loss(l @ (LossError::DegenerateBox(_) | LossError::EmptyCrop(..))) => {
                l.to_string()
            }
            other => return other,
        };
        TrainError::Diverged {
            iteration,
            phase,
            reason,
            last_good: Box::new((self.phi.clone(), self.seg.clone())),
        }
    }

    fn evaluate(&self) -> Result<Option<ApReport>, TrainError> {
        self.test
            .as_ref()
            .map(|ctx| {
                evaluate_model(
                    ctx,
                    &self.phi,
                    &self.seg.trainable,
                    self.cfg.conf_threshold,
                    self.cfg.nms_iou,
                )
            })
            .transpose()
    }

    fn periodic_eval(&self, iteration: usize) -> Result<Option<EvalPoint>, TrainError> {
        let every = self.cfg.eval_every;
        if every > 0 && (iteration + 1).is_multiple_of(every) && iteration + 1 < self.cfg.iterations
        {
            Ok(self.evaluate()?.as_ref().map(EvalPoint::from))
        } else {
            Ok(None)
        }
    }

    fn pretrain(&mut self) -> Result<(Vec<LossValues>, Option<ApReport>), TrainError> {
        let all: Vec<usize> = (0..self.train.data.len()).collect();
        let mut sampler = EpochSampler::new(all, rng::derive(self.cfg.seed, rng::tag("pretrain")));
        let batch = self.cfg.batch_lower + self.cfg.batch_upper;
        let mut losses = Vec::with_capacity(self.cfg.pretrain_iters);
        for it in 0..self.cfg.pretrain_iters {
            let b = sampler.next_batch(batch);
            let step = {
                let obj = self.objective(self.cfg.weights.detection_only());
                upper_step_first_order(
                    &obj,
                    &self.seg.trainable,
                    &self.phi,
                    &b,
                    self.cfg.pretrain_lr,
                )
            }
            .map_err(|e| self.diverged(it, Phase::Pretrain, e))?;
            self.phi = step.params;
            losses.push(step.losses);
            self.notify(it, Phase::Pretrain);
        }
        Ok((losses, self.evaluate()?))
    }

    fn finish(
        self,
        strategy: Strategy,
        split_sizes: (usize, usize),
        pretrain: (Vec<LossValues>, Option<ApReport>),
        rows: Vec<TraceRow>,
    ) -> Result<TrainOutcome, TrainError> {
        let final_report = self.evaluate()?;
        let mut rows = rows;
        if let (Some(r), Some(last)) = (&final_report, rows.last_mut()) {
            last.eval = Some(r.into());
        }
        Ok(TrainOutcome {
            trace: TrainTrace {
                strategy,
                split_sizes,
                pretrain: pretrain.0,
                rows,
                wall_seconds: self.started.elapsed().as_secs_f64(),
            },
            detector: self.phi,
            segmenter: self.seg,
            pretrain_report: pretrain.1,
            final_report,
        })
    }
}

/// `pretrain_iters` plain gradient steps on the detection terms only, with
/// batches drawn from the whole of `ctx`'s dataset.
pub fn pretrain_detector(
    ctx: &ModelContext<'_>,
    phi: &ParamSet,
    theta: &ParamSet,
    cfg: &TrainConfig,
) -> Result<(ParamSet, Vec<LossValues>), TrainError> {
    let obj = InstanceObjective {
        ctx,
        weights: cfg.weights.detection_only(),
        focal: cfg.focal,
    };
    let all: Vec<usize> = (0..ctx.data.len()).collect();
    let mut sampler = EpochSampler::new(all, rng::derive(cfg.seed, rng::tag("pretrain")));
    let mut phi = phi.clone();
    let mut losses = Vec::with_capacity(cfg.pretrain_iters);
    for _ in 0..cfg.pretrain_iters {
        let b = sampler.next_batch(cfg.batch_lower + cfg.batch_upper);
        let step = upper_step_first_order(&obj, theta, &phi, &b, cfg.pretrain_lr)?;
        phi = step.params;
        losses.push(step.losses);
    }
    Ok((phi, losses))
}

/// Bi-level training: split, pretrain the detector, then alternate one
/// lower (segmenter) step on a D1 batch with one upper (detector) step on a
/// D2 batch, using the hypergradient order in `cfg`.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    test: Option<&Dataset>,
    observer: Option<&mut Observer<'_>>,
) -> Result<TrainOutcome, TrainError> {
    let mut st = State::new(cfg, data, test, observer)?;
    let split = split_dataset(data.len(), cfg.gamma_split, cfg.seed)?;
    let sizes = (split.lower.len(), split.upper.len());
    let pre = st.pretrain()?;
    let mut lower_s = EpochSampler::new(split.lower, rng::derive(cfg.seed, rng::tag("lower")));
    let mut upper_s = EpochSampler::new(split.upper, rng::derive(cfg.seed, rng::tag("upper")));
    let mut rows = Vec::with_capacity(cfg.iterations);
    let t = cfg.iterations;
    for it in 0..t {
        let decay = cfg.decay(it, t);
        let (alpha, beta) = (cfg.alpha * decay, cfg.beta * decay);
        let b1 = lower_s.next_batch(cfg.batch_lower);
        let b2 = upper_s.next_batch(cfg.batch_upper);

        let low = {
            let obj = st.objective(cfg.weights);
            lower_step(&obj, &st.seg.trainable, &st.phi, &b1, alpha)
        }
        .map_err(|e| st.diverged(it, Phase::Lower, e))?;
        let theta = std::mem::replace(&mut st.seg.trainable, low.params);
        st.notify(it, Phase::Lower);

        let (up, skipped) = {
            let obj = st.objective(cfg.weights);
            match cfg.order {
                Order::First => upper_step_first_order(&obj, &st.seg.trainable, &st.phi, &b2, beta)
                    .map(|s| (s, false)),
                Order::Second => upper_step_second_order(
                    &obj,
                    &obj,
                    &theta,
                    &st.seg.trainable,
                    &st.phi,
                    &b1,
                    &b2,
                    alpha,
                    beta,
                    cfg.eps_scale,
                )
                .map(|(s, h)| (s, h.skipped())),
            }
        }
        .map_err(|e| st.diverged(it, Phase::Upper, e))?;
        st.phi = up.params;
        st.notify(it, Phase::Upper);

        rows.push(TraceRow {
            iteration: it,
            lower: Some(low.losses),
            upper: Some(up.losses),
            hyper_skipped: skipped,
            eval: st.periodic_eval(it)?,
        });
    }
    let strategy = match cfg.order {
        Order::First => Strategy::BilevelFirst,
        Order::Second => Strategy::BilevelSecond,
    };
    st.finish(strategy, sizes, pre, rows)
}

/// Baseline without a split: both networks step on the same batches of the
/// whole training set under the same objective.
pub fn train_single_level(
    cfg: &TrainConfig,
    data: &Dataset,
    test: Option<&Dataset>,
    observer: Option<&mut Observer<'_>>,
) -> Result<TrainOutcome, TrainError> {
    let mut st = State::new(cfg, data, test, observer)?;
    let pre = st.pretrain()?;
    let mut sampler = EpochSampler::new(
        (0..data.len()).collect(),
        rng::derive(cfg.seed, rng::tag("joint")),
    );
    let mut rows = Vec::with_capacity(cfg.iterations);
    let t = cfg.iterations;
    for it in 0..t {
        let decay = cfg.decay(it, t);
        let b = sampler.next_batch(cfg.batch_lower + cfg.batch_upper);
        let ev = {
            let obj = st.objective(cfg.weights);
            obj.evaluate(&st.seg.trainable, &st.phi, &b, Wrt::Both)
        }
        .map_err(|e| st.diverged(it, Phase::Joint, e))?;
        let theta = st.seg.trainable.descend(
            cfg.alpha * decay,
            ev.grad_theta.as_ref().expect("theta gradient"),
        );
        let phi = st.phi.descend(
            cfg.beta * decay,
            ev.grad_phi.as_ref().expect("phi gradient"),
        );
        if !theta.all_finite() || !phi.all_finite() {
            return Err(st.diverged(it, Phase::Joint, TrainError::NonFinite("parameters".into())));
        }
        st.seg.trainable = theta;
        st.phi = phi;
        st.notify(it, Phase::Joint);
        rows.push(TraceRow {
            iteration: it,
            lower: Some(ev.losses),
            upper: Some(ev.losses),
            hyper_skipped: false,
            eval: st.periodic_eval(it)?,
        });
    }
    st.finish(Strategy::SingleLevel, (data.len(), 0), pre, rows)
}

/// Sequential baseline: the first half of the iterations trains the detector
/// on the detection terms, the second half trains the segmenter on the mask
/// term with the detector frozen. Both stages use whole-set batches of
/// `batch_lower + batch_upper` samples.
pub fn train_separate(
    cfg: &TrainConfig,
    data: &Dataset,
    test: Option<&Dataset>,
    observer: Option<&mut Observer<'_>>,
) -> Result<TrainOutcome, TrainError> {
    let mut st = State::new(cfg, data, test, observer)?;
    let pre = st.pretrain()?;
    let mut sampler = EpochSampler::new(
        (0..data.len()).collect(),
        rng::derive(cfg.seed, rng::tag("separate")),
    );
    let t = cfg.iterations;
    let stage1 = t / 2;
    let batch = cfg.batch_lower + cfg.batch_upper;
    let mut rows = Vec::with_capacity(t);
    for it in 0..t {
        let decay = cfg.decay(it, t);
        let b = sampler.next_batch(batch);
        let row = if it < stage1 {
            let step = {
                let obj = st.objective(cfg.weights.detection_only());
                upper_step_first_order(&obj, &st.seg.trainable, &st.phi, &b, cfg.beta * decay)
            }
            .map_err(|e| st.diverged(it, Phase::DetectorStage, e))?;
            st.phi = step.params;
            st.notify(it, Phase::DetectorStage);
            TraceRow {
                iteration: it,
                lower: None,
                upper: Some(step.losses),
                hyper_skipped: false,
                eval: None,
            }
        } else {
            let step = {
                let obj = st.objective(cfg.weights.segmentation_only());
                lower_step(&obj, &st.seg.trainable, &st.phi, &b, cfg.alpha * decay)
            }
            .map_err(|e| st.diverged(it, Phase::SegmenterStage, e))?;
            st.seg.trainable = step.params;
            st.notify(it, Phase::SegmenterStage);
            TraceRow {
                iteration: it,
                lower: Some(step.losses),
                upper: None,
                hyper_skipped: false,
                eval: None,
            }
        };
        rows.push(TraceRow {
            eval: st.periodic_eval(it)?,
            ..row
        });
    }
    st.finish(Strategy::Separate, (data.len(), 0), pre, rows)
}

/// Dispatches to the pipeline named by `strategy`; bi-level strategies
/// override `cfg.order`.
pub fn run_strategy(
    strategy: Strategy,
    cfg: &TrainConfig,
    data: &Dataset,
    test: Option<&Dataset>,
    observer: Option<&mut Observer<'_>>,
) -> Result<TrainOutcome, TrainError> {
    match strategy {
        Strategy::BilevelFirst | Strategy::BilevelSecond => {
            let order = if strategy == Strategy::BilevelFirst {
                Order::First
            } else {
                Order::Second
            };
            let cfg = TrainConfig {
                order,
                ..cfg.clone()
            };
            train(&cfg, data, test, observer)
        }
        Strategy::SingleLevel => train_single_level(cfg, data, test, observer),
        Strategy::Separate => train_separate(cfg, data, test, observer),
    }
}
