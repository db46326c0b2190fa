use bloinst_autodiff::{AdError, Tape, Tensor, Var};

use super::TrainError;
use crate::data::{Dataset, Instance};
use crate::losses::{total_loss, FocalParams, LossValues, LossWeights};
use crate::models::{Detector, ModelConfig, ModelError, Segmenter, SegmenterParams, TrainableSet};
use crate::params::ParamSet;

/// Which parameter set gradients are requested for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrt {
    Neither,
    Theta,
    Phi,
    Both,
}

impl Wrt {
    fn theta(self) -> bool {
        matches!(self, Wrt::Theta | Wrt::Both)
    }

    fn phi(self) -> bool {
        matches!(self, Wrt::Phi | Wrt::Both)
    }
}

/// Loss values and requested gradients at one point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub losses: LossValues,
    pub grad_theta: Option<ParamSet>,
    pub grad_phi: Option<ParamSet>,
}

/// A scalar objective of segmenter parameters `theta` and detector
/// parameters `phi` over a batch of sample positions.
pub trait Objective {
    fn evaluate(
        &self,
        theta: &ParamSet,
        phi: &ParamSet,
        batch: &[usize],
        wrt: Wrt,
    ) -> Result<Evaluation, TrainError>;
}

/// Networks, frozen weights and one dataset with its cached encoder features.
pub struct ModelContext<'d> {
    pub detector: Detector,
    pub segmenter: Segmenter,
    pub frozen: ParamSet,
    pub data: &'d Dataset,
    /// `[F·F, channels]` features per sample when the encoder is frozen.
    features: Option<Vec<Tensor>>,
}

impl<'d> ModelContext<'d> {
    pub fn new(
        cfg: &ModelConfig,
        frozen: &ParamSet,
        data: &'d Dataset,
    ) -> Result<Self, ModelError> {
        let detector = Detector::new(cfg)?;
        let segmenter = Segmenter::new(cfg)?;
        let features = match cfg.trainable {
            TrainableSet::All => None,
            TrainableSet::DecoderLora => {
                let params = SegmenterParams {
                    frozen: frozen.clone(),
                    trainable: ParamSet::new(),
                };
                Some(
                    data.samples
                        .iter()
                        .map(|s| segmenter.encode(&s.image, &params))
                        .collect::<Result<_, _>>()?,
                )
            }
        };
        Ok(Self {
            detector,
            segmenter,
            frozen: frozen.clone(),
            data,
            features,
        })
    }

    pub fn cached_features(&self, index: usize) -> Option<&Tensor> {
        self.features.as_ref().map(|f| &f[index])
    }

    /// `[N, C, S, S]` stack of the batch images.
    pub fn stack_images(&self, batch: &[usize]) -> Tensor {
        let first = self.data.samples[batch[0]].image.shape().to_vec();
        let mut shape = vec![batch.len()];
        shape.extend_from_slice(&first);
        let data = batch
            .iter()
            .flat_map(|&i| self.data.samples[i].image.data().iter().copied())
            .collect();
        Tensor::new(shape, data).expect("images share one shape")
    }
}

/// The weighted objective of both networks on a dataset.
pub struct InstanceObjective<'c, 'd> {
    pub ctx: &'c ModelContext<'d>,
    pub weights: LossWeights,
    pub focal: FocalParams,
}

fn model_to_ad(e: ModelError) -> AdError {
    match e {
        ModelError::Tensor(t) => t,
        other => AdError::InvalidAttr {
            op: "segmenter",
            msg: other.to_string(),
        },
    }
}

/// Pins a segmentation callback to the lifetime of `tape`.
fn on_tape<'t, F>(_: &'t Tape, f: F) -> F
where
    F: FnMut(usize, Var<'t>) -> Result<Var<'t>, AdError>,
{
    f
}

impl Objective for InstanceObjective<'_, '_> {
    fn evaluate(
        &self,
        theta: &ParamSet,
        phi: &ParamSet,
        batch: &[usize],
        wrt: Wrt,
    ) -> Result<Evaluation, TrainError> {
        let ctx = self.ctx;
        let tape = Tape::new();
        let phi_b = phi.bind(&tape, wrt.phi());
        let theta_b = theta.bind(&tape, wrt.theta());
        let seg_b = ctx.frozen.bind(&tape, false).merged(theta_b.clone());

        let images = tape.constant(ctx.stack_images(batch));
        let raw = ctx.detector.forward(images, &phi_b)?;
        let out = ctx.detector.outputs(raw)?;
        let gts: Vec<&[Instance]> = batch
            .iter()
            .map(|&i| ctx.data.samples[i].instances.as_slice())
            .collect();

        let mut feats: Vec<Option<Var>> = vec![None; batch.len()];
        let mut segment = on_tape(&tape, |img: usize, prompt| {
            let f = match feats[img] {
                Some(f) => f,
                None => {
                    let sample = batch[img];
                    let f = match ctx.cached_features(sample) {
                        Some(t) => tape.constant(t.clone()),
                        None => ctx
                            .segmenter
                            .encode_var(
                                tape.constant(ctx.data.samples[sample].image.clone()),
                                &seg_b,
                            )
                            .map_err(model_to_ad)?,
                    };
                    feats[img] = Some(f);
                    f
                }
            };
            ctx.segmenter
                .forward(f, prompt, &seg_b)
                .map_err(model_to_ad)
        });
        let seg_fn = (self.weights.lambda_seg != 0.0).then_some(&mut segment as &mut _);
        let loss = total_loss(&out, &gts, &self.weights, &self.focal, seg_fn)?;
        let losses = loss.values();
        if !losses.is_finite() {
            return Err(TrainError::NonFinite(format!("loss {losses:?}")));
        }
        let (mut grad_theta, mut grad_phi) = (None, None);
        if wrt != Wrt::Neither {
            let grads = tape.backward(loss.total)?;
            if wrt.theta() {
                grad_theta = Some(theta_b.gradients(&grads));
            }
            if wrt.phi() {
                grad_phi = Some(phi_b.gradients(&grads));
            }
        }
        Ok(Evaluation {
            losses,
            grad_theta,
            grad_phi,
        })
    }
}
