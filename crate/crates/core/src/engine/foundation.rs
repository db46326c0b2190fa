//! Seed-independent pretraining of the segmenter's decoder base, prompt
//! embedding and head.
//!
//! The encoder stays at its random frozen values. Everything downstream of
//! it is fitted once, on a private synthetic corpus with jittered
//! ground-truth boxes as prompts, so that runs start from a segmenter that
//! already tolerates imprecise prompts. The result depends only on the
//! model configuration and is cached for the life of the process.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use bloinst_autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::TrainError;
use crate::data::{generate_shapes, ShapeKind};
use crate::geometry::BBox;
use crate::losses::masked_seg_bce;
use crate::models::{init_segmenter, ModelConfig, Segmenter, SegmenterParams, FROZEN_SEED};
use crate::params::ParamSet;
use crate::rng;

const CORPUS_SEED: u64 = 0xF00D;
const CORPUS_SIZE: usize = 256;
const IMAGES_PER_STEP: usize = 4;
/// Std of each prompt corner offset, as a fraction of the box side.
const PROMPT_JITTER: f64 = 0.15;
const LEARNING_RATE: f64 = 0.05;
const MOMENTUM: f64 = 0.9;

/// Entries fitted by the base pretraining.
fn is_fitted(name: &str) -> bool {
    !(name.starts_with("enc.") || name.starts_with("lora"))
}

fn cache() -> &'static Mutex<HashMap<String, ParamSet>> {
    static CACHE: OnceLock<Mutex<HashMap<String, ParamSet>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Segmenter parameters a run starts from: adapters drawn from `seed`, the
/// rest from the pretrained base (or the random frozen draw when
/// `foundation_steps` is 0).
pub fn initial_segmenter(cfg: &ModelConfig, seed: u64) -> Result<SegmenterParams, TrainError> {
    let mut all = init_segmenter(cfg, seed).all();
    if cfg.foundation_steps > 0 {
        for (k, v) in pretrained_base(cfg)?.iter() {
            all.insert(k, v.clone());
        }
    }
    Ok(SegmenterParams::partitioned(all, cfg))
}

/// The fitted entries after `cfg.foundation_steps` steps, computed once per
/// configuration.
pub fn pretrained_base(cfg: &ModelConfig) -> Result<ParamSet, TrainError> {
    // which entries a run trains does not change the fit
    let keyed = ModelConfig {
        trainable: Default::default(),
        train_heads: true,
        ..cfg.clone()
    };
    let key = serde_json::to_string(&keyed).expect("model config serializes");
    let mut cache = cache().lock().unwrap_or_else(|e| e.into_inner());
    if let Some(p) = cache.get(&key) {
        return Ok(p.clone());
    }
    let fitted = fit_base(cfg)?;
    cache.insert(key, fitted.clone());
    Ok(fitted)
}

fn jittered(b: &BBox, rng: &mut impl Rng, noise: &Normal<f64>) -> Tensor {
    let (w, h) = (b.0[2] - b.0[0], b.0[3] - b.0[1]);
    let scale = [w, h, w, h];
    Tensor::from_vec(
        (0..4)
            .map(|i| b.0[i] + noise.sample(rng) * scale[i])
            .collect(),
    )
}

fn fit_base(cfg: &ModelConfig) -> Result<ParamSet, TrainError> {
    cfg.validate()?;
    if cfg.channels != 1 {
        return Err(TrainError::Config(format!(
            "segmenter base pretraining needs single-channel images, not {}",
            cfg.channels
        )));
    }
    let kinds = &ShapeKind::ALL[..cfg.num_classes.min(ShapeKind::ALL.len())];
    let corpus = generate_shapes(CORPUS_SIZE, cfg.image_size, kinds, 3, CORPUS_SEED)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let seg = Segmenter::new(cfg)?;
    let (mut fitted, mut fixed) = (ParamSet::new(), ParamSet::new());
    for (k, v) in init_segmenter(cfg, FROZEN_SEED).all().iter() {
        if is_fitted(k) {
            fitted.insert(k, v.clone());
        } else {
            fixed.insert(k, v.clone());
        }
    }
    let fixed_params = SegmenterParams {
        frozen: fixed.clone(),
        trainable: ParamSet::new(),
    };
    let features = corpus
        .samples
        .iter()
        .map(|s| seg.encode(&s.image, &fixed_params))
        .collect::<Result<Vec<_>, _>>()?;

    let s = cfg.image_size as f64;
    let whole = BBox([0.0, 0.0, s, s]);
    let noise = Normal::new(0.0, PROMPT_JITTER).expect("valid normal");
    let mut rng = rng::stream(CORPUS_SEED, rng::tag("foundation"));
    let mut velocity = fitted.zeros_like();
    for _ in 0..cfg.foundation_steps {
        let tape = Tape::new();
        let train_b = fitted.bind(&tape, true);
        let all_b = fixed.bind(&tape, false).merged(train_b.clone());
        let mut terms = Vec::new();
        for _ in 0..IMAGES_PER_STEP {
            let i = rng.gen_range(0..corpus.len());
            let f = tape.constant(features[i].clone());
            for inst in &corpus.samples[i].instances {
                let prompt = tape.constant(jittered(&inst.bbox, &mut rng, &noise));
                let logits = seg.forward(f, prompt, &all_b)?;
                let target = Tensor::new(
                    vec![inst.mask.height(), inst.mask.width()],
                    inst.mask.to_f64(),
                )?;
                terms.push(masked_seg_bce(logits, &target, &whole)?.reshape(&[1])?);
            }
        }
        let loss = Var::concat(&terms, 0)?.mean();
        let grad = train_b.gradients(&tape.backward(loss)?);
        velocity = velocity.map(|t| t.map(|x| x * MOMENTUM));
        velocity.axpy(1.0, &grad);
        fitted = fitted.descend(LEARNING_RATE, &velocity);
    }
    if !fitted.all_finite() {
        return Err(TrainError::NonFinite("segmenter base pretraining".into()));
    }
    Ok(fitted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_is_seed_invariant_and_zero_steps_is_random_init() {
        let cfg = ModelConfig {
            foundation_steps: 3,
            ..ModelConfig::default()
        };
        let a = initial_segmenter(&cfg, 1).unwrap();
        let b = initial_segmenter(&cfg, 2).unwrap();
        assert_eq!(a.frozen, b.frozen);
        assert_eq!(a.trainable.get("head.w"), b.trainable.get("head.w"));
        assert_ne!(a.trainable.get("lora1.a"), b.trainable.get("lora1.a"));
        assert!(a
            .trainable
            .get("lora1.b")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));

        let raw = ModelConfig {
            foundation_steps: 0,
            ..ModelConfig::default()
        };
        assert_eq!(initial_segmenter(&raw, 5).unwrap(), init_segmenter(&raw, 5));
    }
}
