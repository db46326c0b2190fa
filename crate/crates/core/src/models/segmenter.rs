use bloinst_autodiff::{Tape, Tensor, Var};

use super::{he, lora_linear_rows, normal_tensor, ModelConfig, ModelError, TrainableSet};
use crate::params::{Bound, ParamSet};
use crate::rng;

/// Seed of the frozen encoder and decoder base. These weights stand in for
/// a pretrained backbone, so they are identical across every run.
pub const FROZEN_SEED: u64 = 0x5E_ED0F_F20E;

/// Adapted linear maps, as `(lora prefix, frozen weight, frozen bias)`.
const ADAPTED: [(&str, &str, &str); 2] =
    [("lora1", "dec.w1", "dec.b1"), ("lora2", "dec.w2", "dec.b2")];

/// Segmenter weights split by whether they receive gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterParams {
    pub frozen: ParamSet,
    pub trainable: ParamSet,
}

impl SegmenterParams {
    /// Both partitions in one set.
    pub fn all(&self) -> ParamSet {
        self.frozen
            .iter()
            .chain(self.trainable.iter())
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    /// Moves entries between partitions to match `cfg`.
    pub fn partitioned(all: ParamSet, cfg: &ModelConfig) -> Self {
        let mut frozen = ParamSet::new();
        let mut trainable = ParamSet::new();
        for (k, v) in all.iter() {
            if is_trainable(k, cfg) {
                trainable.insert(k, v.clone());
            } else {
                frozen.insert(k, v.clone());
            }
        }
        Self { frozen, trainable }
    }

    /// Trainable scalars in one LoRA pair, `None` if the pair is not trainable.
    pub fn lora_count(&self, prefix: &str) -> Option<usize> {
        let a = self.trainable.get(&format!("{prefix}.a"))?;
        let b = self.trainable.get(&format!("{prefix}.b"))?;
        Some(a.len() + b.len())
    }
}

fn is_trainable(name: &str, cfg: &ModelConfig) -> bool {
    match cfg.trainable {
        TrainableSet::All => true,
        TrainableSet::DecoderLora => {
            name.starts_with("lora")
                || (cfg.train_heads && (name.starts_with("prompt.") || name.starts_with("head.")))
        }
    }
}

fn encoder_layers(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let downs = cfg.encoder_stride.trailing_zeros() as usize;
    let mut cin = cfg.channels;
    (0..downs)
        .map(|_| {
            let l = (cin, cfg.encoder_channels);
            cin = cfg.encoder_channels;
            l
        })
        .collect()
}

fn token_width(cfg: &ModelConfig) -> usize {
    cfg.encoder_channels + 3 + cfg.prompt_dim
}

/// Frozen weights come from [`FROZEN_SEED`]; adapters, prompt embedding and
/// head from `seed`. LoRA `B` factors start at zero.
pub fn init_segmenter(cfg: &ModelConfig, seed: u64) -> SegmenterParams {
    let mut frozen_rng = rng::stream(FROZEN_SEED, 0xE4C);
    let mut rng = rng::stream(seed, 0x5E6);
    let mut p = ParamSet::new();
    for (i, (cin, cout)) in encoder_layers(cfg).into_iter().enumerate() {
        p.insert(
            format!("enc.conv{i}.w"),
            he(&mut frozen_rng, &[cout, cin, 3, 3], cin * 9),
        );
        p.insert(
            format!("enc.conv{i}.b"),
            normal_tensor(&mut frozen_rng, &[cout], 0.1),
        );
    }
    let (d, h, r) = (token_width(cfg), cfg.decoder_hidden, cfg.lora_rank);
    p.insert("dec.w1", he(&mut frozen_rng, &[h, d], d));
    p.insert("dec.b1", normal_tensor(&mut frozen_rng, &[h], 0.1));
    p.insert("dec.w2", he(&mut frozen_rng, &[h, h], h));
    p.insert("dec.b2", normal_tensor(&mut frozen_rng, &[h], 0.1));

    p.insert(
        "lora1.a",
        normal_tensor(&mut rng, &[r, d], 1.0 / (d as f64).sqrt()),
    );
    p.insert("lora1.b", Tensor::zeros(&[h, r]));
    p.insert(
        "lora2.a",
        normal_tensor(&mut rng, &[r, h], 1.0 / (h as f64).sqrt()),
    );
    p.insert("lora2.b", Tensor::zeros(&[h, r]));
    p.insert("prompt.w", he(&mut rng, &[cfg.prompt_dim, 4], 4));
    p.insert("prompt.b", Tensor::zeros(&[cfg.prompt_dim]));
    p.insert("head.w", normal_tensor(&mut rng, &[1, h], 0.1));
    p.insert("head.b", Tensor::zeros(&[1]));
    p.insert("head.box_gain", Tensor::from_vec(vec![cfg.box_prior_gain]));
    SegmenterParams::partitioned(p, cfg)
}

fn get<'t>(b: &Bound<'t>, name: &str) -> Result<Var<'t>, ModelError> {
    b.get(name)
        .ok_or_else(|| ModelError::MissingParam(name.into()))
}

/// Box-prompted mask decoder over frozen convolutional features.
///
/// Each feature cell becomes a token holding its features, its position
/// relative to the prompt box, a soft inside-the-box indicator and an
/// embedding of the normalised box corners. Two LoRA-adapted linear maps and
/// a linear head score the tokens; the low-resolution logits are bilinearly
/// upsampled and added to a learned multiple of a full-resolution soft box
/// indicator.
#[derive(Clone, Debug)]
pub struct Segmenter {
    cfg: ModelConfig,
    /// `[S, F]` bilinear upsampling matrix.
    upsample: Tensor,
    /// `[L, 1]` token centres in pixels.
    token_x: Tensor,
    token_y: Tensor,
    /// `[1, S]` pixel centres.
    pixel_centres: Tensor,
}

fn bilinear_matrix(out: usize, inp: usize) -> Tensor {
    let ratio = inp as f64 / out as f64;
    let mut m = Tensor::zeros(&[out, inp]);
    for i in 0..out {
        let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(inp - 1);
        let f = src - lo as f64;
        m.data_mut()[i * inp + lo] += 1.0 - f;
        m.data_mut()[i * inp + hi] += f;
    }
    m
}

impl Segmenter {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (s, f) = (cfg.image_size, cfg.feature_size());
        let step = cfg.encoder_stride as f64;
        let l = f * f;
        Ok(Self {
            cfg: cfg.clone(),
            upsample: bilinear_matrix(s, f),
            token_x: Tensor::from_fn(&[l, 1], |i| ((i % f) as f64 + 0.5) * step),
            token_y: Tensor::from_fn(&[l, 1], |i| ((i / f) as f64 + 0.5) * step),
            pixel_centres: Tensor::from_fn(&[1, s], |i| i as f64 + 0.5),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// `[C, S, S]` image to `[F·F, channels]` feature tokens on the tape.
    pub fn encode_var<'t>(&self, image: Var<'t>, theta: &Bound<'t>) -> Result<Var<'t>, ModelError> {
        let shape = image.shape();
        let s = self.cfg.image_size;
        if shape != [self.cfg.channels, s, s] {
            return Err(bloinst_autodiff::AdError::ShapeMismatch {
                op: "encode",
                lhs: shape,
                rhs: vec![self.cfg.channels, s, s],
            }
            .into());
        }
        let mut x = image.reshape(&[1, self.cfg.channels, s, s])?;
        for i in 0..encoder_layers(&self.cfg).len() {
            let w = get(theta, &format!("enc.conv{i}.w"))?;
            let b = get(theta, &format!("enc.conv{i}.b"))?;
            x = x.conv2d(w, Some(b), 2, 1)?.relu();
        }
        let f = self.cfg.feature_size();
        Ok(x.reshape(&[self.cfg.encoder_channels, f * f])?
            .transpose()?)
    }

    /// Frozen-encoder features as a plain tensor; no tape outlives the call.
    pub fn encode(&self, image: &Tensor, params: &SegmenterParams) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let bound = params.all().bind(&tape, false);
        Ok(self
            .encode_var(tape.constant(image.clone()), &bound)?
            .to_tensor())
    }

    fn soft_inside_1d<'t>(
        &self,
        coords: Var<'t>,
        lo: Var<'t>,
        hi: Var<'t>,
    ) -> Result<Var<'t>, ModelError> {
        let k = self.cfg.box_sharpness;
        let shape = coords.shape();
        let lo = lo.broadcast_to(&shape)?;
        let hi = hi.broadcast_to(&shape)?;
        let a = coords.sub(lo)?.scale(k).sigmoid();
        let b = hi.sub(coords)?.scale(k).sigmoid();
        Ok(a.mul(b)?)
    }

    /// `[F·F, channels]` features and a `[4]` xyxy prompt to `[S, S]` mask logits.
    pub fn forward<'t>(
        &self,
        features: Var<'t>,
        prompt: Var<'t>,
        theta: &Bound<'t>,
    ) -> Result<Var<'t>, ModelError> {
        let tape = prompt.tape();
        let s = self.cfg.image_size;
        let sf = s as f64;
        let f = self.cfg.feature_size();
        let l = f * f;
        if prompt.shape() != [4] || features.shape() != [l, self.cfg.encoder_channels] {
            return Err(bloinst_autodiff::AdError::ShapeMismatch {
                op: "segmenter_forward",
                lhs: features.shape(),
                rhs: prompt.shape(),
            }
            .into());
        }

        let b = prompt
            .maximum(tape.constant(Tensor::zeros(&[4])))?
            .minimum(tape.constant(Tensor::full(&[4], sf)))?;
        let x1 = b.slice(0, 0, 1)?.reshape(&[1, 1])?;
        let y1 = b.slice(0, 1, 2)?.reshape(&[1, 1])?;
        let x2 = b.slice(0, 2, 3)?.reshape(&[1, 1])?;
        let y2 = b.slice(0, 3, 4)?.reshape(&[1, 1])?;

        let pw = get(theta, "prompt.w")?;
        let p = self.cfg.prompt_dim;
        let embed = pw
            .matmul(b.scale(1.0 / sf).reshape(&[4, 1])?)?
            .add(get(theta, "prompt.b")?.reshape(&[p, 1])?)?
            .relu()
            .reshape(&[1, p])?
            .broadcast_to(&[l, p])?;

        // position relative to the box, ±1 on its edges
        let cx = x1.add(x2)?.scale(0.5);
        let cy = y1.add(y2)?.scale(0.5);
        let hw = x2.sub(x1)?.scale(0.5).add_scalar(1.0);
        let hh = y2.sub(y1)?.scale(0.5).add_scalar(1.0);
        let tx = tape.constant(self.token_x.clone());
        let ty = tape.constant(self.token_y.clone());
        let rel_x = tx
            .sub(cx.broadcast_to(&[l, 1])?)?
            .div(hw.broadcast_to(&[l, 1])?)?;
        let rel_y = ty
            .sub(cy.broadcast_to(&[l, 1])?)?
            .div(hh.broadcast_to(&[l, 1])?)?;
        let inside = self
            .soft_inside_1d(tx, x1, x2)?
            .mul(self.soft_inside_1d(ty, y1, y2)?)?;

        let tokens = Var::concat(&[features, rel_x, rel_y, inside, embed], 1)?;
        let scale = self.cfg.lora_scale;
        let mut h = tokens;
        for (lora, w, bias) in ADAPTED {
            h = lora_linear_rows(
                h,
                get(theta, w)?,
                get(theta, bias)?,
                get(theta, &format!("{lora}.a"))?,
                get(theta, &format!("{lora}.b"))?,
                scale,
            )?
            .relu();
        }
        let low = h
            .matmul(get(theta, "head.w")?.transpose()?)?
            .add(
                get(theta, "head.b")?
                    .reshape(&[1, 1])?
                    .broadcast_to(&[l, 1])?,
            )?
            .reshape(&[f, f])?;
        let up = tape.constant(self.upsample.clone());
        let dense = up.matmul(low)?.matmul(up.transpose()?)?;

        let px = tape.constant(self.pixel_centres.clone());
        let row_in = self.soft_inside_1d(px, x1, x2)?.broadcast_to(&[s, s])?;
        let col_in = self
            .soft_inside_1d(px, y1, y2)?
            .reshape(&[s, 1])?
            .broadcast_to(&[s, s])?;
        let box_prior = row_in.mul(col_in)?.scale(2.0).add_scalar(-1.0);
        let gain = get(theta, "head.box_gain")?
            .reshape(&[1, 1])?
            .broadcast_to(&[s, s])?;
        Ok(dense.add(box_prior.mul(gain)?)?)
    }
}
