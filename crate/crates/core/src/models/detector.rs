use bloinst_autodiff::{Tensor, Var};

use super::{he, normal_tensor, prior_logit, ModelConfig, ModelError};
use crate::losses::{GridGeometry, GridOutputs};
use crate::params::{Bound, ParamSet};
use crate::rng;

/// Initial objectness/class probability encoded in the head bias.
const HEAD_PRIOR: f64 = 0.01;

/// Single-scale anchor-free grid detector.
///
/// `log2(stride)` stride-2 3x3 convolutions reach the grid resolution, one
/// stride-1 3x3 convolution widens the receptive field, and a 1x1 head
/// emits `(tx, ty, tw, th, objectness, class logits…)` per cell. Boxes decode
/// as centre `(cell + σ(t)) · stride` and side `σ(t) · max_box_size`.
#[derive(Clone, Debug)]
pub struct Detector {
    cfg: ModelConfig,
}

fn conv_layers(cfg: &ModelConfig) -> Vec<(usize, usize, usize)> {
    // (in, out, stride)
    let downs = cfg.grid_stride.trailing_zeros() as usize;
    let w = cfg.detector_width;
    let mut layers = Vec::new();
    let mut cin = cfg.channels;
    for i in 0..downs {
        let cout = if i == 0 { w / 2 } else { w };
        layers.push((cin, cout, 2));
        cin = cout;
    }
    for _ in 0..cfg.detector_depth {
        layers.push((cin, w, 1));
        cin = w;
    }
    layers
}

/// Detector weights for `cfg`, drawn from a stream keyed by `seed`.
pub fn init_detector(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = rng::stream(seed, 0xDE7E);
    let mut p = ParamSet::new();
    for (i, (cin, cout, _)) in conv_layers(cfg).into_iter().enumerate() {
        p.insert(
            format!("conv{i}.w"),
            he(&mut rng, &[cout, cin, 3, 3], cin * 9),
        );
        p.insert(format!("conv{i}.b"), Tensor::zeros(&[cout]));
    }
    let h = cfg.head_channels();
    p.insert(
        "head.w",
        normal_tensor(&mut rng, &[h, cfg.detector_width, 1, 1], 0.01),
    );
    let mut bias = Tensor::zeros(&[h]);
    for c in 4..h {
        bias.data_mut()[c] = prior_logit(HEAD_PRIOR);
    }
    p.insert("head.b", bias);
    p
}

fn get<'t>(b: &Bound<'t>, name: &str) -> Result<Var<'t>, ModelError> {
    b.get(name)
        .ok_or_else(|| ModelError::MissingParam(name.into()))
}

impl Detector {
    pub fn new(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Self { cfg: cfg.clone() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn grid(&self) -> GridGeometry {
        GridGeometry {
            cells: self.cfg.grid_cells(),
            stride: self.cfg.grid_stride as f64,
        }
    }

    /// `[N, C, S, S]` images to raw `[N, 5+C, G, G]` cell outputs.
    pub fn forward<'t>(&self, images: Var<'t>, phi: &Bound<'t>) -> Result<Var<'t>, ModelError> {
        let shape = images.shape();
        let s = self.cfg.image_size;
        if shape.len() != 4 || shape[1] != self.cfg.channels || shape[2] != s || shape[3] != s {
            return Err(bloinst_autodiff::AdError::ShapeMismatch {
                op: "detector_forward",
                lhs: shape,
                rhs: vec![0, self.cfg.channels, s, s],
            }
            .into());
        }
        let mut x = images;
        for (i, (_, _, stride)) in conv_layers(&self.cfg).into_iter().enumerate() {
            let w = get(phi, &format!("conv{i}.w"))?;
            let b = get(phi, &format!("conv{i}.b"))?;
            x = x.conv2d(w, Some(b), stride, 1)?.relu();
        }
        Ok(x.conv2d(get(phi, "head.w")?, Some(get(phi, "head.b")?), 1, 0)?)
    }

    /// Splits raw outputs into decoded boxes, objectness and class logits.
    pub fn outputs<'t>(&self, raw: Var<'t>) -> Result<GridOutputs<'t>, ModelError> {
        let tape = raw.tape();
        let n = raw.shape()[0];
        let g = self.cfg.grid_cells();
        let cells = g * g;
        let h = self.cfg.head_channels();
        let flat = raw.reshape(&[n, h, cells])?;
        let ch = |c: usize| flat.slice(1, c, c + 1);
        let stride = self.cfg.grid_stride as f64;
        let max = self.cfg.max_box_size;

        let cols = tape.constant(Tensor::from_fn(&[n, 1, cells], |i| {
            ((i % cells) % g) as f64
        }));
        let rows = tape.constant(Tensor::from_fn(&[n, 1, cells], |i| {
            ((i % cells) / g) as f64
        }));
        let cx = cols.add(ch(0)?.sigmoid())?.scale(stride);
        let cy = rows.add(ch(1)?.sigmoid())?.scale(stride);
        let half_w = ch(2)?.sigmoid().scale(max / 2.0);
        let half_h = ch(3)?.sigmoid().scale(max / 2.0);
        let boxes = Var::concat(
            &[
                cx.sub(half_w)?,
                cy.sub(half_h)?,
                cx.add(half_w)?,
                cy.add(half_h)?,
            ],
            1,
        )?;
        Ok(GridOutputs {
            boxes,
            objectness: ch(4)?,
            class_logits: flat.slice(1, 5, h)?,
            grid: self.grid(),
        })
    }
}
