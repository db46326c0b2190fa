//! Acceptance criteria 1 to 10. Each prints one PASS/FAIL line; any hard
//! failure makes the binary exit non-zero. Criterion numbers given as
//! arguments select a subset.

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use bloinst_core::autodiff::{finite_diff_grad, log_sigmoid, relative_error, Tape, Tensor, Var};
use bloinst_core::data::{
    generate_shapes, load_annotations, load_checkpoint, save_annotations, save_checkpoint,
    Checkpoint, Dataset, Instance, ShapeKind,
};
use bloinst_core::engine::{
    lower_step, run_strategy, second_order_hypergradient, EvalPoint, Evaluation, Objective, Phase,
    StepEvent, Strategy, TrainConfig, TrainError, TrainOutcome, Wrt,
};
use bloinst_core::eval::{
    average_precision, evaluate, match_instances, overlap, IouThreshold, Overlap, PredictedInstance,
};
use bloinst_core::geometry::{BBox, Mask};
use bloinst_core::losses::{
    ciou_loss, ciou_loss_rows, focal_bce, masked_seg_bce, total_loss, FocalParams, LossValues,
    LossWeights, SegmentFn,
};
use bloinst_core::models::{init_segmenter, Detector, ModelConfig};
use bloinst_core::params::ParamSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-5;
/// Denominator floor of the relative error, so coordinates whose true
/// derivative is ~0 are compared absolutely.
const GRAD_FLOOR: f64 = 1e-3;
const GRAD_CASES: usize = 100;

const UNIT_TOL: f64 = 1e-9;
const BCE_TOL: f64 = 1e-12;

const HYPER_TOL: f64 = 1e-3;
const HYPER_CASES: usize = 50;
const HYPER_MAX_DIM: usize = 8;
const HYPER_EPS_SCALE: f64 = 0.01;
const CUBIC_CASES: usize = 20;

const SWITCH_STEPS: usize = 100;

const LORA_RANK: usize = 4;

const MATCH_CASES: usize = 500;
const AP_TOL: f64 = 1e-12;

const TREND_TRAIN: usize = 200;
const TREND_TEST: usize = 100;
const TREND_ITERS: usize = 2000;
const TREND_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TREND_TRAIN_SEED: u64 = 1000;
const TREND_TEST_SEED: u64 = 9000;
const GAMMAS: [f64; 3] = [0.25, 1.0, 4.0];

type Verdict = Result<String, String>;

#[derive(Clone, Copy, PartialEq)]
enum Gate {
    Hard,
    Soft,
}

struct Criterion {
    id: usize,
    name: &'static str,
    gate: Gate,
    run: fn() -> Verdict,
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria = [
        Criterion {
            id: 1,
            name: "autodiff gradients",
            gate: Gate::Hard,
            run: c1_gradients,
        },
        Criterion {
            id: 2,
            name: "loss unit values",
            gate: Gate::Hard,
            run: c2_unit_values,
        },
        Criterion {
            id: 3,
            name: "hypergradient oracle",
            gate: Gate::Hard,
            run: c3_hypergradient,
        },
        Criterion {
            id: 4,
            name: "first-order switch",
            gate: Gate::Hard,
            run: c4_first_order_switch,
        },
        Criterion {
            id: 5,
            name: "flow isolation and freezing",
            gate: Gate::Hard,
            run: c5_isolation,
        },
        Criterion {
            id: 6,
            name: "AP evaluator",
            gate: Gate::Hard,
            run: c6_evaluator,
        },
        Criterion {
            id: 7,
            name: "bilevel vs single-level",
            gate: Gate::Hard,
            run: c7_single_level,
        },
        Criterion {
            id: 8,
            name: "split-ratio sweep",
            gate: Gate::Soft,
            run: c8_split_ratio,
        },
        Criterion {
            id: 9,
            name: "bilevel vs separate",
            gate: Gate::Hard,
            run: c9_separate,
        },
        Criterion {
            id: 10,
            name: "determinism and persistence",
            gate: Gate::Hard,
            run: c10_determinism,
        },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut hard_failures = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match (&verdict, c.gate) {
            (Ok(d), Gate::Hard) => ("PASS", d),
            (Ok(d), Gate::Soft) => ("PASS (soft)", d),
            (Err(d), Gate::Hard) => {
                hard_failures += 1;
                ("FAIL", d)
            }
            (Err(d), Gate::Soft) => ("FAIL (soft)", d),
        };
        println!(
            "criterion {:>2} {:<28} {status:<11} [{secs:.1}s] {detail}",
            c.id, c.name
        );
    }
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn output_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).expect("create acceptance output directory");
    dir
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Magnitudes in [0.1, 2) with random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..2.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn rand_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..=3);
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
}

// ---------------------------------------------------------------- criterion 1

/// Largest relative error between tape gradients of `sum(build(inputs) ⊙ probe)`
/// and central differences, over every input coordinate.
fn gradcheck<F>(build: F, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let probe = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&vars).to_tensor();
        uniform(rng, out.shape(), -1.0, 1.0)
    };
    let scalar = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&vars).to_tensor();
        out.data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let root = build(&vars)
        .mul(tape.constant(probe.clone()))
        .unwrap()
        .sum();
    let grads = tape.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let numeric = finite_diff_grad(
            |x| {
                let mut xs = inputs.to_vec();
                xs[i] = x.clone();
                scalar(&xs)
            },
            &inputs[i],
            FD_STEP,
        );
        worst = worst.max(relative_error(grads.get(*v).unwrap(), &numeric, GRAD_FLOOR));
    }
    worst
}

type Build = for<'t> fn(&[Var<'t>]) -> Var<'t>;
type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor>;

fn same_shape_pair(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let s = rand_shape(rng);
    vec![uniform(rng, &s, -2.0, 2.0), uniform(rng, &s, -2.0, 2.0)]
}

fn one_tensor(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let s = rand_shape(rng);
    vec![uniform(rng, &s, -2.0, 2.0)]
}

fn matrix(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (m, n) = (rng.gen_range(1..=4), rng.gen_range(2..=4));
    vec![uniform(rng, &[m, n], -2.0, 2.0)]
}

fn separated_pair(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let s = rand_shape(rng);
    let a = uniform(rng, &s, -2.0, 2.0);
    let gap = away_from_zero(rng, &s);
    let b = Tensor::from_fn(&s, |i| a.data()[i] + gap.data()[i]);
    vec![a, b]
}

fn conv_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (n, c, o) = (
        rng.gen_range(1..=2),
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
    );
    let (h, w) = (rng.gen_range(4..=7), rng.gen_range(4..=7));
    vec![
        uniform(rng, &[n, c, h, w], -1.0, 1.0),
        uniform(rng, &[o, c, 3, 3], -1.0, 1.0),
        uniform(rng, &[o], -1.0, 1.0),
    ]
}

fn op_cases() -> Vec<(&'static str, Build, Inputs)> {
    vec![
        ("add", |v| v[0].add(v[1]).unwrap(), same_shape_pair),
        ("sub", |v| v[0].sub(v[1]).unwrap(), same_shape_pair),
        ("mul", |v| v[0].mul(v[1]).unwrap(), same_shape_pair),
        (
            "div",
            |v| v[0].div(v[1]).unwrap(),
            |r| {
                let s = rand_shape(r);
                vec![
                    uniform(r, &s, -2.0, 2.0),
                    away_from_zero(r, &s).map(|x| x + x.signum() * 0.4),
                ]
            },
        ),
        ("maximum", |v| v[0].maximum(v[1]).unwrap(), separated_pair),
        ("minimum", |v| v[0].minimum(v[1]).unwrap(), separated_pair),
        ("neg", |v| v[0].neg(), one_tensor),
        ("scale", |v| v[0].scale(-1.7), one_tensor),
        ("add_scalar", |v| v[0].add_scalar(0.3), one_tensor),
        ("square", |v| v[0].square(), one_tensor),
        ("exp", |v| v[0].exp(), one_tensor),
        (
            "relu",
            |v| v[0].relu(),
            |r| {
                let s = rand_shape(r);
                vec![away_from_zero(r, &s)]
            },
        ),
        (
            "sigmoid",
            |v| v[0].sigmoid(),
            |r| {
                let s = rand_shape(r);
                vec![uniform(r, &s, -6.0, 6.0)]
            },
        ),
        (
            "log_sigmoid",
            |v| v[0].log_sigmoid(),
            |r| {
                let s = rand_shape(r);
                vec![uniform(r, &s, -6.0, 6.0)]
            },
        ),
        ("atan", |v| v[0].atan(), one_tensor),
        ("sum", |v| v[0].sum(), one_tensor),
        ("mean", |v| v[0].mean(), one_tensor),
        (
            "matmul",
            |v| v[0].matmul(v[1]).unwrap(),
            |r| {
                let (m, k, n) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
                vec![
                    uniform(r, &[m, k], -2.0, 2.0),
                    uniform(r, &[k, n], -2.0, 2.0),
                ]
            },
        ),
        ("transpose", |v| v[0].transpose().unwrap(), matrix),
        (
            "conv2d stride 1",
            |v| v[0].conv2d(v[1], Some(v[2]), 1, 1).unwrap(),
            conv_inputs,
        ),
        (
            "conv2d stride 2",
            |v| v[0].conv2d(v[1], Some(v[2]), 2, 1).unwrap(),
            conv_inputs,
        ),
        (
            "conv2d no bias",
            |v| v[0].conv2d(v[1], None, 1, 0).unwrap(),
            conv_inputs,
        ),
        (
            "reshape",
            |v| {
                let s = v[0].shape();
                v[0].reshape(&[s[1], s[0]]).unwrap()
            },
            matrix,
        ),
        (
            "broadcast_to",
            |v| {
                let k = v[0].shape()[0];
                v[0].broadcast_to(&[2, k, 3]).unwrap()
            },
            |r| {
                let k = r.gen_range(1..=4);
                vec![uniform(r, &[k, 1], -2.0, 2.0)]
            },
        ),
        (
            "slice",
            |v| {
                let n = v[0].shape()[1];
                v[0].slice(1, 1, n).unwrap()
            },
            matrix,
        ),
        ("at", |v| v[0].at(1).unwrap(), matrix),
        (
            "concat",
            |v| Var::concat(&[v[0], v[1]], 1).unwrap(),
            |r| {
                let m = r.gen_range(1..=4);
                let (a, b) = (r.gen_range(1..=3), r.gen_range(1..=3));
                vec![
                    uniform(r, &[m, a], -2.0, 2.0),
                    uniform(r, &[m, b], -2.0, 2.0),
                ]
            },
        ),
    ]
}

/// `[n, 4]` xyxy boxes with sides in [2, 12), placed so pairs usually overlap.
fn random_boxes(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut v = Vec::with_capacity(4 * n);
    for _ in 0..n {
        let (x, y) = (rng.gen_range(0.0..16.0), rng.gen_range(0.0..16.0));
        let (w, h) = (rng.gen_range(2.0..12.0), rng.gen_range(2.0..12.0));
        v.extend_from_slice(&[x, y, x + w, y + h]);
    }
    Tensor::new(vec![n, 4], v).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        image_size: 32,
        grid_stride: 8,
        detector_width: 4,
        encoder_channels: 4,
        prompt_dim: 3,
        decoder_hidden: 6,
        lora_rank: 2,
        foundation_steps: 0,
        ..ModelConfig::default()
    }
}

/// Worst error of the assembled detection and mask objective with respect to
/// raw detector outputs. The mask callback is a smooth map of the prompt box
/// and the image, so the only non-smooth points left are the loss's own.
fn total_loss_case(rng: &mut ChaCha8Rng, case: u64) -> f64 {
    let cfg = small_model();
    let s = cfg.image_size;
    let data = generate_shapes(2, s, &ShapeKind::ALL, 3, 500 + case).unwrap();
    let det = Detector::new(&cfg).unwrap();
    let gts: Vec<&[Instance]> = data
        .samples
        .iter()
        .map(|x| x.instances.as_slice())
        .collect();
    let images: Vec<Tensor> = data.samples.iter().map(|x| x.image.clone()).collect();
    let g = cfg.grid_cells();
    let raw = uniform(rng, &[2, cfg.head_channels(), g, g], -2.0, 2.0);
    let mixing = uniform(rng, &[4, s * s], -0.1, 0.1);
    let weights = LossWeights::new(0.3, 0.7, 0.3, 0.7).unwrap();
    let focal = FocalParams::default();
    gradcheck(
        |v| {
            let tape = v[0].tape();
            let out = det.outputs(v[0]).unwrap();
            let mut segment: Box<SegmentFn<'_, '_>> = Box::new(|img, prompt| {
                let image = tape.constant(images[img].clone()).reshape(&[1, s * s])?;
                prompt
                    .reshape(&[1, 4])?
                    .matmul(tape.constant(mixing.clone()))?
                    .add(image)?
                    .atan()
                    .scale(3.0)
                    .reshape(&[s, s])
            });
            total_loss(&out, &gts, &weights, &focal, Some(&mut *segment))
                .unwrap()
                .total
        },
        &[raw],
        rng,
    )
}

fn c1_gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for (name, build, inputs) in op_cases() {
        let mut w: f64 = 0.0;
        for _ in 0..GRAD_CASES {
            let xs = inputs(&mut rng);
            w = w.max(gradcheck(build, &xs, &mut rng));
        }
        worst.push((name.to_string(), w));
    }

    let mut w: f64 = 0.0;
    for _ in 0..GRAD_CASES {
        let (p, g) = (random_boxes(&mut rng, 3), random_boxes(&mut rng, 3));
        w = w.max(gradcheck(
            |v| ciou_loss_rows(v[0], v[1]).unwrap(),
            &[p, g],
            &mut rng,
        ));
    }
    worst.push(("ciou_loss".into(), w));

    let mut w: f64 = 0.0;
    for _ in 0..GRAD_CASES {
        let gamma = if rng.gen_bool(0.2) {
            0.0
        } else {
            rng.gen_range(0.5..3.0)
        };
        let params = FocalParams::new(rng.gen_range(0.1..=1.0), gamma).unwrap();
        let targets = binary(&mut rng, &[4, 3]);
        let logits = uniform(&mut rng, &[4, 3], -4.0, 4.0);
        w = w.max(gradcheck(
            |v| focal_bce(v[0], &targets, &params).unwrap(),
            &[logits],
            &mut rng,
        ));
    }
    worst.push(("focal_bce".into(), w));

    let mut w: f64 = 0.0;
    for _ in 0..GRAD_CASES {
        let gt = binary(&mut rng, &[8, 8]);
        let x1 = rng.gen_range(-1.0..5.0);
        let y1 = rng.gen_range(-1.0..5.0);
        let b = BBox::new(
            x1,
            y1,
            x1 + rng.gen_range(1.0..4.0),
            y1 + rng.gen_range(1.0..4.0),
        );
        let logits = uniform(&mut rng, &[8, 8], -3.0, 3.0);
        w = w.max(gradcheck(
            |v| masked_seg_bce(v[0], &gt, &b).unwrap(),
            &[logits],
            &mut rng,
        ));
    }
    worst.push(("masked_seg_bce".into(), w));

    let mut w: f64 = 0.0;
    for case in 0..GRAD_CASES as u64 {
        w = w.max(total_loss_case(&mut rng, case));
    }
    worst.push(("total_loss".into(), w));

    let bad: Vec<String> = worst
        .iter()
        .filter(|(_, e)| e.is_nan() || *e > GRAD_TOL)
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    let max = worst.iter().map(|x| x.1).fold(0.0, f64::max);
    let summary = format!(
        "{} components x {GRAD_CASES} cases, worst relative error {max:.2e} (tol {GRAD_TOL:.0e})",
        worst.len()
    );
    if bad.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; over tolerance: {}", bad.join(", ")))
    }
}

// ---------------------------------------------------------------- criterion 2

fn c2_unit_values() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    // overlapping 2x2 squares offset by one: IoU 1/3, ρ²=1, c²=13, no aspect term
    let oracle_ciou = 1.0 - (1.0 / 3.0 - 1.0 / 13.0);
    let tape = Tape::new();
    let l = ciou_loss(
        tape.constant(Tensor::from_vec(vec![0.0, 0.0, 2.0, 2.0])),
        tape.constant(Tensor::from_vec(vec![1.0, 0.0, 3.0, 2.0])),
    )
    .unwrap()
    .item();
    let c_ok = (l - oracle_ciou).abs() <= UNIT_TOL && format!("{l:.6}") == "0.743590";
    ok &= c_ok;
    notes.push(format!("ciou {l:.9}"));

    // p_t = 0.9 at α=0.25, γ=2
    let oracle_focal = 0.25 * 0.01 * -(0.9f64.ln());
    let tape = Tape::new();
    let z = tape.constant(Tensor::from_vec(vec![9f64.ln()]));
    let f = focal_bce(
        z,
        &Tensor::from_vec(vec![1.0]),
        &FocalParams::new(0.25, 2.0).unwrap(),
    )
    .unwrap()
    .item();
    let f_ok = (f - oracle_focal).abs() <= UNIT_TOL && format!("{f:.3e}") == "2.634e-4";
    ok &= f_ok;
    notes.push(format!("focal {f:.6e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut bce_err: f64 = 0.0;
    for _ in 0..GRAD_CASES {
        let logits = uniform(&mut rng, &[5, 4], -8.0, 8.0);
        let targets = binary(&mut rng, &[5, 4]);
        let tape = Tape::new();
        let got = focal_bce(
            tape.constant(logits.clone()),
            &targets,
            &FocalParams::new(1.0, 0.0).unwrap(),
        )
        .unwrap()
        .item();
        let want = -logits
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| t * log_sigmoid(z) + (1.0 - t) * log_sigmoid(-z))
            .sum::<f64>()
            / logits.len() as f64;
        bce_err = bce_err.max((got - want).abs());
    }
    ok &= bce_err <= BCE_TOL;
    notes.push(format!("γ=0 BCE err {bce_err:.1e}"));

    let mut leaks = 0;
    let mut dead_inside = 0;
    for _ in 0..GRAD_CASES {
        let (h, w) = (9, 11);
        let x1 = rng.gen_range(0.0..6.0);
        let y1 = rng.gen_range(0.0..5.0);
        let b = BBox::new(
            x1,
            y1,
            x1 + rng.gen_range(0.5..4.0),
            y1 + rng.gen_range(0.5..3.0),
        );
        let tape = Tape::new();
        let logits = tape.param(uniform(&mut rng, &[h, w], -3.0, 3.0));
        let gt = binary(&mut rng, &[h, w]);
        let loss = masked_seg_bce(logits, &gt, &b).unwrap();
        let g = tape.backward(loss).unwrap().get(logits).unwrap().clone();
        // pixel (r, c) covers [c, c+1) x [r, r+1); it is inside when it meets the box
        for r in 0..h {
            for c in 0..w {
                let meets = (c as f64) < b.0[2]
                    && (c + 1) as f64 > b.0[0]
                    && (r as f64) < b.0[3]
                    && (r + 1) as f64 > b.0[1];
                let v = g.data()[r * w + c];
                if !meets && v != 0.0 {
                    leaks += 1;
                }
                if meets && v == 0.0 {
                    dead_inside += 1;
                }
            }
        }
    }
    ok &= leaks == 0 && dead_inside == 0;
    notes.push(format!(
        "out-of-box nonzero grads {leaks}, in-box zero grads {dead_inside}"
    ));
    check(ok, notes.join("; "))
}

// ---------------------------------------------------------------- criterion 3

const LOWER: usize = 1;
const UPPER: usize = 2;

/// Lower: ½‖θ − Mφ‖² + Σ κᵢθᵢ³φᵢ. Upper: ½‖θ − c‖² + ½ρ‖φ − e‖².
/// The batch tag picks the level.
struct ToyBilevel {
    n: usize,
    k: usize,
    /// `n × k`, row-major.
    m: Vec<f64>,
    kappa: Vec<f64>,
    target: Vec<f64>,
    rho: f64,
    anchor: Vec<f64>,
}

fn vec_param(v: Vec<f64>) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::from_vec(v));
    p
}

fn vec_of(p: &ParamSet) -> Vec<f64> {
    p.get("w").unwrap().data().to_vec()
}

impl ToyBilevel {
    fn random(rng: &mut ChaCha8Rng, cubic: bool) -> Self {
        let n = rng.gen_range(1..=HYPER_MAX_DIM);
        let k = if cubic {
            n
        } else {
            rng.gen_range(1..=HYPER_MAX_DIM)
        };
        Self {
            n,
            k,
            m: (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            kappa: (0..n)
                .map(|_| if cubic { rng.gen_range(-1.5..1.5) } else { 0.0 })
                .collect(),
            target: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            rho: rng.gen_range(0.0..1.0),
            anchor: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn m_phi(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.k).map(|j| self.m[i * self.k + j] * phi[j]).sum())
            .collect()
    }

    fn mt(&self, r: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|j| (0..self.n).map(|i| self.m[i * self.k + j] * r[i]).sum())
            .collect()
    }

    fn phi_at(&self, phi: &[f64], i: usize) -> f64 {
        if self.kappa[i] == 0.0 {
            0.0
        } else {
            phi[i]
        }
    }

    fn lower_grad_theta(&self, th: &[f64], ph: &[f64]) -> Vec<f64> {
        let mp = self.m_phi(ph);
        (0..self.n)
            .map(|i| th[i] - mp[i] + 3.0 * self.kappa[i] * th[i] * th[i] * self.phi_at(ph, i))
            .collect()
    }

    /// d/dφ of the upper loss at `θ' = θ − α∇θ L_lower(θ, φ)`, by hand.
    fn unrolled(&self, th: &[f64], ph: &[f64], alpha: f64) -> Vec<f64> {
        let g = self.lower_grad_theta(th, ph);
        let u: Vec<f64> = (0..self.n)
            .map(|i| th[i] - alpha * g[i] - self.target[i])
            .collect();
        // ∂θ'/∂φ = αM − α·diag(3κθ²)
        let mut out = self.mt(&u);
        for j in 0..self.k {
            out[j] *= alpha;
            if j < self.n {
                out[j] -= alpha * 3.0 * self.kappa[j] * th[j] * th[j] * u[j];
            }
            out[j] += self.rho * (ph[j] - self.anchor[j]);
        }
        out
    }
}

impl Objective for ToyBilevel {
    fn evaluate(
        &self,
        theta: &ParamSet,
        phi: &ParamSet,
        batch: &[usize],
        wrt: Wrt,
    ) -> Result<Evaluation, TrainError> {
        let (th, ph) = (vec_of(theta), vec_of(phi));
        let (loss, gt, gp) = match batch {
            [LOWER] => {
                let mp = self.m_phi(&ph);
                let r: Vec<f64> = (0..self.n).map(|i| th[i] - mp[i]).collect();
                let mut loss = 0.5 * r.iter().map(|x| x * x).sum::<f64>();
                let mut gp = self.mt(&r).iter().map(|x| -x).collect::<Vec<_>>();
                for i in 0..self.n {
                    if self.kappa[i] != 0.0 {
                        loss += self.kappa[i] * th[i].powi(3) * ph[i];
                        gp[i] += self.kappa[i] * th[i].powi(3);
                    }
                }
                (loss, self.lower_grad_theta(&th, &ph), gp)
            }
            [UPPER] => {
                let d: Vec<f64> = (0..self.n).map(|i| th[i] - self.target[i]).collect();
                let e: Vec<f64> = (0..self.k).map(|j| ph[j] - self.anchor[j]).collect();
                let loss = 0.5 * d.iter().map(|x| x * x).sum::<f64>()
                    + 0.5 * self.rho * e.iter().map(|x| x * x).sum::<f64>();
                (loss, d, e.iter().map(|x| self.rho * x).collect())
            }
            other => panic!("unknown level {other:?}"),
        };
        let want_theta = matches!(wrt, Wrt::Theta | Wrt::Both);
        let want_phi = matches!(wrt, Wrt::Phi | Wrt::Both);
        Ok(Evaluation {
            losses: LossValues {
                total: loss,
                ..LossValues::default()
            },
            grad_theta: want_theta.then(|| vec_param(gt)),
            grad_phi: want_phi.then(|| vec_param(gp)),
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Library finite-difference hypergradient for one toy instance.
fn library_hypergradient(
    toy: &ToyBilevel,
    th: &[f64],
    ph: &[f64],
    alpha: f64,
    eps_scale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (theta, phi) = (vec_param(th.to_vec()), vec_param(ph.to_vec()));
    let low = lower_step(toy, &theta, &phi, &[LOWER], alpha).unwrap();
    let h = second_order_hypergradient(
        toy,
        toy,
        &theta,
        &low.params,
        &phi,
        &[LOWER],
        &[UPPER],
        alpha,
        eps_scale,
    )
    .unwrap();
    assert!(!h.skipped(), "second-order term skipped");
    (vec_of(&h.grad), vec_of(&low.params))
}

fn c3_hypergradient() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    // L_lower = ½‖θ−φ‖², L_upper = ½‖θ'‖², θ=(1,0), φ=0, α=0.5
    let hand = ToyBilevel {
        n: 2,
        k: 2,
        m: vec![1.0, 0.0, 0.0, 1.0],
        kappa: vec![0.0, 0.0],
        target: vec![0.0, 0.0],
        rho: 0.0,
        anchor: vec![0.0, 0.0],
    };
    let (g, _) = library_hypergradient(&hand, &[1.0, 0.0], &[0.0, 0.0], 0.5, HYPER_EPS_SCALE);
    let hand_err = diff_norm(&g, &[0.25, 0.0]) / 0.25;
    ok &= hand_err <= HYPER_TOL;
    notes.push(format!("hand case ({:.6}, {:.6})", g[0], g[1]));

    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut worst: f64 = 0.0;
    let mut unroll_err: f64 = 0.0;
    for _ in 0..HYPER_CASES {
        let toy = ToyBilevel::random(&mut rng, false);
        let th: Vec<f64> = (0..toy.n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ph: Vec<f64> = (0..toy.k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let alpha = rng.gen_range(0.05..0.9);
        let (fd, theta_prime) = library_hypergradient(&toy, &th, &ph, alpha, HYPER_EPS_SCALE);
        // θ' = (1−α)θ + αMφ for the quadratic family
        let mp = toy.m_phi(&ph);
        let want_prime: Vec<f64> = (0..toy.n)
            .map(|i| (1.0 - alpha) * th[i] + alpha * mp[i])
            .collect();
        unroll_err = unroll_err.max(diff_norm(&theta_prime, &want_prime));
        let exact = toy.unrolled(&th, &ph, alpha);
        worst = worst.max(diff_norm(&fd, &exact) / norm(&exact).max(GRAD_FLOOR));
    }
    ok &= worst <= HYPER_TOL && unroll_err <= 1e-12;
    notes.push(format!(
        "{HYPER_CASES} quadratic cases worst rel err {worst:.2e}"
    ));

    let mut shrinks = 0;
    let mut ratios = Vec::new();
    for _ in 0..CUBIC_CASES {
        let toy = ToyBilevel::random(&mut rng, true);
        let th: Vec<f64> = (0..toy.n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let ph: Vec<f64> = (0..toy.k).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let alpha = rng.gen_range(0.1..0.9);
        let exact = toy.unrolled(&th, &ph, alpha);
        let err =
            |eps: f64| diff_norm(&library_hypergradient(&toy, &th, &ph, alpha, eps).0, &exact);
        let (coarse, fine) = (err(HYPER_EPS_SCALE), err(HYPER_EPS_SCALE / 2.0));
        if fine < coarse {
            shrinks += 1;
        }
        ratios.push(coarse / fine);
    }
    ok &= shrinks == CUBIC_CASES;
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    notes.push(format!(
        "cubic: error shrank in {shrinks}/{CUBIC_CASES} on halving eps, ratio {lo:.2}..{hi:.2}"
    ));
    check(ok, notes.join("; "))
}

// ---------------------------------------------------------------- criterion 4

type StepLog = Vec<(Phase, usize, String, String)>;

fn logged_run(
    strategy: Strategy,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<(TrainOutcome, StepLog), TrainError> {
    let mut log = Vec::new();
    let mut obs = |e: &StepEvent<'_>| {
        log.push((
            e.phase,
            e.iteration,
            e.detector.digest(),
            e.trainable.digest(),
        ))
    };
    let out = run_strategy(strategy, cfg, data, None, Some(&mut obs))?;
    Ok((out, log))
}

fn checkpoint_of(cfg: &TrainConfig, out: &TrainOutcome) -> Checkpoint {
    Checkpoint {
        config: serde_json::to_value(cfg).unwrap(),
        detector: out.detector.clone(),
        segmenter: out.segmenter.clone(),
    }
}

fn c4_first_order_switch() -> Verdict {
    let data = generate_shapes(40, 64, &ShapeKind::ALL, 3, 4242).unwrap();
    let cfg = TrainConfig {
        alpha: 0.0,
        iterations: SWITCH_STEPS,
        pretrain_iters: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let (first, first_log) =
        logged_run(Strategy::BilevelFirst, &cfg, &data).map_err(|e| e.to_string())?;
    let (second, second_log) =
        logged_run(Strategy::BilevelSecond, &cfg, &data).map_err(|e| e.to_string())?;
    let skipped = second.trace.rows.iter().filter(|r| r.hyper_skipped).count();
    let mismatch = first_log.iter().zip(&second_log).position(|(a, b)| a != b);
    let same_bytes =
        checkpoint_of(&cfg, &first).to_bytes() == checkpoint_of(&cfg, &second).to_bytes();
    let moved = first_log.first().map(|f| f.2.clone()) != first_log.last().map(|l| l.2.clone());
    let detail = format!(
        "{} steps, {} observed updates, first mismatch {:?}, second-order terms skipped {skipped}, identical parameter bytes {same_bytes}",
        SWITCH_STEPS,
        second_log.len(),
        mismatch
    );
    check(
        first_log.len() == second_log.len()
            && mismatch.is_none()
            && same_bytes
            && skipped == 0
            && moved,
        detail,
    )
}

// ---------------------------------------------------------------- trend runs

struct TrendData {
    train: Dataset,
    test: Dataset,
}

fn trend_data() -> &'static TrendData {
    static DATA: OnceLock<TrendData> = OnceLock::new();
    DATA.get_or_init(|| TrendData {
        train: generate_shapes(TREND_TRAIN, 64, &ShapeKind::ALL, 3, TREND_TRAIN_SEED).unwrap(),
        test: generate_shapes(TREND_TEST, 64, &ShapeKind::ALL, 3, TREND_TEST_SEED).unwrap(),
    })
}

fn trend_cfg(gamma: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: TREND_ITERS,
        gamma_split: gamma,
        seed,
        ..TrainConfig::default()
    }
}

type RunKey = (Strategy, u64, u64);
type RunResult = Result<(EvalPoint, f64), String>;

fn run_cache() -> &'static Mutex<HashMap<RunKey, RunResult>> {
    static CACHE: OnceLock<Mutex<HashMap<RunKey, RunResult>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn run_uncached(
    strategy: Strategy,
    gamma: f64,
    seed: u64,
    observer: Option<&mut bloinst_core::engine::Observer<'_>>,
) -> RunResult {
    let d = trend_data();
    let start = Instant::now();
    let out = run_strategy(
        strategy,
        &trend_cfg(gamma, seed),
        &d.train,
        Some(&d.test),
        observer,
    )
    .map_err(|e| e.to_string())?;
    let report = out.final_report.as_ref().ok_or("no test report")?;
    Ok((EvalPoint::from(report), start.elapsed().as_secs_f64()))
}

/// Final test-set scores of one trend run, computed once per process.
fn trend_run(strategy: Strategy, gamma: f64, seed: u64) -> RunResult {
    let key = (strategy, gamma.to_bits(), seed);
    if let Some(r) = run_cache().lock().unwrap().get(&key) {
        return r.clone();
    }
    let r = run_uncached(strategy, gamma, seed, None);
    run_cache().lock().unwrap().insert(key, r.clone());
    r
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// mAP per seed, or the first failed run.
fn seed_maps(strategy: Strategy, gamma: f64) -> Result<Vec<f64>, String> {
    TREND_SEEDS
        .iter()
        .map(|&s| {
            trend_run(strategy, gamma, s)
                .map(|(p, _)| p.map)
                .map_err(|e| format!("{strategy} γ={gamma} seed {s}: {e}"))
        })
        .collect()
}

/// Rewrites the CSV of every trend run finished so far.
fn write_runs_csv() -> PathBuf {
    let path = output_dir().join("trend_runs.csv");
    let cache = run_cache().lock().unwrap();
    let mut keys: Vec<&RunKey> = cache.keys().collect();
    keys.sort_by(|a, b| {
        (a.0.name(), f64::from_bits(a.1), a.2)
            .partial_cmp(&(b.0.name(), f64::from_bits(b.1), b.2))
            .unwrap()
    });
    let mut text = String::from("strategy,gamma,seed,status,mAP,AP50,AP75,wall_seconds\n");
    for k in keys {
        let gamma = f64::from_bits(k.1);
        match &cache[k] {
            Ok((p, secs)) => {
                text += &format!(
                    "{},{gamma},{},ok,{},{},{},{secs:.1}\n",
                    k.0, k.2, p.map, p.ap50, p.ap75
                )
            }
            Err(e) => {
                text += &format!(
                    "{},{gamma},{},\"failed: {}\",,,,\n",
                    k.0,
                    k.2,
                    e.replace('"', "'")
                )
            }
        }
    }
    fs::write(&path, text).expect("write trend CSV");
    path
}

fn fmt_seeds(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------- criterion 5

fn c5_isolation() -> Verdict {
    let start_frozen: Mutex<Option<String>> = Mutex::new(None);
    let mut prev: Option<(String, String)> = None;
    let mut events = 0usize;
    let mut phi_moved_by_lower = 0usize;
    let mut theta_moved_by_upper = 0usize;
    let mut theta_moved_in_pretrain = 0usize;
    let mut frozen_changed = 0usize;
    let mut lower_updates = 0usize;
    let mut upper_updates = 0usize;
    let mut partition_bad = 0usize;
    let mut obs = |e: &StepEvent<'_>| {
        events += 1;
        let (phi, theta, frozen) = (e.detector.digest(), e.trainable.digest(), e.frozen.digest());
        let mut first = start_frozen.lock().unwrap();
        if first.get_or_insert_with(|| frozen.clone()) != &frozen {
            frozen_changed += 1;
        }
        if e.trainable
            .names()
            .any(|n| n.starts_with("enc.") || n.starts_with("dec."))
        {
            partition_bad += 1;
        }
        if let Some((p_phi, p_theta)) = &prev {
            match e.phase {
                Phase::Lower => {
                    phi_moved_by_lower += (p_phi != &phi) as usize;
                    lower_updates += (p_theta != &theta) as usize;
                }
                Phase::Upper => {
                    theta_moved_by_upper += (p_theta != &theta) as usize;
                    upper_updates += (p_phi != &phi) as usize;
                }
                Phase::Pretrain => theta_moved_in_pretrain += (p_theta != &theta) as usize,
                _ => {}
            }
        }
        prev = Some((phi, theta));
    };
    let result = run_uncached(Strategy::BilevelFirst, 1.0, TREND_SEEDS[0], Some(&mut obs));
    run_cache().lock().unwrap().insert(
        (Strategy::BilevelFirst, 1f64.to_bits(), TREND_SEEDS[0]),
        result.clone(),
    );
    result?;

    let cfg = trend_cfg(1.0, TREND_SEEDS[0]);
    let mut model = cfg.model.clone();
    model.num_classes = trend_data().train.classes.len();
    let seg = init_segmenter(&model, 0);
    let mut counts = Vec::new();
    let mut counts_ok = model.lora_rank == LORA_RANK;
    for (prefix, weight) in [("lora1", "dec.w1"), ("lora2", "dec.w2")] {
        let shape = seg
            .frozen
            .get(weight)
            .expect("adapted map is frozen")
            .shape()
            .to_vec();
        let (d_out, d_in) = (shape[0], shape[1]);
        let want = LORA_RANK * (d_in + d_out);
        let got = seg.lora_count(prefix).unwrap_or(0);
        counts_ok &= got == want;
        counts.push(format!("{prefix} {got}/{want}"));
    }
    let detail = format!(
        "{events} updates over {TREND_ITERS} iterations; φ moved by lower steps {phi_moved_by_lower}, θ moved by upper steps {theta_moved_by_upper}, θ moved in pretraining {theta_moved_in_pretrain}, frozen changed {frozen_changed}, frozen names trainable {partition_bad}; updates that moved θ {lower_updates}, φ {upper_updates}; LoRA counts {}",
        counts.join(", ")
    );
    check(
        phi_moved_by_lower == 0
            && theta_moved_by_upper == 0
            && theta_moved_in_pretrain == 0
            && frozen_changed == 0
            && partition_bad == 0
            && lower_updates > 0
            && upper_updates > 0
            && counts_ok,
        detail,
    )
}

// ---------------------------------------------------------------- criterion 6

/// Best injective assignment by TP count, then total IoU.
fn brute_force(overlaps: &[Vec<Overlap>], n_gt: usize, t: IouThreshold) -> (usize, Vec<bool>) {
    fn search(
        p: usize,
        overlaps: &[Vec<Overlap>],
        t: IouThreshold,
        used: &mut Vec<bool>,
        tp: usize,
        iou: f64,
        best: &mut (usize, f64, Vec<bool>),
    ) {
        if p == overlaps.len() {
            if tp > best.0 || (tp == best.0 && iou > best.1) {
                *best = (tp, iou, used.clone());
            }
            return;
        }
        search(p + 1, overlaps, t, used, tp, iou, best);
        for g in 0..used.len() {
            if !used[g] && overlaps[p][g].meets(t) {
                used[g] = true;
                search(
                    p + 1,
                    overlaps,
                    t,
                    used,
                    tp + 1,
                    iou + overlaps[p][g].iou(),
                    best,
                );
                used[g] = false;
            }
        }
    }
    let mut best = (0, f64::NEG_INFINITY, vec![false; n_gt]);
    search(0, overlaps, t, &mut vec![false; n_gt], 0, 0.0, &mut best);
    (best.0, best.2)
}

fn rect_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<usize> {
    let r0 = rng.gen_range(0..h);
    let c0 = rng.gen_range(0..w);
    let r1 = rng.gen_range(r0 + 1..=(r0 + 4).min(h));
    let c1 = rng.gen_range(c0 + 1..=(c0 + 4).min(w));
    (r0..r1)
        .flat_map(|r| (c0..c1).map(move |c| r * w + c))
        .collect()
}

/// Ground truths are the visible parts of painted rectangles, so they never
/// overlap, as in generated data.
fn matching_case(rng: &mut ChaCha8Rng) -> (Vec<PredictedInstance>, Vec<Mask>, IouThreshold) {
    let (h, w) = (6, 6);
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for j in 0..rng.gen_range(0..=4) {
        for p in rect_mask(rng, h, w) {
            owner[p] = Some(j);
        }
    }
    let gts: Vec<Mask> = (0..4)
        .map(|j| Mask::new(h, w, owner.iter().map(|&o| o == Some(j)).collect()))
        .filter(|m| !m.is_empty())
        .collect();
    let preds = (0..rng.gen_range(0..=4))
        .map(|_| {
            let mut bits = if !gts.is_empty() && rng.gen_bool(0.75) {
                gts[rng.gen_range(0..gts.len())].bits().to_vec()
            } else {
                let mut b = vec![false; h * w];
                for p in rect_mask(rng, h, w) {
                    b[p] = true;
                }
                b
            };
            for _ in 0..rng.gen_range(0..=3) {
                let p = rng.gen_range(0..h * w);
                bits[p] = !bits[p];
            }
            if !bits.contains(&true) {
                bits[rng.gen_range(0..h * w)] = true;
            }
            PredictedInstance {
                mask: Mask::new(h, w, bits),
                class_id: 0,
                confidence: rng.gen_range(0..4) as f64 / 4.0,
            }
        })
        .collect();
    let t = IouThreshold::standard()[rng.gen_range(0..10)];
    (preds, gts, t)
}

fn c6_evaluator() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    let mut disagreements = Vec::new();
    let mut nontrivial = 0;
    for case in 0..MATCH_CASES {
        let (preds, gts, t) = matching_case(&mut rng);
        let refs: Vec<&Mask> = gts.iter().collect();
        let greedy = match_instances(&preds, &refs, t).unwrap();
        let overlaps: Vec<Vec<Overlap>> = preds
            .iter()
            .map(|p| gts.iter().map(|g| overlap(&p.mask, g).unwrap()).collect())
            .collect();
        let (best_tp, best_matched) = brute_force(&overlaps, gts.len(), t);
        let tp = greedy.pred_tp.iter().filter(|&&x| x).count();
        nontrivial += (best_tp > 0) as usize;
        if tp != best_tp || greedy.gt_matched != best_matched {
            disagreements.push(case);
        }
    }

    let (h, w) = (6, 6);
    let gt_bits: Vec<bool> = (0..h * w).map(|i| i < 5).collect();
    let pred_bits: Vec<bool> = (0..h * w).map(|i| i < 3).collect();
    let gt = Instance {
        bbox: BBox::new(0.0, 0.0, 5.0, 1.0),
        class_id: 0,
        mask: Mask::new(h, w, gt_bits),
    };
    let pred = PredictedInstance {
        mask: Mask::new(h, w, pred_bits),
        class_id: 0,
        confidence: 0.9,
    };
    let gts = [gt];
    let report = evaluate(&[vec![pred]], &[&gts[..]], 1).unwrap();
    let single_ok = (report.map - 0.3).abs() <= AP_TOL
        && (report.ap50 - 1.0).abs() <= AP_TOL
        && report.ap75.abs() <= AP_TOL;
    let envelope = average_precision(&[true, false, true], 2).unwrap();
    let envelope_ok = (envelope - 5.0 / 6.0).abs() <= AP_TOL;

    let detail = format!(
        "{MATCH_CASES} random cases ({nontrivial} with matches), disagreements {:?}; single-pred mAP {:.12} AP50 {:.12} AP75 {:.12}; envelope AP {envelope:.12}",
        disagreements, report.map, report.ap50, report.ap75
    );
    check(disagreements.is_empty() && single_ok && envelope_ok, detail)
}

// ---------------------------------------------------------------- criteria 7 to 9

fn c7_single_level() -> Verdict {
    let bilevel = seed_maps(Strategy::BilevelFirst, 1.0)?;
    let single = seed_maps(Strategy::SingleLevel, 1.0)?;
    let second = seed_maps(Strategy::BilevelSecond, 1.0);
    let csv = write_runs_csv();
    let (mb, sb) = mean_std(&bilevel);
    let (ms, ss) = mean_std(&single);
    let second_note = match second {
        Ok(v) => {
            let (m2, s2) = mean_std(&v);
            format!(
                "report only: bilevel-second {m2:.4}±{s2:.4} vs bilevel-first {mb:.4} [{}]",
                fmt_seeds(&v)
            )
        }
        Err(e) => format!("report only: bilevel-second failed ({e})"),
    };
    check(
        mb >= ms,
        format!(
            "mean mAP bilevel-first {mb:.4}±{sb:.4} [{}] vs single-level {ms:.4}±{ss:.4} [{}]; {second_note}; runs in {}",
            fmt_seeds(&bilevel),
            fmt_seeds(&single),
            csv.display()
        ),
    )
}

fn c8_split_ratio() -> Verdict {
    let mut stats = Vec::new();
    let mut rows = String::from("gamma,seed,mAP\n");
    for &g in &GAMMAS {
        let maps = seed_maps(Strategy::BilevelFirst, g)?;
        for (s, m) in TREND_SEEDS.iter().zip(&maps) {
            rows += &format!("{g},{s},{m}\n");
        }
        stats.push((g, mean_std(&maps)));
    }
    let path = output_dir().join("gamma_sweep.csv");
    fs::write(&path, rows).map_err(|e| e.to_string())?;
    write_runs_csv();
    let (_, (balanced, _)) = stats[1];
    // γ=1 against each extreme's mean less that extreme's spread
    let ok = [stats[0], stats[2]]
        .iter()
        .all(|(_, (m, s))| balanced >= m - s);
    let desc: Vec<String> = stats
        .iter()
        .map(|(g, (m, s))| format!("γ={g}: {m:.4}±{s:.4}"))
        .collect();
    check(
        ok,
        format!("{}; sweep in {}", desc.join(", "), path.display()),
    )
}

fn c9_separate() -> Verdict {
    let bilevel = seed_maps(Strategy::BilevelFirst, 1.0)?;
    let separate = seed_maps(Strategy::Separate, 1.0)?;
    write_runs_csv();
    let (mb, sb) = mean_std(&bilevel);
    let (ms, ss) = mean_std(&separate);
    check(
        mb >= ms,
        format!(
            "mean mAP bilevel-first {mb:.4}±{sb:.4} [{}] vs separate {ms:.4}±{ss:.4} [{}] at {TREND_ITERS} steps each",
            fmt_seeds(&bilevel),
            fmt_seeds(&separate)
        ),
    )
}

// ---------------------------------------------------------------- criterion 10

fn c10_determinism() -> Verdict {
    let data = generate_shapes(24, 64, &ShapeKind::ALL, 3, 99).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for strategy in Strategy::ALL {
        let cfg = TrainConfig {
            iterations: 20,
            pretrain_iters: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let bytes = |_: ()| -> Result<Vec<u8>, String> {
            let out = run_strategy(strategy, &cfg, &data, None, None).map_err(|e| e.to_string())?;
            Ok(checkpoint_of(&cfg, &out).to_bytes())
        };
        let (a, b) = (bytes(())?, bytes(())?);
        ok &= a == b;
        notes.push(format!("{strategy} reruns identical {}", a == b));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        iterations: 10,
        pretrain_iters: 2,
        seed: 8,
        ..TrainConfig::default()
    };
    let out = run_strategy(Strategy::BilevelSecond, &cfg, &data, None, None)
        .map_err(|e| e.to_string())?;
    let ckpt = checkpoint_of(&cfg, &out);
    let path = dir.path().join("model.bloi");
    save_checkpoint(&ckpt, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let ckpt_ok = loaded == ckpt && loaded.to_bytes() == ckpt.to_bytes();
    ok &= ckpt_ok;
    notes.push(format!("checkpoint round trip lossless {ckpt_ok}"));

    let mut ann_ok = true;
    for (i, set) in [data, trend_data().test.clone()].iter().enumerate() {
        let d = dir.path().join(format!("annotations{i}"));
        save_annotations(set, &d).map_err(|e| e.to_string())?;
        ann_ok &= &load_annotations(&d).map_err(|e| e.to_string())? == set;
    }
    ok &= ann_ok;
    notes.push(format!("annotation round trips lossless {ann_ok}"));
    check(ok, notes.join("; "))
}
