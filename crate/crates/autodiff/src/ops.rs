//! Forward and adjoint kernels for the non-elementwise operations.

use crate::tensor::{strides, Tensor};

/// Logistic function, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without forming `σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Option<Self> {
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (o, k) = (weight[0], weight[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(Self {
            n,
            c,
            h,
            w,
            o,
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    /// Input coordinate for an output coordinate and kernel offset, if in bounds.
    #[inline]
    fn src(&self, out: usize, kofs: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + kofs) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds image `n` of `x` into a `[C·K·K, Ho·Wo]` patch matrix whose row
/// order matches the flattened `[C, K, K]` kernel.
fn im2col(xd: &[f64], n: usize, g: &ConvGeom) -> Vec<f64> {
    let hw = g.ho * g.wo;
    let mut cols = vec![0.0; g.c * g.k * g.k * hw];
    for c in 0..g.c {
        let xbase = (n * g.c + c) * g.h * g.w;
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (c * g.k + ky) * g.k + kx;
                let row = &mut cols[r * hw..(r + 1) * hw];
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ky, g.h) else {
                        continue;
                    };
                    for ox in 0..g.wo {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            row[oy * g.wo + ox] = xd[xbase + iy * g.w + ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: &ConvGeom) -> Tensor {
    let (xd, wd) = (x.data(), w.data());
    let hw = g.ho * g.wo;
    let ckk = g.c * g.k * g.k;
    let mut out = vec![0.0; g.n * g.o * hw];
    for n in 0..g.n {
        let cols = im2col(xd, n, g);
        for o in 0..g.o {
            let orow = &mut out[(n * g.o + o) * hw..(n * g.o + o + 1) * hw];
            if let Some(b) = bias {
                orow.fill(b.data()[o]);
            }
            for r in 0..ckk {
                let wv = wd[o * ckk + r];
                for (acc, &xv) in orow.iter_mut().zip(&cols[r * hw..(r + 1) * hw]) {
                    *acc += wv * xv;
                }
            }
        }
    }
    Tensor::from_parts(vec![g.n, g.o, g.ho, g.wo], out)
}

/// Adjoints of conv2d with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    g: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let (xd, wd, gd) = (x.data(), w.data(), gout.data());
    let hw = g.ho * g.wo;
    let ckk = g.c * g.k * g.k;
    let mut gx = need_x.then(|| vec![0.0; xd.len()]);
    let mut gw = need_w.then(|| vec![0.0; wd.len()]);
    let mut gb = vec![0.0; g.o];
    let mut gcols = vec![0.0; ckk * hw];
    for n in 0..g.n {
        let gn = &gd[n * g.o * hw..(n + 1) * g.o * hw];
        for o in 0..g.o {
            gb[o] += gn[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        if let Some(gw) = gw.as_mut() {
            let cols = im2col(xd, n, g);
            for o in 0..g.o {
                let grow = &gn[o * hw..(o + 1) * hw];
                for r in 0..ckk {
                    let crow = &cols[r * hw..(r + 1) * hw];
                    gw[o * ckk + r] += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            gcols.fill(0.0);
            for o in 0..g.o {
                let grow = &gn[o * hw..(o + 1) * hw];
                for r in 0..ckk {
                    let wv = wd[o * ckk + r];
                    for (acc, &gv) in gcols[r * hw..(r + 1) * hw].iter_mut().zip(grow) {
                        *acc += wv * gv;
                    }
                }
            }
            for c in 0..g.c {
                let xbase = (n * g.c + c) * g.h * g.w;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let r = (c * g.k + ky) * g.k + kx;
                        let row = &gcols[r * hw..(r + 1) * hw];
                        for oy in 0..g.ho {
                            let Some(iy) = g.src(oy, ky, g.h) else {
                                continue;
                            };
                            for ox in 0..g.wo {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    gx[xbase + iy * g.w + ix] += row[oy * g.wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        gw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        Tensor::from_parts(vec![g.o], gb),
    )
}

/// Numpy-style compatibility: `src` right-aligned against `target`, each
/// source extent either 1 or equal.
pub(crate) fn broadcastable(src: &[usize], target: &[usize]) -> bool {
    if src.len() > target.len() {
        return false;
    }
    let off = target.len() - src.len();
    src.iter()
        .enumerate()
        .all(|(i, &d)| d == 1 || d == target[off + i])
}

/// For each flat target index, the flat source index it reads.
fn broadcast_index_map(src: &[usize], target: &[usize]) -> Vec<usize> {
    let off = target.len() - src.len();
    let sstr = strides(src);
    let tstr = strides(target);
    let total: usize = target.iter().product();
    (0..total)
        .map(|t| {
            let mut s = 0;
            for (i, &d) in src.iter().enumerate() {
                if d != 1 {
                    let coord = (t / tstr[off + i]) % target[off + i];
                    s += coord * sstr[i];
                }
            }
            s
        })
        .collect()
}

pub(crate) fn broadcast(x: &Tensor, target: &[usize]) -> Tensor {
    let map = broadcast_index_map(x.shape(), target);
    let d = x.data();
    Tensor::from_parts(target.to_vec(), map.iter().map(|&s| d[s]).collect())
}

pub(crate) fn broadcast_backward(gout: &Tensor, src: &[usize]) -> Tensor {
    let map = broadcast_index_map(src, gout.shape());
    let mut out = vec![0.0; src.iter().product()];
    for (&s, &g) in map.iter().zip(gout.data()) {
        out[s] += g;
    }
    Tensor::from_parts(src.to_vec(), out)
}

/// Splits a shape around `axis` into (outer, extent, inner) block sizes.
fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> Tensor {
    let (outer, ext, inner) = axis_blocks(x.shape(), axis);
    let len = end - start;
    let d = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * ext * inner;
        out.extend_from_slice(&d[base + start * inner..base + end * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::from_parts(shape, out)
}

pub(crate) fn slice_backward(gout: &Tensor, src: &[usize], axis: usize, start: usize) -> Tensor {
    let (outer, ext, inner) = axis_blocks(src, axis);
    let len = gout.shape()[axis];
    let g = gout.data();
    let mut out = vec![0.0; src.iter().product()];
    for o in 0..outer {
        let dst = o * ext * inner + start * inner;
        out[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(src.to_vec(), out)
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
    let mut shape = parts[0].shape().to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let (outer, _, inner) = axis_blocks(&shape, axis);
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::from_parts(shape, out)
}
