//! Boxes and binary masks shared by the data, loss and metric code.

use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixel coordinates, `[x1, y1, x2, y2]` with `x2 > x1`
/// and `y2 > y1`. Pixel `(r, c)` covers `[c, c+1) x [r, r+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox(pub [f64; 4]);

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self([x1, y1, x2, y2])
    }

    pub fn width(&self) -> f64 {
        self.0[2] - self.0[0]
    }

    pub fn height(&self) -> f64 {
        self.0[3] - self.0[1]
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.0[0] + self.0[2]) / 2.0, (self.0[1] + self.0[3]) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.0[2] > self.0[0] && self.0[3] > self.0[1]
    }

    pub fn clamped(&self, width: f64, height: f64) -> Self {
        Self([
            self.0[0].clamp(0.0, width),
            self.0[1].clamp(0.0, height),
            self.0[2].clamp(0.0, width),
            self.0[3].clamp(0.0, height),
        ])
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.0[2].min(other.0[2]) - self.0[0].max(other.0[0])).max(0.0);
        let ih = (self.0[3].min(other.0[3]) - self.0[1].max(other.0[1])).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// COCO-style `[x, y, w, h]`.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.width(), self.height()]
    }

    pub fn from_xywh(b: [f64; 4]) -> Self {
        Self([b[0], b[1], b[0] + b[2], b[1] + b[3]])
    }

    /// Pixel index ranges covered by the box after rounding outward and
    /// clipping to the image: `(row_start, row_end, col_start, col_end)`.
    pub fn pixel_span(&self, height: usize, width: usize) -> Option<(usize, usize, usize, usize)> {
        let clip = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        let c0 = clip(self.0[0].floor(), width);
        let c1 = clip(self.0[2].ceil(), width);
        let r0 = clip(self.0[1].floor(), height);
        let r1 = clip(self.0[3].ceil(), height);
        (c1 > c0 && r1 > r0).then_some((r0, r1, c0, c1))
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask size");
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight box in pixel-edge coordinates, or `None` for an empty mask.
    pub fn tight_box(&self) -> Option<BBox> {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    r0 = r0.min(r);
                    r1 = r1.max(r + 1);
                    c0 = c0.min(c);
                    c1 = c1.max(c + 1);
                }
            }
        }
        (r0 != usize::MAX).then(|| BBox::new(c0 as f64, r0 as f64, c1 as f64, r1 as f64))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }

    /// Run lengths over row-major pixels, starting with a (possibly empty)
    /// run of zeros.
    pub fn to_rle(&self) -> Vec<u64> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &b in &self.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    /// Inverse of [`Mask::to_rle`]. Fails when the runs do not sum to
    /// `height * width`.
    pub fn from_rle(height: usize, width: usize, counts: &[u64]) -> Result<Self, u64> {
        let total: u64 = counts.iter().sum();
        if total != (height * width) as u64 {
            return Err(total);
        }
        let mut bits = Vec::with_capacity(height * width);
        for (i, &n) in counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, n as usize));
        }
        Ok(Self::new(height, width, bits))
    }
}
