use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::rng;

/// Disjoint sample positions driving the two levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitData {
    /// Segmenter updates.
    pub lower: Vec<usize>,
    /// Detector updates.
    pub upper: Vec<usize>,
}

/// Seeded shuffle of `0..n`, then a prefix of `round(n·γ/(1+γ))` positions
/// for the lower level and the rest for the upper level.
pub fn split_dataset(n: usize, gamma: f64, seed: u64) -> Result<SplitData, TrainError> {
    let lower_len = (n as f64 * gamma / (1.0 + gamma)).round() as usize;
    if !(gamma.is_finite() && gamma > 0.0) || lower_len == 0 || lower_len >= n {
        return Err(TrainError::SplitTooSmall { n, gamma });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::tag("split")));
    let upper = order.split_off(lower_len);
    Ok(SplitData {
        lower: order,
        upper,
    })
}

/// Batches drawn without replacement, reshuffling at every epoch.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(pool: Vec<usize>, seed: u64) -> Self {
        assert!(!pool.is_empty(), "empty sampling pool");
        Self {
            order: Vec::new(),
            pos: 0,
            pool,
            rng: rng::stream(seed, rng::tag("sampler")),
        }
    }

    /// `size` positions (at most the pool size); a batch may straddle two epochs.
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.pool.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order = self.pool.clone();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
