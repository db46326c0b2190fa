//! Named parameter collections and the flat vector algebra the optimizers need.

use std::collections::BTreeMap;

use bloinst_autodiff::{Gradients, Tape, Tensor, Var};
use sha2::{Digest, Sha256};

/// Ordered map from parameter name to value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|t| Tensor::zeros(t.shape()))
    }

    pub fn map(&self, mut f: impl FnMut(&Tensor) -> Tensor) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), f(v)))
                .collect(),
        }
    }

    fn assert_same_layout(&self, other: &Self) {
        assert!(
            self.entries.len() == other.entries.len()
                && self
                    .entries
                    .iter()
                    .zip(&other.entries)
                    .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape()),
            "parameter sets have different layouts"
        );
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        self.assert_same_layout(other);
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
    }

    /// Gradient-descent update `self - lr * grad`; a zero rate returns the
    /// parameters untouched, bit for bit.
    pub fn descend(&self, lr: f64, grad: &Self) -> Self {
        let mut out = self.clone();
        if lr != 0.0 {
            out.axpy(-lr, grad);
        }
        out
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.assert_same_layout(other);
        self.entries
            .values()
            .zip(other.entries.values())
            .map(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    /// SHA-256 over names, shapes and the little-endian bytes of every value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.entries {
            h.update((k.len() as u64).to_le_bytes());
            h.update(k.as_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Places every tensor on `tape`, grad-flagged when `track` is set.
    pub fn bind<'t>(&self, tape: &'t Tape, track: bool) -> Bound<'t> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| {
                    let var = if track {
                        tape.param(v.clone())
                    } else {
                        tape.constant(v.clone())
                    };
                    (k.clone(), var)
                })
                .collect(),
        }
    }

    /// Flattened values in name order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamSet::to_flat`] using `self` as the layout.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.num_scalars(), "flat vector length");
        let mut off = 0;
        self.map(|t| {
            let out = Tensor::new(t.shape().to_vec(), flat[off..off + t.len()].to_vec()).unwrap();
            off += t.len();
            out
        })
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// A [`ParamSet`] placed on a tape.
#[derive(Clone)]
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn empty() -> Self {
        Self {
            vars: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<Var<'t>> {
        self.vars.get(name).copied()
    }

    /// Later entries shadow earlier ones on name collisions.
    pub fn merged(mut self, other: Bound<'t>) -> Self {
        self.vars.extend(other.vars);
        self
    }

    /// Gradients for every bound name, shaped like the parameters.
    pub fn gradients(&self, grads: &Gradients) -> ParamSet {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&v.shape()));
                (k.clone(), g)
            })
            .collect()
    }
}
