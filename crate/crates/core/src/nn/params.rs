use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// A named, shaped parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamArray {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
        Self { shape: shape.to_vec(), data }
    }
}

/// Plain parameter storage of one network. Ordered by name so every
/// traversal (optimizer, checkpoint, hashing) is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamArray>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, p: ParamArray) {
        let name = name.into();
        let prev = self.entries.insert(name.clone(), p);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamArray)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamArray)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        let entries = self.entries.iter().map(|(k, v)| (k.clone(), ParamArray::zeros(&v.shape))).collect();
        ParamSet { entries }
    }

    /// Sets every entry to zero.
    pub fn zero_all(&mut self) {
        for p in self.entries.values_mut() {
            p.data.fill(0.0);
        }
    }

    /// Largest absolute elementwise difference; `None` when the structures differ.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Option<f64> {
        if self.entries.len() != other.entries.len() {
            return None;
        }
        let mut m: f64 = 0.0;
        for ((ka, a), (kb, b)) in self.entries.iter().zip(other.entries.iter()) {
            if ka != kb || a.shape != b.shape {
                return None;
            }
            for (x, y) in a.data.iter().zip(&b.data) {
                m = m.max((x - y).abs());
            }
        }
        Some(m)
    }

    /// Wraps every entry as a tensor; trainable ones are gradient leaves.
    pub fn bind(&self, trainable: bool) -> Bound {
        self.bind_where(|_| trainable)
    }

    pub fn bind_where(&self, trainable: impl Fn(&str) -> bool) -> Bound {
        let map = self
            .entries
            .iter()
            .map(|(k, v)| {
                let t = if trainable(k) {
                    Tensor::param(v.data.clone(), &v.shape)
                } else {
                    Tensor::new(v.data.clone(), &v.shape)
                };
                (k.clone(), t)
            })
            .collect();
        Bound { map }
    }
}

/// Parameters of one network bound as tensors for a single forward/backward.
#[derive(Debug, Clone)]
pub struct Bound {
    map: BTreeMap<String, Tensor>,
}

impl Bound {
    pub fn get(&self, name: &str) -> &Tensor {
        self.map.get(name).unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    /// Gradient leaves in name order.
    pub fn trainable(&self) -> Vec<(&str, &Tensor)> {
        self.map
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(k, t)| (k.as_str(), t))
            .collect()
    }
}
