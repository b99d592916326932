use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::tensor::Tensor;
use super::GraphError;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameters in insertion order, with Adam moment buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), GraphError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(GraphError::DuplicateParam(name));
        }
        let (r, c) = (value.rows(), value.cols());
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            value,
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        Ok(())
    }

    /// Glorot-uniform weight `fan_in x fan_out` plus a zero bias row.
    pub fn insert_dense<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<(), GraphError> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        self.insert(format!("{prefix}.w"), Tensor::new(fan_in, fan_out, w)?)?;
        self.insert(format!("{prefix}.b"), Tensor::zeros(1, fan_out))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub(crate) fn value_at(&self, idx: usize) -> &Tensor {
        &self.entries[idx].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.entries[i].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Total number of scalar parameters.
    pub fn num_coords(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Reads coordinate `k` of the flattened parameter vector.
    pub(crate) fn coord(&self, k: usize) -> f64 {
        let (e, off) = self.locate(k);
        self.entries[e].value.data()[off]
    }

    pub(crate) fn set_coord(&mut self, k: usize, value: f64) {
        let (e, off) = self.locate(k);
        self.entries[e].value.data_mut()[off] = value;
    }

    pub(crate) fn coord_name(&self, k: usize) -> (String, usize) {
        let (e, off) = self.locate(k);
        (self.entries[e].name.clone(), off)
    }

    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, e) in self.entries.iter().enumerate() {
            if k < e.value.len() {
                return (i, k);
            }
            k -= e.value.len();
        }
        panic!("coordinate out of range");
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.map.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Flattened in the store's parameter order.
    pub(crate) fn coord(&self, store: &ParamStore, k: usize) -> f64 {
        let (name, off) = store.coord_name(k);
        self.map.get(&name).map_or(0.0, |g| g.data()[off])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<(), GraphError> {
    for e in &store.entries {
        let g = grads
            .get(&e.name)
            .ok_or_else(|| GraphError::MissingGradient(e.name.clone()))?;
        if g.shape() != e.value.shape() {
            return Err(GraphError::Shape(format!(
                "gradient for {} has shape {:?}, parameter has {:?}",
                e.name,
                g.shape(),
                e.value.shape()
            )));
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for e in &mut store.entries {
        let g = grads.get(&e.name).expect("checked above").data();
        let m = e.m.data_mut();
        let v = e.v.data_mut();
        let p = e.value.data_mut();
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
