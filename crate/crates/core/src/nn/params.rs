use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use super::{lit, Float};

/// Handle to one named array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable arrays.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Arc<ArrayD<T>>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    /// Uniform fan-in initialisation in `[-bound, bound]`, `bound = gain / sqrt(fan_in)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut R,
    ) -> ParamId {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        let value = if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            ArrayD::from_shape_simple_fn(IxDyn(shape), || lit::<T>(dist.sample(rng)))
        } else {
            ArrayD::zeros(IxDyn(shape))
        };
        self.insert(name, value)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.insert(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<ArrayD<T>> {
        Arc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Same layout, converted element type.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| Arc::new(v.mapv(|x| U::from_f64_lossy(x.to_f64_lossy()))))
                .collect(),
        }
    }

    pub fn to_named_f32(&self) -> BTreeMap<String, ArrayD<f32>> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.mapv(|x| x.to_f64_lossy() as f32)))
            .collect()
    }

    /// Overwrite every parameter from `arrays`, requiring exact name and shape matches.
    pub fn load_named_f32(&mut self, arrays: &BTreeMap<String, ArrayD<f32>>) -> Result<(), String> {
        for i in 0..self.values.len() {
            let name = &self.names[i];
            let src = arrays.get(name).ok_or_else(|| format!("missing parameter `{name}`"))?;
            if src.shape() != self.values[i].shape() {
                return Err(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    self.values[i].shape()
                ));
            }
            self.values[i] = Arc::new(src.mapv(|x| T::from_f64_lossy(x as f64)));
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian `f64` images of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            h.update(n.as_bytes());
            for &d in v.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in v.iter() {
                h.update(x.to_f64_lossy().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Gradient buffers aligned with a [`ParamStore`], used for accumulation.
#[derive(Debug, Clone)]
pub struct GradStore<T> {
    grads: Vec<ArrayD<T>>,
}

impl<T: Float> GradStore<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self { grads: store.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect() }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    pub fn add(&mut self, id: ParamId, grad: &ArrayD<T>) {
        self.grads[id.0] += grad;
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * s);
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.grads[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| {
                let v = v.to_f64_lossy();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}
