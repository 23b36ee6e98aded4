//! Named parameter storage and the checkpoint format.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use super::tensor::Tensor;
use super::AutodiffError;

pub const CHECKPOINT_FORMAT: &str = "motionkit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId, AutodiffError> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Matrix `[fan_in, fan_out]` drawn uniformly from ±1/√fan_in.
    pub fn uniform(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId, AutodiffError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    /// Bias row `[1, width]` drawn uniformly from ±1/√fan_in.
    pub fn uniform_bias(
        &mut self,
        name: &str,
        fan_in: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId, AutodiffError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..width).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::matrix(1, width, data)?)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params: self
                .iter()
                .map(|(_, name, t)| NamedArray {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites values from a checkpoint. Every stored name must exist here
    /// with the same shape, and every parameter here must be present.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), AutodiffError> {
        ckpt.check_header()?;
        if ckpt.params.len() != self.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint has {} arrays, model has {}",
                ckpt.params.len(),
                self.len()
            )));
        }
        for arr in &ckpt.params {
            let id = self
                .id(&arr.name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("unknown parameter {}", arr.name)))?;
            if self.values[id.0].shape() != arr.shape.as_slice() {
                return Err(AutodiffError::Checkpoint(format!(
                    "{}: shape {:?} vs {:?}",
                    arr.name,
                    arr.shape,
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = Tensor::new(arr.shape.clone(), arr.values.clone())?;
        }
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, AutodiffError> {
        ckpt.check_header()?;
        let mut store = ParamStore::new();
        for arr in &ckpt.params {
            store.insert(&arr.name, Tensor::new(arr.shape.clone(), arr.values.clone())?)?;
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Versioned JSON checkpoint. Floats are written in shortest round-trip
/// form, so save/load is bit-exact for finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    fn check_header(&self) -> Result<(), AutodiffError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, AutodiffError> {
        serde_json::from_str(s).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        std::fs::write(path, self.to_json()).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let s = std::fs::read_to_string(path).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let id = store.uniform("w", 16, 8, &mut rng).unwrap();
        assert_eq!(store.value(id).shape(), &[16, 8]);
        assert!(store.value(id).data().iter().all(|v| v.abs() <= 0.25));
        assert!(store.insert("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn checkpoint_rejects_shape_change() {
        let mut a = ParamStore::new();
        a.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        let mut b = ParamStore::new();
        b.insert("w", Tensor::zeros(&[4, 1])).unwrap();
        assert!(b.load_checkpoint(&a.to_checkpoint()).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_json_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut store = ParamStore::new();
            store.insert("p", Tensor::row(values.clone())).unwrap();
            let json = store.to_checkpoint().to_json();
            let back = ParamStore::from_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
            let got = back.value(back.id("p").unwrap()).data();
            for (a, b) in got.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
