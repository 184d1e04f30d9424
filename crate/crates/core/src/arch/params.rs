use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    /// Non-trainable running statistics.
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Named, ordered parameter and buffer tensors of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, kind, tensor });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.entries[id.0].kind.trainable())
    }

    /// Learnable scalar count, found by enumerating the stored buffers.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.trainable())
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Drops an entry by name. Ids issued before the removal are invalidated.
    pub fn remove(&mut self, name: &str) -> Option<ParamEntry<T>> {
        let idx = self.index.remove(name)?;
        let e = self.entries.remove(idx);
        for v in self.index.values_mut() {
            if *v > idx {
                *v -= 1;
            }
        }
        Some(e)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    tensor: e.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// CRC-32 over names and little-endian values.
    pub fn digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        let mut buf = Vec::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            buf.clear();
            for &v in e.tensor.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        h.finalize()
    }

    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// zero biases, unit gamma, zero beta, running stats reset to (0, 1).
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in &mut self.entries {
            let shape = e.tensor.shape().to_vec();
            e.tensor = match e.kind {
                ParamKind::Weight => {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Tensor::uniform(&shape, -bound, bound, &mut rng)
                }
                ParamKind::Bias | ParamKind::BnBeta | ParamKind::RunningMean => Tensor::zeros(&shape),
                ParamKind::BnGamma | ParamKind::RunningVar => Tensor::ones(&shape),
            };
        }
    }
}
