use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Initial value of a freshly created parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform {
        fan_in: usize,
    },
    Constant(f64),
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic initial tensor; depends only on `(seed, name, shape, init)`.
pub fn init_tensor(seed: u64, name: &str, shape: &[usize], init: ParamInit) -> Tensor {
    match init {
        ParamInit::Constant(v) => Tensor::full(shape, v),
        ParamInit::KaimingUniform { fan_in } => {
            let bound = (6.0 / fan_in.max(1) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(name.as_bytes()) ^ seed);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape.to_vec(), data).expect("numel matches shape")
        }
    }
}

/// Named network weights, in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, t: Tensor) -> usize {
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = t;
            return i;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        self.names.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Parameter access during a forward pass. `Build` creates missing
/// parameters; `Use` reads existing ones and fails on unknown names.
pub(crate) enum Access<'a> {
    Build { store: &'a mut ParamStore, seed: u64 },
    Use { store: &'a ParamStore, trainable: bool },
}

impl Access<'_> {
    pub(crate) fn get(&mut self, tape: &mut Tape, name: String, shape: &[usize], init: ParamInit) -> Result<Var> {
        match self {
            Access::Build { store, seed } => {
                let t = match store.get(&name) {
                    Some(t) => t.clone(),
                    None => {
                        let t = init_tensor(*seed, &name, shape, init);
                        store.insert(name, t.clone());
                        t
                    }
                };
                Ok(tape.constant(t))
            }
            Access::Use { store, trainable } => {
                let id = store
                    .id(&name)
                    .ok_or_else(|| Error::Invariant(format!("parameter {name} was never built")))?;
                let t = store.tensor(id);
                if t.shape() != shape {
                    return Err(Error::Shape {
                        op: "parameter",
                        lhs: shape.to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                Ok(if *trainable {
                    tape.param(id, t)
                } else {
                    tape.constant(t.clone())
                })
            }
        }
    }
}
