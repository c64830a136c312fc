use std::collections::HashMap;
use std::ops::Index;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::init::Init;
use super::{NnError, Result};
use crate::tensor::{grad_check_many, GradCheckOptions, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a tape leaf. With `trainable == false`
    /// the leaves are constants and receive no gradient.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.leaf(v.clone(), trainable)).collect() }
    }

    /// Reads gradients for every bound parameter after `Tape::backward`.
    /// Parameters the loss never reached get an all-zero gradient.
    pub fn collect_grads(&self, tape: &Tape, bound: &Bound) -> Grads {
        Grads {
            values: bound
                .vars
                .iter()
                .zip(&self.values)
                .map(|(&v, p)| Some(tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()])))
                .collect(),
        }
    }

    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            v.round_to_f32();
        }
    }

    /// SHA-256 over names, shapes and `f32` payloads.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.iter() {
            h.update(name.as_bytes());
            for &d in v.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in v.data() {
                h.update((x as f32).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies values from `other` for every name both stores share with
    /// equal shapes. Returns the number of copied tensors.
    pub fn copy_matching(&mut self, other: &ParamStore, prefix: &str) -> usize {
        let mut copied = 0;
        for (name, value) in other.iter() {
            if !name.starts_with(prefix) {
                continue;
            }
            if let Some(id) = self.id(name) {
                if self.values[id.0].shape() == value.shape() {
                    self.values[id.0] = value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }
}

/// Tape variables for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Replaces the variable bound to `id`.
    pub fn set(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = var;
    }
}

/// Finite-difference check of `f` with respect to the parameters `ids`; all
/// other parameters are bound as constants.
pub fn grad_check_params<F>(store: &ParamStore, ids: &[ParamId], opts: GradCheckOptions, f: F) -> f64
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let points: Vec<Tensor> = ids.iter().map(|&id| store.get(id).clone()).collect();
    grad_check_many(
        |tape, vars| {
            let mut bound = store.bind(tape, false);
            for (&id, &v) in ids.iter().zip(vars) {
                bound.set(id, v);
            }
            f(tape, &bound).map_err(|e| match e {
                NnError::Tensor(t) => t,
                other => TensorError::Format(other.to_string()),
            })
        },
        &points,
        opts,
    )
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    pub values: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.values.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().flatten().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.values.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Creates parameters under a dotted name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        ParamBuilder { store: self.store, rng: self.rng, prefix }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn create(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let value = init.sample(shape, self.rng);
        let path = self.path(name);
        self.store.add(path, value)
    }

    /// Registers an explicit initial value under the current prefix.
    pub fn create_value(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        let path = self.path(name);
        self.store.add(path, value)
    }

    /// Parameters in the underlying store so far.
    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}
