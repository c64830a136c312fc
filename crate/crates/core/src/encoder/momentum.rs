use super::bank::MemoryBank;
use crate::nn::{NnError, ParamStore, Result};

/// Key encoder parameters, negative bank, and contrastive hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoderState {
    pub key: ParamStore,
    pub bank: MemoryBank,
    pub tau: f64,
    pub momentum: f64,
}

impl DualEncoderState {
    /// Applies [`momentum_update`] to the key store.
    pub fn update_key(&mut self, query: &ParamStore) -> Result<()> {
        momentum_update(&mut self.key, query, self.momentum)
    }
}

/// `θ_key ← m·θ_key + (1 − m)·θ_query` for every key parameter. The key
/// store must mirror the leading parameters of `query` by name and shape.
pub fn momentum_update(key: &mut ParamStore, query: &ParamStore, m: f64) -> Result<()> {
    if key.len() > query.len() {
        return Err(NnError::Config(format!("key has {} parameters, query only {}", key.len(), query.len())));
    }
    for id in key.ids() {
        if key.name(id) != query.name(id) || key.get(id).shape() != query.get(id).shape() {
            return Err(NnError::Config(format!(
                "key parameter `{}` {:?} does not mirror query `{}` {:?}",
                key.name(id),
                key.get(id).shape(),
                query.name(id),
                query.get(id).shape()
            )));
        }
    }
    for id in key.ids() {
        let q = query.get(id).data();
        for (k, &qv) in key.get_mut(id).data_mut().iter_mut().zip(q) {
            *k = (m * *k + (1.0 - m) * qv) as f32 as f64;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("backbone.w", Tensor::full([3, 2], v)).unwrap();
        s.add("proj.b", Tensor::full([2], v)).unwrap();
        s
    }

    #[test]
    fn endpoint_coefficients() {
        let q = store(0.75);
        let mut k = store(-0.25);
        momentum_update(&mut k, &q, 1.0).unwrap();
        assert_eq!(k, store(-0.25));
        momentum_update(&mut k, &q, 0.0).unwrap();
        assert_eq!(k, q);
    }

    #[test]
    fn hand_value() {
        let q = store(1.0);
        let mut k = store(0.0);
        momentum_update(&mut k, &q, 0.999).unwrap();
        for (_, t) in k.iter() {
            assert!(t.data().iter().all(|&v| (v - 0.001).abs() < 1e-9));
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let q = store(1.0);
        let mut k = ParamStore::new();
        k.add("backbone.w", Tensor::zeros([2, 3])).unwrap();
        assert!(momentum_update(&mut k, &q, 0.5).is_err());
    }
}
