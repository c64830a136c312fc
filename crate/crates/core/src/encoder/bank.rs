use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{NnError, Result};
use crate::tensor::Tensor;

/// Fixed-capacity FIFO of unit-norm negatives, stored row-major at `f32`
/// precision. `head` is the slot the next push overwrites, which is also the
/// oldest entry.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    data: Vec<f64>,
    head: usize,
}

impl MemoryBank {
    /// Filled with random unit vectors drawn from `seed`.
    pub fn new(capacity: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; capacity * dim];
        for row in data.chunks_mut(dim.max(1)) {
            loop {
                for v in row.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 1e-3 {
                    for v in row.iter_mut() {
                        *v = (*v / n) as f32 as f64;
                    }
                    break;
                }
            }
        }
        Self { capacity, dim, data, head: 0 }
    }

    /// Restores a bank from stored rows and write position.
    pub fn from_parts(rows: Tensor, head: usize) -> Result<Self> {
        let s = rows.shape().to_vec();
        if s.len() != 2 || head >= s[0].max(1) {
            return Err(NnError::Config(format!("bank rows {s:?} with head {head}")));
        }
        Ok(Self { capacity: s[0], dim: s[1], data: rows.into_data(), head })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self) -> usize {
        self.head
    }

    /// Storage order rows, `[capacity, dim]`.
    pub fn as_tensor(&self) -> Option<Tensor> {
        if self.capacity == 0 {
            return None;
        }
        Some(Tensor::new([self.capacity, self.dim], self.data.clone()).expect("consistent"))
    }

    /// Entries from oldest to newest.
    pub fn ordered(&self) -> Vec<&[f64]> {
        (0..self.capacity)
            .map(|i| {
                let r = (self.head + i) % self.capacity;
                &self.data[r * self.dim..(r + 1) * self.dim]
            })
            .collect()
    }

    /// Appends the rows of `keys` (`[B, dim]`), evicting the oldest entries.
    pub fn push(&mut self, keys: &Tensor) -> Result<()> {
        let s = keys.shape();
        if s.len() != 2 || s[1] != self.dim {
            return Err(NnError::Config(format!("bank holds {}-dimensional keys, got shape {s:?}", self.dim)));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        for row in keys.data().chunks(self.dim) {
            let dst = &mut self.data[self.head * self.dim..(self.head + 1) * self.dim];
            for (d, v) in dst.iter_mut().zip(row) {
                *d = *v as f32 as f64;
            }
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
