use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, JitterConfig};
use super::container::Dataset;
use super::{DataError, Result};
use crate::objectives::MovementTarget;
use crate::tensor::Tensor;

/// Combines a base seed with stream coordinates into an independent seed.
pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [a, b] {
        x = x.wrapping_add(v.wrapping_mul(0xbf58_476d_1ce4_e5b9)).rotate_left(27);
        x = (x ^ (x >> 31)).wrapping_mul(0x94d0_49bb_1331_11eb);
    }
    x ^ (x >> 29)
}

/// Epoch-wise shuffling without replacement. The order of epoch `e` depends
/// only on `(seed, e)`.
#[derive(Clone, Debug)]
pub struct Sampler {
    len: usize,
    batch_size: usize,
    seed: u64,
}

impl Sampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(DataError::Config("cannot sample from an empty dataset".into()));
        }
        if batch_size == 0 || batch_size > len {
            return Err(DataError::Config(format!(
                "batch size {batch_size} must be between 1 and the dataset size {len}"
            )));
        }
        Ok(Self { len, batch_size, seed })
    }

    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0x5eed, epoch)));
        idx
    }

    /// Batches of one epoch; the last may be short.
    pub fn batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.permutation(epoch).chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }
}

/// Augmented, stacked training inputs for a set of sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `[B, k, 3, H, W]`.
    pub frames: Tensor,
    /// `[B·k·2]`, row-major `[B, k, 2]`.
    pub gaze: Vec<f64>,
    pub gaze_valid: Vec<bool>,
    pub movement: MovementTarget,
    /// `[B, 3, H, W]`.
    pub view1: Tensor,
    pub view2: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Augments each sequence with a stream derived from `(seed, step)`.
    pub fn assemble(ds: &Dataset, indices: &[usize], jitter: &JitterConfig, seed: u64, step: u64) -> Result<Self> {
        if indices.is_empty() {
            return Err(DataError::Config("empty batch".into()));
        }
        let (k, size) = (ds.seq_len, ds.image_size);
        let plane = 3 * size * size;
        let b = indices.len();
        let mut frames = Vec::with_capacity(b * k * plane);
        let mut view1 = Vec::with_capacity(b * plane);
        let mut view2 = Vec::with_capacity(b * plane);
        let mut gaze = Vec::with_capacity(b * k * 2);
        let mut gaze_valid = Vec::with_capacity(b * k);
        let mut labels = Vec::with_capacity(b * k * 6);
        let mut mask = Vec::with_capacity(b * k * 6);
        for (j, &i) in indices.iter().enumerate() {
            let seq =
                ds.sequences.get(i).ok_or_else(|| DataError::Config(format!("sequence index {i} out of range")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, step, j as u64));
            let a = augment(seq, size, jitter, &mut rng);
            frames.extend(a.frames);
            view1.extend(a.view1);
            view2.extend(a.view2);
            gaze.extend(a.gaze);
            gaze_valid.extend(a.gaze_valid);
            labels.extend(a.movement.labels);
            mask.extend(a.movement.mask);
        }
        Ok(Self {
            indices: indices.to_vec(),
            frames: Tensor::new([b, k, 3, size, size], frames)?,
            gaze,
            gaze_valid,
            movement: MovementTarget { labels, mask },
            view1: Tensor::new([b, 3, size, size], view1)?,
            view2: Tensor::new([b, 3, size, size], view2)?,
        })
    }
}

/// The first batch of the epoch-0 order for `seed`.
pub fn sample_batch(ds: &Dataset, batch_size: usize, seed: u64) -> Result<Batch> {
    let sampler = Sampler::new(ds.len(), batch_size, seed)?;
    let first = sampler.batches(0).remove(0);
    Batch::assemble(ds, &first, &JitterConfig::default(), seed, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_world, WorldConfig};

    fn ds() -> Dataset {
        let cfg = WorldConfig { num_sequences: 10, image_size: 8, ..WorldConfig::default() };
        generate_synthetic_world(&cfg, 0).unwrap()
    }

    #[test]
    fn same_seed_same_batch() {
        let d = ds();
        assert_eq!(sample_batch(&d, 4, 3).unwrap(), sample_batch(&d, 4, 3).unwrap());
        assert_ne!(sample_batch(&d, 4, 3).unwrap().indices, sample_batch(&d, 4, 4).unwrap().indices);
    }

    #[test]
    fn epoch_covers_each_sequence_once() {
        let s = Sampler::new(10, 3, 7).unwrap();
        for e in 0..5 {
            let mut counts = [0; 10];
            for b in s.batches(e) {
                for i in b {
                    counts[i] += 1;
                }
            }
            assert_eq!(counts, [1; 10]);
        }
        assert_ne!(s.permutation(0), s.permutation(1));
        assert_eq!(s.batches_per_epoch(), 4);
    }

    #[test]
    fn batches_have_k_frames() {
        let b = sample_batch(&ds(), 4, 1).unwrap();
        assert_eq!(b.frames.shape(), &[4, 5, 3, 8, 8]);
        assert_eq!(b.movement.steps(), 20);
        assert_eq!(b.view1.shape(), &[4, 3, 8, 8]);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        assert!(sample_batch(&ds(), 11, 0).is_err());
    }
}
