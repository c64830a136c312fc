//! Interaction sequences: the synthetic world generator, the on-disk
//! container, epoch sampling and augmentation.

mod augment;
mod container;
mod sampler;
mod world;

pub use augment::{augment, color_jitter, flip_sequence, AugmentedSequence, JitterConfig, FLIP_PART_PERMUTATION};
pub use container::{read_dataset, write_dataset, Dataset, InteractionSequence, DATASET_VERSION};
pub(crate) use sampler::derive_seed;
pub use sampler::{sample_batch, Batch, Sampler};
pub use world::{
    brightest_pixel, depth_map, generate_synthetic_world, render_frame, walkable_mask, ObjectSpec, SceneMeta, Script,
    Shape, WorldConfig, NUM_SCRIPTS, NUM_SHAPES,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
