//! The interaction model: backbone, 1×1 reducer, sequence-to-sequence LSTM,
//! gaze and movement heads, contrastive projection, momentum key encoder,
//! memory bank, and the reconstruction decoder used by the autoencoder
//! visual objective.

mod ae;
mod bank;
mod model;
mod momentum;

pub use ae::AeDecoder;
pub use bank::MemoryBank;
pub use model::{FrameEncoding, InteractionModel, ModelConfig, SequenceOutput};
pub use momentum::{momentum_update, DualEncoderState};

/// Body-part groups, in label column order.
pub const PARTS: [&str; 6] = ["torso", "neck", "right_arm", "left_arm", "right_leg", "left_leg"];
pub const NUM_PARTS: usize = 6;

#[cfg(test)]
mod tests;
