pub mod cli;
pub mod data;
pub mod encoder;
pub mod nn;
pub mod objectives;
pub mod sync;
pub mod tensor;
pub mod trainer;
pub mod transfer;
