//! Interrupts a run halfway, saves a checkpoint, resumes from disk and
//! checks the result matches an uninterrupted run bit for bit.

use ego_interact::data::{generate_synthetic_world, WorldConfig};
use ego_interact::encoder::ModelConfig;
use ego_interact::nn::checkpoint::Checkpoint;
use ego_interact::nn::BackboneConfig;
use ego_interact::trainer::{TrainConfig, Trainer};

fn main() {
    let world = WorldConfig { num_sequences: 24, image_size: 16, seq_len: 3, ..Default::default() };
    let ds = generate_synthetic_world(&world, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        bank_size: 32,
        model: ModelConfig {
            backbone: BackboneConfig {
                in_channels: 3,
                input_size: 16,
                stem_stride: 1,
                channels: vec![4, 8],
                strides: vec![2, 2],
            },
            reduced_channels: 2,
            hidden: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            seq_len: 3,
            gaze_embed: 4,
            ..Default::default()
        },
        ..Default::default()
    };

    let mut full = Trainer::new(cfg.clone(), &ds).unwrap();
    full.run(&ds, |_| {}).unwrap();

    let mut first = Trainer::new(cfg, &ds).unwrap();
    for _ in 0..first.total_steps() / 2 {
        first.step(&ds).unwrap();
    }
    let dir = std::env::temp_dir().join("ego-interact-resume");
    first.checkpoint().save(&dir).unwrap();
    let mut resumed = Trainer::resume(&Checkpoint::load(&dir).unwrap(), &ds).unwrap();
    println!("resumed at step {} of {}", resumed.step_count(), resumed.total_steps());
    resumed.run(&ds, |_| {}).unwrap();

    let a = full.checkpoint().encode().unwrap();
    let b = resumed.checkpoint().encode().unwrap();
    println!("parameters {}", full.params().fingerprint());
    println!("bitwise identical: {}", a == b);
    assert_eq!(a, b);
}
