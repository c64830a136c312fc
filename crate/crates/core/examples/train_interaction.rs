//! Trains a small model with the full interaction objective (gaze,
//! movement and InfoNCE) and prints per-epoch losses.

use ego_interact::data::{generate_synthetic_world, WorldConfig};
use ego_interact::encoder::ModelConfig;
use ego_interact::nn::BackboneConfig;
use ego_interact::trainer::{ObjectiveMode, TrainConfig, Trainer};

fn main() {
    let world = WorldConfig { num_sequences: 128, image_size: 16, seq_len: 5, ..Default::default() };
    let ds = generate_synthetic_world(&world, 1).unwrap();
    let cfg = TrainConfig {
        mode: ObjectiveMode::VisMoveAttn,
        epochs: 4,
        batch_size: 16,
        bank_size: 256,
        model: ModelConfig {
            backbone: BackboneConfig {
                in_channels: 3,
                input_size: 16,
                stem_stride: 1,
                channels: vec![4, 8, 16],
                strides: vec![1, 2, 2],
            },
            reduced_channels: 4,
            hidden: 24,
            encoder_layers: 1,
            decoder_layers: 1,
            seq_len: 5,
            gaze_embed: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, &ds).unwrap();
    println!("epoch  L_total  L_attn  L_move  L_vis");
    let report = trainer
        .run(&ds, |e| {
            println!("{:>5}  {:.4}  {:.4}  {:.4}  {:.4}", e.epoch, e.total, e.attention, e.movement, e.visual)
        })
        .unwrap();
    // L_vis grows while the memory bank fills with negatives, so the total
    // can rise over the first epochs.
    println!(
        "{} steps in {:.1}s, total loss change {:+.1}%",
        report.steps,
        report.wall_seconds,
        -100.0 * report.total_drop().unwrap_or(0.0)
    );
}
