//! Predicts body-part movement from frames alone and from frames plus the
//! gaze track, and reports per-part accuracy on held-out sequences.

use ego_interact::data::{generate_synthetic_world, WorldConfig};
use ego_interact::encoder::{ModelConfig, PARTS};
use ego_interact::nn::BackboneConfig;
use ego_interact::objectives::VisualMode;
use ego_interact::trainer::{movement_accuracy, ObjectiveMode, TrainConfig, Trainer};
use ego_interact::transfer::split_indices;

fn main() {
    let world = WorldConfig { num_sequences: 240, image_size: 16, seq_len: 5, ..Default::default() };
    let ds = generate_synthetic_world(&world, 6).unwrap();
    let (train, test) = split_indices(ds.len(), 0.7, 0);
    let (train, test) = (ds.subset(&train), ds.subset(&test));
    let all: Vec<usize> = (0..test.len()).collect();
    for gaze in [false, true] {
        let cfg = TrainConfig {
            mode: ObjectiveMode::VisMove,
            visual: VisualMode::None,
            epochs: 20,
            batch_size: 16,
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
                gaze_conditioned: gaze,
                gaze_embed: 8,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut trainer = Trainer::new(cfg, &train).unwrap();
        trainer.run(&train, |_| {}).unwrap();
        let acc = movement_accuracy(trainer.model(), trainer.params(), &test, &all, 64).unwrap();
        let parts: Vec<String> =
            PARTS.iter().zip(&acc.per_part).map(|(p, a)| format!("{p} {:.1}", a.unwrap_or(f64::NAN))).collect();
        println!("{:<12} avg {:.2}  [{}]", if gaze { "visual+gaze" } else { "visual" }, acc.average, parts.join(", "));
    }
}
