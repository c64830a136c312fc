//! Frozen-backbone transfer: trains task heads for all five downstream
//! tasks on top of a briefly trained backbone and a random one.

use ego_interact::data::{generate_synthetic_world, WorldConfig};
use ego_interact::encoder::ModelConfig;
use ego_interact::nn::BackboneConfig;
use ego_interact::trainer::{TrainConfig, Trainer};
use ego_interact::transfer::{evaluate_tasks, FrozenBackbone, HeadConfig, ResultsTable, TaskKind, TransferConfig};

fn main() {
    let world = WorldConfig { num_sequences: 96, image_size: 16, seq_len: 3, ..Default::default() };
    let ds = generate_synthetic_world(&world, 2).unwrap();
    let backbone = BackboneConfig {
        in_channels: 3,
        input_size: 16,
        stem_stride: 1,
        channels: vec![4, 8, 16],
        strides: vec![1, 2, 2],
    };
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        bank_size: 128,
        model: ModelConfig {
            backbone: backbone.clone(),
            reduced_channels: 4,
            hidden: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            seq_len: 3,
            gaze_embed: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, &ds).unwrap();
    trainer.run(&ds, |_| {}).unwrap();

    let transfer = TransferConfig {
        epochs: 10,
        heads: HeadConfig {
            reduce_channels: 8,
            hidden: 32,
            action_hidden: 16,
            mask_channels: 8,
            fusion_channels: 8,
            pyramid_channels: 8,
        },
        ..Default::default()
    };
    let trained = FrozenBackbone::from_model(trainer.model(), trainer.params()).unwrap();
    let random = FrozenBackbone::random(backbone, 0).unwrap();
    let mut table = ResultsTable { config: serde_json::to_value(&transfer).unwrap(), ..Default::default() };
    table.push("vis-move-attn", evaluate_tasks(&trained, &TaskKind::ALL, &ds, &transfer).unwrap());
    table.push("random-init", evaluate_tasks(&random, &TaskKind::ALL, &ds, &transfer).unwrap());
    table.write_csv(std::io::stdout()).unwrap();
}
