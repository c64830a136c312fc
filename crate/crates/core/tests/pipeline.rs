use ego_interact::data::{generate_synthetic_world, WorldConfig};
use ego_interact::encoder::ModelConfig;
use ego_interact::nn::BackboneConfig;
use ego_interact::objectives::VisualMode;
use ego_interact::trainer::{load_model, ObjectiveMode, TrainConfig, Trainer};
use ego_interact::transfer::{evaluate_tasks, FrozenBackbone, HeadConfig, TaskKind, TransferConfig};

fn config() -> TrainConfig {
    TrainConfig {
        mode: ObjectiveMode::VisMoveAttn,
        visual: VisualMode::Infonce,
        batch_size: 4,
        epochs: 2,
        bank_size: 16,
        model: ModelConfig {
            backbone: BackboneConfig {
                in_channels: 3,
                input_size: 16,
                stem_stride: 1,
                channels: vec![4, 6],
                strides: vec![2, 2],
            },
            reduced_channels: 2,
            hidden: 6,
            encoder_layers: 1,
            decoder_layers: 1,
            seq_len: 3,
            proj_dim: 8,
            gaze_embed: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn transfer() -> TransferConfig {
    TransferConfig {
        epochs: 2,
        batch_size: 8,
        heads: HeadConfig {
            reduce_channels: 3,
            hidden: 6,
            action_hidden: 5,
            mask_channels: 4,
            fusion_channels: 4,
            pyramid_channels: 4,
        },
        ..Default::default()
    }
}

#[test]
fn trained_backbone_transfers_without_being_modified() {
    let world = WorldConfig { num_sequences: 12, image_size: 16, seq_len: 3, ..Default::default() };
    let ds = generate_synthetic_world(&world, 2).unwrap();
    let mut trainer = Trainer::new(config(), &ds).unwrap();
    let report = trainer.run(&ds, |_| {}).unwrap();
    assert_eq!(report.epochs.len(), 2);

    let bb = FrozenBackbone::from_model(trainer.model(), trainer.params()).unwrap();
    for (name, t) in bb.params().iter() {
        assert_eq!(trainer.params().by_name(name), Some(t), "{name}");
    }
    let before = (bb.fingerprint(), trainer.params().fingerprint());
    let results = evaluate_tasks(&bb, &TaskKind::ALL, &ds, &transfer()).unwrap();
    assert_eq!(results.len(), 5);
    assert_eq!((bb.fingerprint(), trainer.params().fingerprint()), before);

    // The checkpoint reproduces the same backbone.
    let (model, store, cfg) = load_model(&trainer.checkpoint()).unwrap();
    assert_eq!(cfg, *trainer.config());
    let again = FrozenBackbone::from_model(&model, &store).unwrap();
    assert_eq!(again.fingerprint(), bb.fingerprint());
    assert_eq!(evaluate_tasks(&again, &TaskKind::ALL, &ds, &transfer()).unwrap(), results);
}

#[test]
fn random_baseline_depends_only_on_seed() {
    let cfg = config().model.backbone;
    let a = FrozenBackbone::random(cfg.clone(), 4).unwrap();
    let b = FrozenBackbone::random(cfg.clone(), 4).unwrap();
    let c = FrozenBackbone::random(cfg, 5).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), c.fingerprint());
}
