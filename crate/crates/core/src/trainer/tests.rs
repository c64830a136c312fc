use super::*;
use crate::data::{generate_synthetic_world, Dataset, WorldConfig};
use crate::encoder::ModelConfig;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::BackboneConfig;
use crate::objectives::VisualMode;

fn world(n: usize) -> Dataset {
    let cfg = WorldConfig { num_sequences: n, image_size: 16, seq_len: 3, ..Default::default() };
    generate_synthetic_world(&cfg, 11).unwrap()
}

fn tiny(mode: ObjectiveMode, visual: VisualMode) -> TrainConfig {
    TrainConfig {
        mode,
        visual,
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
            ae_channels: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn bytes(t: &Trainer) -> (Vec<u8>, Vec<u8>) {
    t.checkpoint().encode().unwrap()
}

#[test]
fn vis_mode_leaves_heads_without_gradient() {
    let ds = world(8);
    let t = Trainer::new(tiny(ObjectiveMode::Vis, VisualMode::Infonce), &ds).unwrap();
    let r = t.compute(&t.next_batch(&ds).unwrap()).unwrap();
    for id in t.model().head_ids() {
        assert!(r.grads.get(id).unwrap().iter().all(|&g| g == 0.0), "{}", t.params().name(id));
    }
    assert!(r.losses.grad_norm > 0.0);
}

#[test]
fn masked_legs_get_no_movement_gradient() {
    let ds = world(8);
    let mut cfg = tiny(ObjectiveMode::VisMove, VisualMode::Infonce);
    cfg.mask_parts = vec!["legs".into()];
    let t = Trainer::new(cfg, &ds).unwrap();
    let batch = t.next_batch(&ds).unwrap();
    assert!(batch.movement.mask.iter().enumerate().all(|(i, m)| i % 6 < 4 || !m));
    let r = t.compute(&batch).unwrap();
    let bias = t.model().head_ids()[3];
    let g = r.grads.get(bias).unwrap();
    assert_eq!(&g[4..], &[0.0, 0.0]);
}

#[test]
fn logged_components_recombine() {
    let ds = world(8);
    let cfg = tiny(ObjectiveMode::VisMoveAttn, VisualMode::Infonce);
    let w = cfg.effective_weights();
    let mut t = Trainer::new(cfg, &ds).unwrap();
    for _ in 0..3 {
        let l = t.step(&ds).unwrap();
        let recombined = w.alpha * l.attention + w.beta * l.movement + w.gamma * l.visual;
        assert!((l.total - recombined).abs() < 1e-5);
    }
    let report = t.run(&ds, |_| {}).unwrap();
    assert_eq!(report.epochs.len(), 2);
    for e in &report.epochs {
        assert!((e.total - (w.alpha * e.attention + w.beta * e.movement + w.gamma * e.visual)).abs() < 1e-5);
    }
}

#[test]
fn seeded_runs_are_identical() {
    let ds = world(8);
    let cfg = tiny(ObjectiveMode::VisMoveAttn, VisualMode::Infonce);
    let mut a = Trainer::new(cfg.clone(), &ds).unwrap();
    let mut b = Trainer::new(cfg, &ds).unwrap();
    a.run(&ds, |_| {}).unwrap();
    b.run(&ds, |_| {}).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn resume_matches_straight_run() {
    let ds = world(8);
    for visual in [VisualMode::Infonce, VisualMode::Ae] {
        let cfg = tiny(ObjectiveMode::VisMoveAttn, visual);
        let mut straight = Trainer::new(cfg.clone(), &ds).unwrap();
        for _ in 0..3 {
            straight.step(&ds).unwrap();
        }
        let (m, p) = bytes(&straight);
        straight.step(&ds).unwrap();

        let ck = Checkpoint::decode(&m, &p).unwrap();
        let mut resumed = Trainer::resume(&ck, &ds).unwrap();
        let mut again = Trainer::resume(&ck, &ds).unwrap();
        assert_eq!(bytes(&resumed), bytes(&again));
        resumed.step(&ds).unwrap();
        again.step(&ds).unwrap();
        assert_eq!(bytes(&resumed), bytes(&straight));
        assert_eq!(bytes(&again), bytes(&straight));
    }
}

#[test]
fn resume_rejects_changed_dimensions() {
    let ds = world(8);
    let cfg = tiny(ObjectiveMode::VisMoveAttn, VisualMode::Infonce);
    let t = Trainer::new(cfg.clone(), &ds).unwrap();
    let ck = t.checkpoint();
    let mut other = cfg.clone();
    other.model.hidden = 7;
    assert!(Trainer::resume_with(&ck, &ds, other).is_err());
    let mut longer = cfg;
    longer.epochs = 5;
    assert_eq!(Trainer::resume_with(&ck, &ds, longer).unwrap().total_steps(), 10);
    assert!(Trainer::resume(&ck, &world(9)).is_err());
}

#[test]
fn ae_mode_has_no_bank() {
    let ds = world(8);
    let mut t = Trainer::new(tiny(ObjectiveMode::Vis, VisualMode::Ae), &ds).unwrap();
    t.step(&ds).unwrap();
    assert!(t.dual().is_none());
    assert!(t.checkpoint().get("bank").is_none());
}

#[test]
fn bank_receives_keys_only_in_infonce_mode() {
    let ds = world(8);
    let mut t = Trainer::new(tiny(ObjectiveMode::Vis, VisualMode::Infonce), &ds).unwrap();
    let before = t.dual().unwrap().bank.clone();
    t.step(&ds).unwrap();
    let after = &t.dual().unwrap().bank;
    assert_eq!(after.head(), (before.head() + 4) % 16);
    assert_ne!(after, &before);
}

#[test]
fn non_finite_input_aborts_with_diagnostic() {
    let mut ds = world(8);
    for s in &mut ds.sequences {
        s.frames[0] = f32::NAN;
    }
    let mut t = Trainer::new(tiny(ObjectiveMode::VisMoveAttn, VisualMode::Infonce), &ds).unwrap();
    match t.step(&ds) {
        Err(TrainError::NonFinite(d)) => {
            assert!(!d.frames_finite);
            assert_eq!(d.indices.len(), 4);
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn mismatched_geometry_is_rejected() {
    let ds = world(8);
    let mut cfg = tiny(ObjectiveMode::Vis, VisualMode::Infonce);
    cfg.model.seq_len = 4;
    assert!(Trainer::new(cfg, &ds).is_err());
}

#[test]
fn report_csv_layout() {
    let ds = world(8);
    let mut t = Trainer::new(tiny(ObjectiveMode::Vis, VisualMode::Infonce), &ds).unwrap();
    let r = t.run(&ds, |_| {}).unwrap();
    let mut out = Vec::new();
    r.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# config: {"));
    assert_eq!(lines[1], "epoch,L_total,L_attn,L_move,L_vis");
    assert_eq!(lines.len(), 4);
    let parsed: TrainReport = serde_json::from_str(&r.summary()).unwrap();
    assert_eq!(parsed, r);
}

#[test]
fn movement_probe_scores_masked_frames_only() {
    let ds = world(6);
    let t = Trainer::new(tiny(ObjectiveMode::VisMove, VisualMode::Ae), &ds).unwrap();
    let acc = movement_accuracy(t.model(), t.params(), &ds, &[0, 1, 2, 3, 4, 5], 4).unwrap();
    let expected: usize = ds.sequences.iter().map(|s| s.movement.mask.iter().filter(|&&m| m).count()).sum();
    assert_eq!(acc.scored_frames, expected);
    assert_eq!(acc.per_part.len(), 6);
    for v in acc.per_part.iter().flatten() {
        assert!((0.0..=100.0).contains(v));
    }
}
