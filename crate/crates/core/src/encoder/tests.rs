use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{grad_check_params, BackboneConfig, ParamStore};
use crate::objectives::{
    gaze_loss, infonce_loss, movement_loss, total_loss, Denominator, LossParts, LossWeights, MovementTarget,
};
use crate::tensor::{GradCheckOptions, Tape, Tensor};

fn micro_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            in_channels: 3,
            input_size: 8,
            stem_stride: 1,
            channels: vec![2, 3],
            strides: vec![1, 2],
        },
        reduced_channels: 2,
        hidden: 3,
        encoder_layers: 2,
        decoder_layers: 2,
        seq_len: 2,
        proj_dim: 4,
        gaze_conditioned: false,
        gaze_embed: 3,
        ae_decoder: false,
        ae_channels: 2,
    }
}

fn build(config: ModelConfig, seed: u64) -> (InteractionModel, ParamStore) {
    InteractionModel::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn images(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0))
}

#[test]
fn contrastive_vectors_are_unit_norm() {
    let (model, store) = build(ModelConfig::default(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(images(&mut rng, &[3, 3, 56, 56]));
    let enc = model.encode_frame(&mut tape, &p, x).unwrap();
    assert_eq!(tape.shape(enc.spatial), &[3, 16, 7, 7]);
    assert_eq!(tape.shape(enc.contrastive), &[3, 32]);
    for row in tape.value(enc.contrastive).data().chunks(32) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }
}

#[test]
fn identical_images_give_identical_encodings() {
    let (model, store) = build(micro_config(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = images(&mut rng, &[1, 3, 8, 8]);
    let both = Tensor::new([2, 3, 8, 8], img.data().repeat(2)).unwrap();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(both);
    let enc = model.encode_frame(&mut tape, &p, x).unwrap();
    let z = tape.value(enc.contrastive).data();
    assert_eq!(z[..4], z[4..]);
}

#[test]
fn zeroed_heads_predict_zero() {
    let (model, mut store) = build(micro_config(), 1);
    model.zero_heads(&mut store);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let frames = tape.constant(images(&mut rng, &[2, 2, 3, 8, 8]));
    let out = model.predict_sequence(&mut tape, &p, frames, None).unwrap();
    assert_eq!(tape.shape(out.gaze), &[2, 2, 2]);
    assert_eq!(tape.shape(out.movement), &[2, 2, 6]);
    assert!(tape.value(out.gaze).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(out.movement).data().iter().all(|&v| v == 0.0));
}

#[test]
fn wrong_sequence_length_is_rejected() {
    let (model, store) = build(micro_config(), 1);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let frames = tape.constant(Tensor::zeros([1, 3, 3, 8, 8]));
    assert!(model.predict_sequence(&mut tape, &p, frames, None).is_err());
    let frames = tape.constant(Tensor::zeros([1, 2, 3, 8, 8]));
    let gaze = Tensor::zeros([1, 2, 2]);
    assert!(model.predict_sequence(&mut tape, &p, frames, Some(&gaze)).is_err());
}

#[test]
fn reversing_frames_changes_predictions() {
    let (model, store) = build(micro_config(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = images(&mut rng, &[1, 3, 8, 8]);
    let b = images(&mut rng, &[1, 3, 8, 8]);
    let run = |first: &Tensor, second: &Tensor| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let frames = Tensor::new([1, 2, 3, 8, 8], [first.data(), second.data()].concat()).unwrap();
        let f = tape.constant(frames);
        let out = model.predict_sequence(&mut tape, &p, f, None).unwrap();
        tape.value(out.movement).clone()
    };
    assert_ne!(run(&a, &b), run(&b, &a));
}

#[test]
fn gaze_input_moves_movement_logits() {
    let cfg = ModelConfig { gaze_conditioned: true, ..micro_config() };
    let (model, store) = build(cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames = images(&mut rng, &[1, 2, 3, 8, 8]);
    let run = |g: &Tensor| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let f = tape.constant(frames.clone());
        let out = model.predict_sequence(&mut tape, &p, f, Some(g)).unwrap();
        tape.value(out.movement).clone()
    };
    let g0 = Tensor::new([1, 2, 2], vec![0.2, 0.3, 0.4, 0.5]).unwrap();
    let g1 = Tensor::new([1, 2, 2], vec![0.7, 0.3, 0.4, 0.9]).unwrap();
    let (m0, m1) = (run(&g0), run(&g1));
    let diff: f64 = m0.data().iter().zip(m1.data()).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 0.0);
}

/// Full weighted objective of the micro-model, differentiated with respect
/// to every query parameter.
#[test]
fn composite_objective_passes_grad_check() {
    let (model, store) = build(micro_config(), 11);
    let key = model.key_store(&store).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 2;
    let frames = images(&mut rng, &[n, 2, 3, 8, 8]);
    let view1 = images(&mut rng, &[n, 3, 8, 8]);
    let view2 = images(&mut rng, &[n, 3, 8, 8]);
    let gaze_t: Vec<f64> = (0..n * 2 * 2).map(|_| rng.random_range(0.0..1.0)).collect();
    let valid = vec![true, true, false, true];
    let labels: Vec<u8> = (0..n * 2 * 6).map(|_| rng.random_range(0..2)).collect();
    let mask: Vec<bool> = (0..n * 2 * 6).map(|_| rng.random_bool(0.7)).collect();
    let target = MovementTarget::new(labels, mask).unwrap();
    let bank = MemoryBank::new(8, 4, 5).as_tensor().unwrap();

    let mut tape = Tape::new();
    let kp = key.bind(&mut tape, false);
    let v2 = tape.constant(view2.clone());
    let kf = model.backbone.forward(&mut tape, &kp, v2).unwrap().features;
    let kz = model.project(&mut tape, &kp, kf).unwrap();
    let keys = tape.value(kz).clone();

    let weights = LossWeights::default();
    let ids: Vec<_> = store.ids().collect();
    let err = grad_check_params(&store, &ids, GradCheckOptions::default(), |tape, p| {
        let f = tape.constant(frames.clone());
        let seq = model.predict_sequence(tape, p, f, None)?;
        let att = gaze_loss(tape, seq.gaze, &gaze_t, &valid, weights.delta)?;
        let mov = movement_loss(tape, seq.movement, &target)?;
        let v1 = tape.constant(view1.clone());
        let q = model.encode_frame(tape, p, v1)?.contrastive;
        let k = tape.constant(keys.clone());
        let vis = infonce_loss(tape, q, k, Some(&bank), 0.07, Denominator::WithPositive)?;
        let parts = LossParts { attention: Some(att.value), movement: Some(mov), visual: Some(vis.value) };
        Ok(total_loss(tape, parts, &weights)?.total)
    });
    assert!(err < 1e-3, "composite grad check error {err}");
}

#[test]
fn reconstruction_shape_zero_and_gradients() {
    let cfg = ModelConfig { ae_decoder: true, ..ModelConfig::default() };
    let (model, mut store) = build(cfg, 0);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let feat = tape.constant(Tensor::full([1, 128, 7, 7], 0.1));
    let img = model.reconstruct(&mut tape, &p, feat).unwrap();
    assert_eq!(tape.shape(img), &[1, 3, 56, 56]);

    model.ae.as_ref().unwrap().zero(&mut store);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let feat = tape.constant(Tensor::zeros([1, 128, 7, 7]));
    let img = model.reconstruct(&mut tape, &p, feat).unwrap();
    assert!(tape.value(img).data().iter().all(|&v| v == 0.0));

    let micro = ModelConfig { ae_decoder: true, ..micro_config() };
    let (model, store) = build(micro, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let feat = images(&mut rng, &[1, 3, 4, 4]);
    let ids = model.ae.as_ref().unwrap().param_ids();
    let err = grad_check_params(&store, &ids, GradCheckOptions::default(), |tape, p| {
        let f = tape.constant(feat.clone());
        model.reconstruct(tape, p, f)
    });
    assert!(err < 1e-4, "decoder grad check error {err}");
}

#[test]
fn key_store_mirrors_visual_parameters() {
    let (model, mut store) = build(micro_config(), 0);
    let mut key = model.key_store(&store).unwrap();
    assert_eq!(key.len(), model.visual_len());
    assert!(key.iter().all(|(n, _)| n.starts_with("backbone.") || n.starts_with("proj.")));
    // Closed form after t updates with a frozen query.
    let k0 = key.clone();
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = (*v * 0.5 + 0.25) as f32 as f64);
    }
    let m: f64 = 0.9;
    for t in 1..=10 {
        momentum_update(&mut key, &store, m).unwrap();
        for id in key.ids() {
            let q = store.get(id).data();
            for ((k, k0), q) in key.get(id).data().iter().zip(k0.get(id).data()).zip(q) {
                let expected = q + m.powi(t) * (k0 - q);
                assert!((k - expected).abs() < 1e-6, "t={t}: {k} vs {expected}");
            }
        }
    }
}
