use std::collections::VecDeque;

use ego_interact::data::{flip_sequence, generate_synthetic_world, WorldConfig};
use ego_interact::encoder::MemoryBank;
use ego_interact::nn::checkpoint::Checkpoint;
use ego_interact::objectives::{infonce_loss, Denominator};
use ego_interact::sync::{audio_offset, estimate_homography, AudioConfig, Correspondence, Homography, RansacConfig};
use ego_interact::tensor::{Tape, Tensor};
use ego_interact::transfer::{per_class_top1, rmse_log};
use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn homography(rng: &mut ChaCha8Rng) -> Homography {
    Homography::from_matrix(Matrix3::new(
        rng.random_range(0.8..1.2),
        rng.random_range(-0.15..0.15),
        rng.random_range(-30.0..30.0),
        rng.random_range(-0.15..0.15),
        rng.random_range(0.8..1.2),
        rng.random_range(-30.0..30.0),
        rng.random_range(-3e-4..3e-4),
        rng.random_range(-3e-4..3e-4),
        1.0,
    ))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Scaling both image planes by `s` conjugates the homography by
    /// `diag(s, s, 1)`, so scaled points map exactly like unscaled ones.
    #[test]
    fn homography_commutes_with_scaling(seed in any::<u64>(), s in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = homography(&mut rng);
        let pts: Vec<[f64; 2]> = (0..20).map(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)]).collect();
        let scaled: Vec<Correspondence> = pts
            .iter()
            .map(|p| {
                let q = h.apply(*p).unwrap();
                Correspondence::new(s * p[0], s * p[1], s * q[0], s * q[1])
            })
            .collect();
        let cfg = RansacConfig { threshold: 3.0 * s, seed, ..Default::default() };
        let hs = estimate_homography(&scaled, &cfg).unwrap();
        for p in &pts {
            let want = h.apply(*p).unwrap();
            let got = hs.apply([s * p[0], s * p[1]]).unwrap();
            prop_assert!((got[0] / s - want[0]).abs() < 1e-6 && (got[1] / s - want[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn audio_offset_ignores_gain(seed in any::<u64>(), d in -300i64..300, gain in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<f64> = (0..6000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let off = d.unsigned_abs() as usize;
        let n = 5000;
        let (a, b) = if d >= 0 { (&src[off..off + n], &src[..n]) } else { (&src[..n], &src[off..off + n]) };
        let cfg = AudioConfig { min_overlap_seconds: 0.25 };
        let x = audio_offset(a, b, 4000.0, &cfg).unwrap();
        let scaled: Vec<f64> = b.iter().map(|v| v * gain).collect();
        let y = audio_offset(a, &scaled, 4000.0, &cfg).unwrap();
        prop_assert!((x * 4000.0 - d as f64).abs() < 0.5);
        prop_assert!((x - y).abs() < 1e-9);
    }

    /// With every similarity tied the positive has probability 1/(K+1).
    #[test]
    fn infonce_uniform_is_log_k_plus_one(k in 1usize..300, d in 1usize..16, tau in 0.01f64..2.0) {
        let q = Tensor::from_fn([1, d], |i| if i == 0 { 1.0 } else { 0.0 });
        let bank = Tensor::from_fn([k, d], |i| if i % d == 0 { 1.0 } else { 0.0 });
        let mut tape = Tape::new();
        let qv = tape.constant(q.clone());
        let kv = tape.constant(q);
        let l = infonce_loss(&mut tape, qv, kv, Some(&bank), tau, Denominator::WithPositive).unwrap();
        prop_assert!((tape.item(l.value) - ((k + 1) as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn bank_matches_queue(cap in 1usize..40, dim in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = MemoryBank::new(cap, dim, seed);
        let mut queue: VecDeque<Vec<f64>> = bank.ordered().into_iter().map(<[f64]>::to_vec).collect();
        for _ in 0..50 {
            let rows = rng.random_range(1..3 * cap + 1);
            let keys: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0f32) as f64).collect();
            bank.push(&Tensor::new([rows, dim], keys.clone()).unwrap()).unwrap();
            for r in keys.chunks(dim) {
                queue.pop_front();
                queue.push_back(r.to_vec());
            }
            let got: Vec<Vec<f64>> = bank.ordered().into_iter().map(<[f64]>::to_vec).collect();
            prop_assert_eq!(got, Vec::from(queue.clone()));
        }
    }

    #[test]
    fn flip_is_an_involution(seed in 0u64..1000, size in prop::sample::select(vec![8usize, 12, 16])) {
        let cfg = WorldConfig { num_sequences: 2, image_size: size, seq_len: 3, ..Default::default() };
        let ds = generate_synthetic_world(&cfg, seed).unwrap();
        for s in &ds.sequences {
            prop_assert_eq!(&flip_sequence(&flip_sequence(s, size), size), s);
        }
    }

    #[test]
    fn class_accuracy_ignores_sample_order(seed in any::<u64>(), n in 1usize..100, classes in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs: Vec<(usize, usize)> =
            (0..n).map(|_| (rng.random_range(0..classes), rng.random_range(0..classes))).collect();
        let split = |p: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { p.iter().copied().unzip() };
        let (a, b) = split(&pairs);
        let x = per_class_top1(&a, &b, classes).unwrap();
        pairs.shuffle(&mut rng);
        let (a, b) = split(&pairs);
        let y = per_class_top1(&a, &b, classes).unwrap();
        prop_assert!((x.percent - y.percent).abs() < 1e-9);
        prop_assert_eq!(x.excluded, y.excluded);
    }

    /// A constant factor on every prediction gives `|ln c|`.
    #[test]
    fn rmse_log_of_uniform_scale(depths in prop::collection::vec(0.01f64..100.0, 1..50), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = depths.iter().map(|d| d * c).collect();
        prop_assert!((rmse_log(&scaled, &depths).unwrap() - c.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trips(shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ck = Checkpoint::new(serde_json::json!({"seed": seed}));
        for (i, s) in shapes.iter().enumerate() {
            let t = Tensor::from_fn(s.clone(), |_| rng.random_range(-5.0..5.0f32) as f64);
            ck.push(format!("t{i}"), t);
        }
        let (m, p) = ck.encode().unwrap();
        let back = Checkpoint::decode(&m, &p).unwrap();
        for i in 0..shapes.len() {
            prop_assert_eq!(back.get(&format!("t{i}")), ck.get(&format!("t{i}")));
        }
        let (m2, p2) = back.encode().unwrap();
        prop_assert_eq!((m, p), (m2, p2));
    }
}
