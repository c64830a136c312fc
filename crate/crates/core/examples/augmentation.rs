//! Horizontal flip with gaze and body-part relabelling, and the two
//! jittered views used by the contrastive objective.

use ego_interact::data::{augment, flip_sequence, generate_synthetic_world, JitterConfig, WorldConfig};
use ego_interact::encoder::PARTS;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let cfg = WorldConfig { num_sequences: 1, image_size: 16, ..Default::default() };
    let ds = generate_synthetic_world(&cfg, 3).unwrap();
    let s = &ds.sequences[0];
    let f = flip_sequence(s, ds.image_size);
    println!("gaze x {:.4} -> {:.4}", s.gaze[0], f.gaze[0]);
    for (i, part) in PARTS.iter().enumerate() {
        println!("{part:>10}: label {} -> {}", s.movement.labels[i], f.movement.labels[i]);
    }
    assert_eq!(&flip_sequence(&f, ds.image_size), s);

    let a = augment(s, ds.image_size, &JitterConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
    let diff: f64 = a.view1.iter().zip(&a.view2).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.view1.len() as f64;
    println!("flipped {}, mean |view1 - view2| {diff:.4}", a.flipped);
}
