//! Turns ten simulated IMU orientation streams into per-frame body-part
//! movement labels with gray-area masks.

use ego_interact::sync::formats::{frame_times, label_histogram};
use ego_interact::sync::{label_movements, movement_magnitudes, QuatSample, Sensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let streams: Vec<Vec<QuatSample>> = Sensor::ALL
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut angle: f64 = 0.0;
            (0..600)
                .map(|t| {
                    // Bursts of motion every few seconds, faster for the limbs.
                    let active = (t / 50 + i) % 3 == 0;
                    angle += if active {
                        rng.random_range(0.02..0.08) * (1.0 + i as f64 / 4.0)
                    } else {
                        rng.random_range(0.0..0.002)
                    };
                    let (s, c) = (angle / 2.0).sin_cos();
                    QuatSample { time: t as f64 / 60.0, q: [c, s, 0.0, 0.0] }
                })
                .collect()
        })
        .collect();
    let times = frame_times(&streams, 6.0).unwrap();
    let mags: Vec<_> = streams.iter().map(|s| movement_magnitudes(s, &times, 2.0)).collect();
    let labels = label_movements(&mags).unwrap();
    println!("{} frames at 6 fps", times.len() - 1);
    for (part, [still, moving, gray, missing]) in label_histogram(&labels) {
        println!("{part:>10}: still {still:>3}  gray {gray:>3}  moving {moving:>3}  missing {missing}");
    }
    for w in labels.warnings {
        println!("warning: {w}");
    }
}
