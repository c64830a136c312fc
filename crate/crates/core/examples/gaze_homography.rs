//! Estimates the eye-tracker to head-camera homography with RANSAC from
//! correspondences contaminated by outliers, then remaps gaze points.

use ego_interact::sync::{estimate_homography, remap_gaze, Correspondence, Homography, RansacConfig};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let truth = Homography::from_matrix(Matrix3::new(1.1, 0.05, 12.0, -0.03, 0.95, -8.0, 1e-4, -5e-5, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pairs = Vec::new();
    for i in 0..60 {
        let p = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
        let q = if i % 4 == 0 {
            [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)]
        } else {
            let q = truth.apply(p).unwrap();
            [q[0] + rng.random_range(-0.5..0.5), q[1] + rng.random_range(-0.5..0.5)]
        };
        pairs.push(Correspondence::new(p[0], p[1], q[0], q[1]));
    }
    let h = estimate_homography(&pairs, &RansacConfig::default()).unwrap();
    println!("{} of {} correspondences kept", h.inliers, pairs.len());
    println!("{:.5}", h.matrix);
    for g in [[320.0, 240.0], [10.0, 20.0], [630.0, 470.0]] {
        let mapped = remap_gaze(&h, g, Some((640.0, 480.0)));
        println!("gaze {g:?} -> {mapped:?} (truth {:?})", truth.apply(g));
    }
}
