//! Recovers the delay between two noisy recordings of the same sound from
//! normalized cross-correlation.

use ego_interact::sync::{audio_offset, AudioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let rate = 16_000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let source: Vec<f64> = (0..40_000).map(|_| noise.sample(&mut rng)).collect();
    for (delay, snr_db) in [(1000usize, f64::INFINITY), (2345, 10.0), (777, 0.0)] {
        let sigma = 10f64.powf(-snr_db / 20.0);
        let mut corrupt = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v + sigma * noise.sample(&mut rng)).collect() };
        // b[n] = a[n − delay]
        let a = corrupt(&source[delay..delay + 32_000]);
        let b = corrupt(&source[..32_000]);
        let secs = audio_offset(&a, &b, rate, &AudioConfig::default()).unwrap();
        println!("true delay {delay:>5} samples, SNR {snr_db:>4} dB -> estimated {:.3} samples", secs * rate);
    }
}
