use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{Result, SyncError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    /// Lags whose overlap is shorter than this are not considered.
    pub min_overlap_seconds: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self { min_overlap_seconds: 1.0 }
    }
}

/// Full linear cross-correlation `c[L] = Σₙ a[n]·b[n + L]` for
/// `L ∈ −(len_a − 1) ..= len_b − 1`, indexed from the most negative lag.
fn cross_correlation(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fa.resize(n, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fb.resize(n, Complex::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut prod);
    let scale = 1.0 / n as f64;
    let lags = a.len() + b.len() - 1;
    (0..lags)
        .map(|i| {
            let lag = i as isize - (a.len() as isize - 1);
            prod[lag.rem_euclid(n as isize) as usize].re * scale
        })
        .collect()
}

fn demean(x: &[f64]) -> Result<Vec<f64>> {
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    let out: Vec<f64> = x.iter().map(|v| v - mean).collect();
    if out.iter().all(|&v| v == 0.0) {
        return Err(SyncError::FlatSignal);
    }
    Ok(out)
}

fn prefix_squares(x: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(x.len() + 1);
    p.push(0.0);
    for v in x {
        p.push(p.last().expect("non-empty") + v * v);
    }
    p
}

/// Delay of `b` relative to `a` in seconds: if `b[n] = a[n − d]` the result
/// is `d / rate`. The lag maximizing normalized cross-correlation over the
/// overlapping region is refined by a parabola through its neighbours.
pub fn audio_offset(a: &[f64], b: &[f64], rate: f64, cfg: &AudioConfig) -> Result<f64> {
    let a = demean(a)?;
    let b = demean(b)?;
    let need = ((cfg.min_overlap_seconds * rate).ceil() as usize).max(1);
    let corr = cross_correlation(&a, &b);
    let pa = prefix_squares(&a);
    let pb = prefix_squares(&b);
    let (na, nb) = (a.len() as isize, b.len() as isize);
    let ncc = |i: usize| -> Option<f64> {
        let lag = i as isize - (na - 1);
        // Overlap: n ∈ [max(0, −L), min(na, nb − L)).
        let lo = 0.max(-lag);
        let hi = na.min(nb - lag);
        if hi - lo < need as isize {
            return None;
        }
        let ea = pa[hi as usize] - pa[lo as usize];
        let eb = pb[(hi + lag) as usize] - pb[(lo + lag) as usize];
        let denom = (ea * eb).sqrt();
        (denom > 0.0).then(|| corr[i] / denom)
    };
    let scores: Vec<Option<f64>> = (0..corr.len()).map(ncc).collect();
    let (best, peak) = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        })
        .ok_or(SyncError::InsufficientOverlap { needed: need })?;
    let mut delta = 0.0;
    if best > 0 && best + 1 < scores.len() {
        if let (Some(l), Some(r)) = (scores[best - 1], scores[best + 1]) {
            let curv = l - 2.0 * peak + r;
            if curv < 0.0 {
                delta = (0.5 * (l - r) / curv).clamp(-0.5, 0.5);
            }
        }
    }
    let lag = best as f64 - (na - 1) as f64 + delta;
    Ok(lag / rate)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    }

    /// Pair with `b[n] = a[n − d]`, both `len` samples long.
    fn shifted(src: &[f64], d: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
        (src[d..d + len].to_vec(), src[..len].to_vec())
    }

    #[test]
    fn zero_and_constructed_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rate = 8000.0;
        let src = noise(&mut rng, 30_000);
        let cfg = AudioConfig::default();
        let off = audio_offset(&src[..20_000], &src[..20_000], rate, &cfg).unwrap();
        assert!(off.abs() < 0.5 / rate);
        let (a, b) = shifted(&src, 1000, 20_000);
        let off = audio_offset(&a, &b, rate, &cfg).unwrap();
        assert!((off - 1000.0 / rate).abs() < 0.5 / rate, "{off}");
        let off = audio_offset(&b, &a, rate, &cfg).unwrap();
        assert!((off + 1000.0 / rate).abs() < 0.5 / rate, "{off}");
    }

    #[test]
    fn flat_signal_is_rejected() {
        assert!(matches!(
            audio_offset(&[1.0; 100], &[0.5, 0.2, 0.1], 10.0, &AudioConfig::default()),
            Err(SyncError::FlatSignal)
        ));
    }

    #[test]
    fn offset_is_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rate = 4000.0;
        for _ in 0..5 {
            let src = noise(&mut rng, 20_000);
            let d = rng.random_range(0..3000);
            let (a, mut b) = shifted(&src, d, 12_000);
            for v in b.iter_mut() {
                *v += 0.5 * rng.random_range(-1.0..1.0);
            }
            let ab = audio_offset(&a, &b, rate, &AudioConfig::default()).unwrap();
            let ba = audio_offset(&b, &a, rate, &AudioConfig::default()).unwrap();
            assert!((ab + ba).abs() <= 1.0 / rate, "{ab} {ba}");
        }
    }
}
