//! Sequence flip and colour jitter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::container::InteractionSequence;
use crate::encoder::NUM_PARTS;
use crate::objectives::MovementTarget;

/// Column permutation applied to movement labels by a horizontal flip:
/// right and left arms swap, as do right and left legs.
pub const FLIP_PART_PERMUTATION: [usize; NUM_PARTS] = [0, 1, 3, 2, 5, 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    /// Brightness, contrast and saturation factors are drawn from
    /// `[1 − strength, 1 + strength]`.
    pub strength: f64,
    /// Hue shift drawn from `[−hue, hue]`, in turns.
    pub hue: f64,
    pub flip_probability: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self { strength: 0.4, hue: 0.1, flip_probability: 0.5 }
    }
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

/// Mirrors each row of a `[C, H, W]` block in place.
fn mirror(frame: &mut [f64], size: usize) {
    for row in frame.chunks_mut(size) {
        row.reverse();
    }
}

/// Applies brightness, contrast, saturation and hue jitter to a `[3, H, W]`
/// image; results stay in `[0, 1]`.
pub fn color_jitter(img: &mut [f64], size: usize, cfg: &JitterConfig, rng: &mut ChaCha8Rng) {
    let lo = (1.0 - cfg.strength).max(0.0);
    let hi = 1.0 + cfg.strength;
    let mut draw = |a: f64, b: f64| if b > a { rng.random_range(a..b) } else { a };
    let brightness = draw(lo, hi);
    let contrast = draw(lo, hi);
    let saturation = draw(lo, hi);
    let hue = draw(-cfg.hue, cfg.hue);
    let plane = size * size;
    let gray = |img: &[f64], i: usize| 0.299 * img[i] + 0.587 * img[plane + i] + 0.114 * img[2 * plane + i];
    for v in img.iter_mut() {
        *v = (*v * brightness).clamp(0.0, 1.0);
    }
    let mean = (0..plane).map(|i| gray(img, i)).sum::<f64>() / plane as f64;
    for v in img.iter_mut() {
        *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0);
    }
    for i in 0..plane {
        let g = gray(img, i);
        let mut px = [0.0; 3];
        for c in 0..3 {
            px[c] = ((img[c * plane + i] - g) * saturation + g).clamp(0.0, 1.0);
        }
        let (h, s, v) = rgb_to_hsv(px);
        let px = hsv_to_rgb(h + hue, s, v);
        for c in 0..3 {
            img[c * plane + i] = px[c].clamp(0.0, 1.0);
        }
    }
}

/// A training view of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSequence {
    /// `[k, 3, H, W]`.
    pub frames: Vec<f64>,
    pub gaze: Vec<f64>,
    pub gaze_valid: Vec<bool>,
    pub movement: MovementTarget,
    /// Two independently jittered copies of the first frame, `[3, H, W]`.
    pub view1: Vec<f64>,
    pub view2: Vec<f64>,
    pub flipped: bool,
}

/// Mirrors every frame, maps gaze `x ↦ 1 − x` and swaps left/right part
/// columns with their masks.
pub fn flip_sequence(seq: &InteractionSequence, size: usize) -> InteractionSequence {
    let mut out = seq.clone();
    for row in out.frames.chunks_mut(size) {
        row.reverse();
    }
    for t in 0..out.gaze_valid.len() {
        out.gaze[2 * t] = 1.0 - seq.gaze[2 * t];
    }
    out.movement = permute_parts(&seq.movement);
    out
}

fn permute_parts(m: &MovementTarget) -> MovementTarget {
    let mut labels = m.labels.clone();
    let mut mask = m.mask.clone();
    for (row, (lr, mr)) in labels.chunks_mut(NUM_PARTS).zip(mask.chunks_mut(NUM_PARTS)).enumerate() {
        for (dst, &src) in FLIP_PART_PERMUTATION.iter().enumerate() {
            lr[dst] = m.labels[row * NUM_PARTS + src];
            mr[dst] = m.mask[row * NUM_PARTS + src];
        }
    }
    MovementTarget { labels, mask }
}

/// Flips the whole sequence with the configured probability, then draws two
/// jittered views of its first frame.
pub fn augment(seq: &InteractionSequence, size: usize, cfg: &JitterConfig, rng: &mut ChaCha8Rng) -> AugmentedSequence {
    let flipped = rng.random_bool(cfg.flip_probability);
    let mut frames: Vec<f64> = seq.frames.iter().map(|&v| v as f64).collect();
    let mut gaze = seq.gaze.clone();
    let mut movement = seq.movement.clone();
    if flipped {
        mirror(&mut frames, size);
        for t in 0..seq.gaze_valid.len() {
            gaze[2 * t] = 1.0 - gaze[2 * t];
        }
        movement = permute_parts(&movement);
    }
    let first = &frames[..3 * size * size];
    let mut view1 = first.to_vec();
    let mut view2 = first.to_vec();
    color_jitter(&mut view1, size, cfg, rng);
    color_jitter(&mut view2, size, cfg, rng);
    AugmentedSequence { frames, gaze, gaze_valid: seq.gaze_valid.clone(), movement, view1, view2, flipped }
}
