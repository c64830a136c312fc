use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, SyncError};

/// A point in the gaze camera and the matching point in the head camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub src: [f64; 2],
    pub dst: [f64; 2],
}

impl Correspondence {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { src: [x1, y1], dst: [x2, y2] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on forward reprojection error, in pixels.
    pub threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 2000, threshold: 3.0, min_inliers: 4, seed: 0 }
    }
}

/// Projective map normalized so that `h[2][2] = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    pub matrix: Matrix3<f64>,
    pub inliers: usize,
}

impl Homography {
    pub fn from_matrix(matrix: Matrix3<f64>) -> Self {
        Self { matrix, inliers: 0 }
    }

    /// Maps a point, or `None` when it lands at infinity (`|w| < 1e-9`).
    pub fn apply(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let v = self.matrix * Vector3::new(p[0], p[1], 1.0);
        if v.z.abs() < 1e-9 {
            return None;
        }
        Some([v.x / v.z, v.y / v.z])
    }

    pub fn reprojection_error(&self, c: &Correspondence) -> f64 {
        match self.apply(c.src) {
            Some(q) => (q[0] - c.dst[0]).hypot(q[1] - c.dst[1]),
            None => f64::INFINITY,
        }
    }
}

/// Maps a gaze point into the head frame. Returns `None` for points at
/// infinity or, when `frame = Some((width, height))`, outside `[0, w) × [0, h)`.
pub fn remap_gaze(h: &Homography, p: [f64; 2], frame: Option<(f64, f64)>) -> Option<[f64; 2]> {
    let q = h.apply(p)?;
    if !q[0].is_finite() || !q[1].is_finite() {
        return None;
    }
    if let Some((w, hgt)) = frame {
        if q[0] < 0.0 || q[0] >= w || q[1] < 0.0 || q[1] >= hgt {
            return None;
        }
    }
    Some(q)
}

/// Similarity that moves the centroid to the origin with mean distance √2.
fn normalizer(points: impl Iterator<Item = [f64; 2]> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if mean_dist < 1e-12 {
        return Err(SyncError::Degenerate);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// True when some three of the four points are (nearly) collinear.
fn minimal_set_degenerate(pts: &[[f64; 2]; 4]) -> bool {
    let scale = pts.iter().flat_map(|a| pts.iter().map(move |b| (a[0] - b[0]).hypot(a[1] - b[1]))).fold(0.0, f64::max);
    if scale == 0.0 {
        return true;
    }
    let tol = 1e-6 * scale * scale;
    [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)].iter().any(|&(i, j, k)| cross(pts[i], pts[j], pts[k]).abs() < tol)
}

/// Normalized direct linear transform over all given pairs (no outlier
/// rejection). Needs at least four pairs in general position.
pub fn fit_homography(pairs: &[Correspondence]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(SyncError::TooFewPoints(pairs.len()));
    }
    let t1 = normalizer(pairs.iter().map(|c| c.src))?;
    let t2 = normalizer(pairs.iter().map(|c| c.dst))?;
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in pairs.iter().enumerate() {
        let [x, y] = transform(&t1, c.src);
        let [u, v] = transform(&t2, c.dst);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(SyncError::Degenerate)?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    // A unique solution needs a one-dimensional null space.
    if s[order[1]] <= 1e-10 * s[order[s.len() - 1]] {
        return Err(SyncError::Degenerate);
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t2_inv = t2.try_inverse().ok_or(SyncError::Degenerate)?;
    let m = t2_inv * hn * t1;
    if m[(2, 2)].abs() < 1e-12 {
        return Err(SyncError::Degenerate);
    }
    let m = m / m[(2, 2)];
    if !m.iter().all(|v| v.is_finite()) || m.determinant().abs() < 1e-12 {
        return Err(SyncError::Degenerate);
    }
    Ok(Homography { matrix: m, inliers: pairs.len() })
}

fn inlier_set(h: &Homography, pairs: &[Correspondence], threshold: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut err = 0.0;
    for (i, c) in pairs.iter().enumerate() {
        let e = h.reprojection_error(c);
        if e < threshold {
            idx.push(i);
            err += e;
        }
    }
    (idx, err)
}

/// Robust homography from `src` to `dst`: RANSAC over minimal four-point
/// samples, then a refit on the consensus set.
pub fn estimate_homography(pairs: &[Correspondence], cfg: &RansacConfig) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(SyncError::TooFewPoints(pairs.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..cfg.iterations {
        let pick = sample(&mut rng, pairs.len(), 4);
        let subset: Vec<Correspondence> = pick.iter().map(|i| pairs[i]).collect();
        let src = [subset[0].src, subset[1].src, subset[2].src, subset[3].src];
        let dst = [subset[0].dst, subset[1].dst, subset[2].dst, subset[3].dst];
        if minimal_set_degenerate(&src) || minimal_set_degenerate(&dst) {
            continue;
        }
        let Ok(h) = fit_homography(&subset) else { continue };
        let (idx, err) = inlier_set(&h, pairs, cfg.threshold);
        let better = match &best {
            None => true,
            Some((b, be)) => idx.len() > b.len() || (idx.len() == b.len() && err < *be),
        };
        if better {
            let done = idx.len() == pairs.len();
            best = Some((idx, err));
            if done && err == 0.0 {
                break;
            }
        }
    }
    let (mut idx, _) = best.ok_or(SyncError::Degenerate)?;
    let needed = cfg.min_inliers.max(4);
    if idx.len() < needed {
        return Err(SyncError::Consensus { found: idx.len(), needed });
    }
    // Refit until the consensus set stops changing.
    let mut h = fit_homography(&idx.iter().map(|&i| pairs[i]).collect::<Vec<_>>())?;
    for _ in 0..5 {
        let (next, _) = inlier_set(&h, pairs, cfg.threshold);
        if next == idx || next.len() < needed {
            break;
        }
        idx = next;
        h = fit_homography(&idx.iter().map(|&i| pairs[i]).collect::<Vec<_>>())?;
    }
    h.inliers = idx.len();
    Ok(h)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn truth() -> Homography {
        Homography::from_matrix(Matrix3::new(1.1, 0.05, 12.0, -0.03, 0.95, -7.0, 1e-4, -2e-4, 1.0))
    }

    fn pairs_from(h: &Homography, pts: &[[f64; 2]]) -> Vec<Correspondence> {
        pts.iter()
            .map(|&p| {
                let q = h.apply(p).unwrap();
                Correspondence { src: p, dst: q }
            })
            .collect()
    }

    #[test]
    fn exact_pairs_recover_matrix() {
        let h = truth();
        let pts = [[0.0, 0.0], [640.0, 0.0], [640.0, 480.0], [0.0, 480.0], [320.0, 200.0], [100.0, 400.0]];
        let est = estimate_homography(&pairs_from(&h, &pts), &RansacConfig::default()).unwrap();
        let diff = (est.matrix - h.matrix).abs().max();
        assert!(diff < 1e-9, "{diff}");
        assert_eq!(est.inliers, 6);
    }

    #[test]
    fn translation_remap() {
        let h = Homography::from_matrix(Matrix3::new(1.0, 0.0, 2.0, 0.0, 1.0, -3.0, 0.0, 0.0, 1.0));
        let q = remap_gaze(&h, [0.0, 0.0], None).unwrap();
        assert!((q[0] - 2.0).abs() < 1e-12 && (q[1] + 3.0).abs() < 1e-12);
        assert_eq!(remap_gaze(&h, [0.0, 0.0], Some((640.0, 480.0))), None);
        assert!(remap_gaze(&h, [10.0, 10.0], Some((640.0, 480.0))).is_some());
    }

    #[test]
    fn point_at_infinity_is_invalid() {
        let h = Homography::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0));
        assert_eq!(remap_gaze(&h, [-1.0, 5.0], None), None);
    }

    #[test]
    fn rejects_too_few_and_collinear() {
        let h = truth();
        let three = pairs_from(&h, &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(estimate_homography(&three, &RansacConfig::default()), Err(SyncError::TooFewPoints(3))));
        let line: Vec<[f64; 2]> = (0..8).map(|i| [i as f64 * 10.0, i as f64 * 5.0]).collect();
        assert!(matches!(
            estimate_homography(&pairs_from(&h, &line), &RansacConfig::default()),
            Err(SyncError::Degenerate)
        ));
    }

    #[test]
    fn outliers_are_rejected() {
        let h = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 2]> =
            (0..60).map(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)]).collect();
        let mut pairs = pairs_from(&h, &pts);
        for c in pairs.iter_mut().take(20) {
            c.dst = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
        }
        let est = estimate_homography(&pairs, &RansacConfig::default()).unwrap();
        assert!(est.inliers >= 40);
        for c in &pairs[20..] {
            assert!(est.reprojection_error(c) < 1e-6);
        }
    }

    #[test]
    fn consensus_below_minimum_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs: Vec<Correspondence> = (0..30)
            .map(|_| {
                Correspondence::new(
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                )
            })
            .collect();
        let cfg = RansacConfig { min_inliers: 20, iterations: 200, ..Default::default() };
        assert!(matches!(estimate_homography(&pairs, &cfg), Err(SyncError::Consensus { .. })));
    }
}
