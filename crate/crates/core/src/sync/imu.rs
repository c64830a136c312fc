use nalgebra::Quaternion;

/// Orientation quaternion `(w, x, y, z)`.
pub type Quat = [f64; 4];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuatSample {
    pub time: f64,
    pub q: Quat,
}

pub const NUM_SENSORS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sensor {
    Torso,
    Neck,
    RightTricep,
    LeftTricep,
    RightForearm,
    LeftForearm,
    RightThigh,
    LeftThigh,
    RightShin,
    LeftShin,
}

impl Sensor {
    pub const ALL: [Sensor; NUM_SENSORS] = [
        Sensor::Torso,
        Sensor::Neck,
        Sensor::RightTricep,
        Sensor::LeftTricep,
        Sensor::RightForearm,
        Sensor::LeftForearm,
        Sensor::RightThigh,
        Sensor::LeftThigh,
        Sensor::RightShin,
        Sensor::LeftShin,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Torso => "torso",
            Sensor::Neck => "neck",
            Sensor::RightTricep => "right_tricep",
            Sensor::LeftTricep => "left_tricep",
            Sensor::RightForearm => "right_forearm",
            Sensor::LeftForearm => "left_forearm",
            Sensor::RightThigh => "right_thigh",
            Sensor::LeftThigh => "left_thigh",
            Sensor::RightShin => "right_shin",
            Sensor::LeftShin => "left_shin",
        }
    }

    /// Accepts a numeric index or a sensor name.
    pub fn parse(s: &str) -> Option<Sensor> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return Self::ALL.get(i).copied();
        }
        Self::ALL.iter().copied().find(|x| x.name() == s)
    }
}

fn to_na(q: Quat) -> Quaternion<f64> {
    Quaternion::new(q[0], q[1], q[2], q[3])
}

/// Rotation angle of `a⁻¹·b` in radians, in `[0, π]`. Insensitive to the
/// sign of either quaternion.
pub fn relative_angle(a: Quat, b: Quat) -> f64 {
    let (qa, qb) = (to_na(a), to_na(b));
    let rel = qa.conjugate() * qb / (qa.norm() * qb.norm());
    let v = rel.imag().norm();
    2.0 * v.atan2(rel.w.abs())
}

/// Index of the sample whose timestamp is closest to `t`. `samples` must be
/// sorted by time.
fn nearest(samples: &[QuatSample], t: f64) -> Option<&QuatSample> {
    let i = samples.partition_point(|s| s.time < t);
    let after = samples.get(i);
    let before = i.checked_sub(1).and_then(|j| samples.get(j));
    match (before, after) {
        (Some(b), Some(a)) => Some(if (t - b.time) <= (a.time - t) { b } else { a }),
        (b, a) => b.or(a),
    }
}

/// Orientation change between consecutive frames for one sensor stream.
///
/// Entry `i` compares the samples nearest to `frame_times[i]` and
/// `frame_times[i + 1]`; it is `None` when either nearest sample is more than
/// `max_gap_intervals` frame intervals away.
pub fn movement_magnitudes(samples: &[QuatSample], frame_times: &[f64], max_gap_intervals: f64) -> Vec<Option<f64>> {
    if frame_times.len() < 2 {
        return Vec::new();
    }
    let lookup = |t: f64, interval: f64| -> Option<Quat> {
        let s = nearest(samples, t)?;
        ((s.time - t).abs() <= max_gap_intervals * interval).then_some(s.q)
    };
    frame_times
        .windows(2)
        .map(|w| {
            let interval = w[1] - w[0];
            let a = lookup(w[0], interval)?;
            let b = lookup(w[1], interval)?;
            Some(relative_angle(a, b))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn about_z(angle: f64) -> Quat {
        [(angle / 2.0).cos(), 0.0, 0.0, (angle / 2.0).sin()]
    }

    #[test]
    fn known_rotation() {
        let a = about_z(0.3);
        let b = about_z(0.3 + 0.5);
        assert!((relative_angle(a, b) - 0.5).abs() < 1e-12);
        assert!(relative_angle(a, a).abs() < 1e-12);
    }

    #[test]
    fn nearest_sample_and_gaps() {
        let fps = 6.0;
        let samples: Vec<QuatSample> = (0..30)
            .filter(|i| !(10..20).contains(i))
            .map(|i| QuatSample { time: i as f64 / 30.0, q: about_z(i as f64 * 0.01) })
            .collect();
        let frames: Vec<f64> = (0..6).map(|i| i as f64 / fps).collect();
        let m = movement_magnitudes(&samples, &frames, 2.0);
        assert_eq!(m.len(), 5);
        assert!((m[0].unwrap() - 0.05).abs() < 1e-9);
        assert!(m.iter().all(Option::is_some));
        let sparse = [samples[0], samples[samples.len() - 1]];
        let m = movement_magnitudes(&sparse, &frames, 2.0);
        assert_eq!(m[2], None);
    }

    #[test]
    fn sensor_names_round_trip() {
        for s in Sensor::ALL {
            assert_eq!(Sensor::parse(s.name()), Some(s));
            assert_eq!(Sensor::parse(&s.index().to_string()), Some(s));
        }
        assert_eq!(Sensor::parse("tail"), None);
    }

    fn quat() -> impl Strategy<Value = Quat> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 0.01)
    }

    proptest! {
        #[test]
        fn angle_ignores_quaternion_sign(a in quat(), b in quat()) {
            let neg = |q: Quat| [-q[0], -q[1], -q[2], -q[3]];
            let base = relative_angle(a, b);
            prop_assert!((relative_angle(neg(a), b) - base).abs() < 1e-9);
            prop_assert!((relative_angle(a, neg(b)) - base).abs() < 1e-9);
            prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&base));
        }
    }
}
