use crate::encoder::NUM_PARTS;
use crate::objectives::MovementTarget;

/// Sensor indices belonging to each body part, in part order.
pub const PART_SENSORS: [&[usize]; NUM_PARTS] = [&[0], &[1], &[2, 4], &[3, 5], &[6, 8], &[7, 9]];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensorLabel {
    Still,
    Moving,
    /// Between the tertile thresholds: ambiguous, excluded from supervision.
    Gray,
    /// No sample close enough to the frame.
    Missing,
}

/// Lower and upper thresholds at one and two thirds of the observed range.
/// `None` when there are no values or the range is zero.
pub fn tertile_thresholds(values: &[Option<f64>]) -> Option<(f64, f64)> {
    let (lo, hi) =
        values.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !range.is_finite() || range <= 0.0 {
        return None;
    }
    Some((lo + range / 3.0, lo + 2.0 * range / 3.0))
}

/// Labels one sensor's magnitudes against its own tertiles. A constant
/// series is entirely gray.
pub fn label_sensor(values: &[Option<f64>]) -> Vec<SensorLabel> {
    let thresholds = tertile_thresholds(values);
    values
        .iter()
        .map(|v| match (v, thresholds) {
            (None, _) => SensorLabel::Missing,
            (Some(_), None) => SensorLabel::Gray,
            (Some(v), Some((t1, t2))) => {
                if *v < t1 {
                    SensorLabel::Still
                } else if *v > t2 {
                    SensorLabel::Moving
                } else {
                    SensorLabel::Gray
                }
            }
        })
        .collect()
}

/// Combines member sensors into a part label and supervision mask. Any
/// moving member makes the part moving. Otherwise any gray or missing member
/// masks the part out, and all-still members give a supervised zero.
pub fn group_label(members: &[SensorLabel]) -> (u8, bool) {
    if members.contains(&SensorLabel::Moving) {
        (1, true)
    } else if members.iter().any(|m| matches!(m, SensorLabel::Gray | SensorLabel::Missing)) {
        (0, false)
    } else {
        (0, true)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelOutput {
    /// `[sensor][step]`.
    pub sensors: Vec<Vec<SensorLabel>>,
    pub target: MovementTarget,
    pub warnings: Vec<String>,
}

/// Labels a recording given per-sensor magnitudes (`[sensor][step]`, sensors
/// in [`super::Sensor`] order).
pub fn label_movements(magnitudes: &[Vec<Option<f64>>]) -> super::Result<LabelOutput> {
    use super::{SyncError, NUM_SENSORS};
    if magnitudes.len() != NUM_SENSORS {
        return Err(SyncError::Format(format!("expected {NUM_SENSORS} sensor streams, got {}", magnitudes.len())));
    }
    let steps = magnitudes[0].len();
    if magnitudes.iter().any(|m| m.len() != steps) {
        return Err(SyncError::Format("sensor streams have different lengths".into()));
    }
    let mut warnings = Vec::new();
    let sensors: Vec<Vec<SensorLabel>> = magnitudes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if tertile_thresholds(m).is_none() {
                let name = super::Sensor::ALL[i].name();
                warnings.push(format!("sensor {name} has a constant or empty series; all steps are gray"));
            }
            label_sensor(m)
        })
        .collect();
    let mut labels = Vec::with_capacity(steps * NUM_PARTS);
    let mut mask = Vec::with_capacity(steps * NUM_PARTS);
    for t in 0..steps {
        for members in PART_SENSORS {
            let m: Vec<SensorLabel> = members.iter().map(|&s| sensors[s][t]).collect();
            let (l, on) = group_label(&m);
            labels.push(l);
            mask.push(on);
        }
    }
    let target = MovementTarget::new(labels, mask).map_err(|e| SyncError::Format(e.to_string()))?;
    Ok(LabelOutput { sensors, target, warnings })
}
