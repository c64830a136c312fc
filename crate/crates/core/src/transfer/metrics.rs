use super::{Result, TransferError};

/// Class-balanced accuracy and the classes left out for lack of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassAccuracy {
    /// Mean over present classes of their within-class accuracy, in percent.
    pub percent: f64,
    pub excluded: Vec<usize>,
}

/// Mean per-class top-1 accuracy. Classes with no samples in `labels` are
/// excluded from the mean and reported.
pub fn per_class_top1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ClassAccuracy> {
    if preds.len() != labels.len() {
        return Err(TransferError::Metric(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(TransferError::Metric("no labels".into()));
    }
    let mut total = vec![0usize; num_classes];
    let mut correct = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if l >= num_classes {
            return Err(TransferError::Metric(format!("label {l} outside {num_classes} classes")));
        }
        total[l] += 1;
        correct[l] += usize::from(p == l);
    }
    let mut sum = 0.0;
    let mut present = 0;
    let mut excluded = Vec::new();
    for c in 0..num_classes {
        if total[c] == 0 {
            excluded.push(c);
        } else {
            sum += correct[c] as f64 / total[c] as f64;
            present += 1;
        }
    }
    Ok(ClassAccuracy { percent: 100.0 * sum / present as f64, excluded })
}

/// Intersection over union of two masks; two empty masks score 1.
pub fn iou(pred: &[bool], target: &[bool]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(TransferError::Metric(format!("mask sizes {} and {}", pred.len(), target.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.iter().zip(target) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `√mean((log d̂ − log d)²)`; every depth must be strictly positive.
pub fn rmse_log(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TransferError::Metric(format!("depth sizes {} and {}", pred.len(), target.len())));
    }
    let mut sum = 0.0;
    for (&a, &b) in pred.iter().zip(target) {
        if !(a > 0.0 && b > 0.0) {
            return Err(TransferError::Metric(format!("non-positive depth ({a}, {b})")));
        }
        let r = a.ln() - b.ln();
        sum += r * r;
    }
    Ok((sum / pred.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn class_mean_not_sample_mean() {
        let labels: Vec<usize> = [vec![0; 10], vec![1]].concat();
        let preds = vec![0; 11];
        let a = per_class_top1(&preds, &labels, 2).unwrap();
        assert!((a.percent - 50.0).abs() < 1e-12);
        assert!(a.excluded.is_empty());
    }

    #[test]
    fn perfect_and_excluded() {
        let a = per_class_top1(&[0, 2, 2], &[0, 2, 2], 3).unwrap();
        assert_eq!(a.percent, 100.0);
        assert_eq!(a.excluded, vec![1]);
        assert!(per_class_top1(&[], &[], 3).is_err());
        assert!(per_class_top1(&[0], &[5], 3).is_err());
    }

    #[test]
    fn random_predictions_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = 4;
        let labels: Vec<usize> = (0..40_000).map(|_| rng.random_range(0..c)).collect();
        let preds: Vec<usize> = (0..40_000).map(|_| rng.random_range(0..c)).collect();
        let a = per_class_top1(&preds, &labels, c).unwrap();
        assert!((a.percent - 25.0).abs() < 1.0, "{}", a.percent);
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(iou(&[true, false], &[false, true]).unwrap(), 0.0);
        assert_eq!(iou(&[false, false], &[false, false]).unwrap(), 1.0);
        assert!((iou(&[true, true], &[true, false]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rmse_log_cases() {
        let d = [0.5, 1.0, 3.0, 7.0];
        assert_eq!(rmse_log(&d, &d).unwrap(), 0.0);
        let e: Vec<f64> = d.iter().map(|v| v * std::f64::consts::E).collect();
        assert!((rmse_log(&e, &d).unwrap() - 1.0).abs() < 1e-12);
        let e2: Vec<f64> = d.iter().map(|v| v * std::f64::consts::E.powi(2)).collect();
        assert!((rmse_log(&e2, &d).unwrap() - 2.0).abs() < 1e-12);
        assert!(rmse_log(&[0.0], &[1.0]).is_err());
        assert!(rmse_log(&[1.0], &[-1.0]).is_err());
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 1..64), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<bool> = a.iter().map(|_| rng.random_bool(0.5)).collect();
            let x = iou(&a, &b).unwrap();
            prop_assert_eq!(x, iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
