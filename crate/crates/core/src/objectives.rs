//! Training losses: Huber gaze loss, masked movement cross-entropy, InfoNCE
//! against a memory bank, the reconstruction loss, and their weighted sum.
//!
//! Per-step losses are means over the contributing entries of the whole
//! batch, not sums over time steps.

use serde::{Deserialize, Serialize};

use crate::encoder::NUM_PARTS;
use crate::nn::{NnError, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Gaze weight.
    pub alpha: f64,
    /// Movement weight.
    pub beta: f64,
    /// Visual weight.
    pub gamma: f64,
    /// Huber threshold.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.09, beta: 0.01, gamma: 0.9, delta: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || w.iter().all(|&x| x == 0.0) {
            return Err(NnError::Config(format!(
                "loss weights must be non-negative with at least one positive, got {w:?}"
            )));
        }
        if !(self.delta > 0.0) {
            return Err(NnError::Config(format!("huber delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Per-part movement labels for a block of time steps, row-major `[.., 6]`.
/// A false mask entry (gray area or ignored part) contributes nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct MovementTarget {
    pub labels: Vec<u8>,
    pub mask: Vec<bool>,
}

impl MovementTarget {
    pub fn new(labels: Vec<u8>, mask: Vec<bool>) -> Result<Self> {
        if labels.len() != mask.len() || !labels.len().is_multiple_of(NUM_PARTS) || labels.iter().any(|&l| l > 1) {
            return Err(NnError::Config(format!(
                "movement target needs equal-length 0/1 labels and mask in rows of {NUM_PARTS}"
            )));
        }
        Ok(Self { labels, mask })
    }

    pub fn steps(&self) -> usize {
        self.labels.len() / NUM_PARTS
    }

    /// Clears the mask for every selected part column.
    pub fn mask_parts(&mut self, parts: &[usize]) {
        for (i, m) in self.mask.iter_mut().enumerate() {
            if parts.contains(&(i % NUM_PARTS)) {
                *m = false;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GazeLoss {
    pub value: Var,
    /// Every frame was invalid; `value` is zero.
    pub no_valid_frames: bool,
}

/// Elementwise Huber loss on `[.., 2]` predictions, averaged over the
/// coordinates of valid frames.
pub fn gaze_loss(tape: &mut Tape, pred: Var, target: &[f64], valid: &[bool], delta: f64) -> Result<GazeLoss> {
    let n = tape.value(pred).numel();
    if target.len() != n || valid.len() * 2 != n {
        return Err(NnError::Config(format!(
            "gaze loss: {n} predictions, {} targets, {} validity flags",
            target.len(),
            valid.len()
        )));
    }
    let mask: Vec<bool> = valid.iter().flat_map(|&v| [v, v]).collect();
    let value = tape.masked_huber(pred, target, &mask, delta)?;
    Ok(GazeLoss { value, no_valid_frames: !valid.iter().any(|&v| v) })
}

/// Sigmoid cross-entropy averaged over mask-true entries.
pub fn movement_loss(tape: &mut Tape, logits: Var, target: &MovementTarget) -> Result<Var> {
    let labels: Vec<f64> = target.labels.iter().map(|&l| l as f64).collect();
    Ok(tape.masked_bce_with_logits(logits, &labels, &target.mask)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Positive and negatives share the softmax denominator.
    #[default]
    WithPositive,
    /// Negatives only.
    BankOnly,
}

#[derive(Clone, Copy, Debug)]
pub struct InfoNceLoss {
    pub value: Var,
    /// The bank was empty, so the loss carries no contrastive signal.
    pub warm_up: bool,
}

/// Mean over rows of `−log softmax₀([q·k⁺, q·M₀, …] / τ)`.
///
/// `q` and `keys` are `[N, D]`; `bank` is `[K, D]` or `None` when empty.
pub fn infonce_loss(
    tape: &mut Tape,
    q: Var,
    keys: Var,
    bank: Option<&Tensor>,
    tau: f64,
    denominator: Denominator,
) -> Result<InfoNceLoss> {
    let qs = tape.shape(q).to_vec();
    if qs.len() != 2 || tape.shape(keys) != qs.as_slice() {
        return Err(NnError::Config(format!(
            "infonce: query {qs:?} and key {:?} must both be [N, D]",
            tape.shape(keys)
        )));
    }
    let n = qs[0];
    let prod = tape.mul(q, keys)?;
    let pos = tape.sum_axis(prod, 1)?;
    let pos = tape.reshape(pos, &[n, 1])?;
    let pos = tape.mul_scalar(pos, 1.0 / tau);
    let Some(bank) = bank else {
        let zero = tape.constant(Tensor::scalar(0.0));
        return Ok(InfoNceLoss { value: zero, warm_up: true });
    };
    if bank.shape().len() != 2 || bank.shape()[1] != qs[1] {
        return Err(NnError::Config(format!("infonce: bank {:?} for {}-dim queries", bank.shape(), qs[1])));
    }
    let m = tape.constant(bank.clone());
    let mt = tape.transpose(m)?;
    let neg = tape.matmul(q, mt)?;
    let neg = tape.mul_scalar(neg, 1.0 / tau);
    let lse = match denominator {
        Denominator::WithPositive => {
            let all = tape.concat(&[pos, neg], 1)?;
            tape.log_sum_exp(all)
        }
        Denominator::BankOnly => tape.log_sum_exp(neg),
    };
    let lse = tape.reshape(lse, &[n, 1])?;
    let per_row = tape.sub(lse, pos)?;
    Ok(InfoNceLoss { value: tape.mean(per_row), warm_up: false })
}

/// Per-image `‖recon − image‖₂`, divided by the elements per image and
/// averaged over the batch. With `normalize == false` the plain norm is
/// averaged instead. Not differentiable where the difference is zero.
pub fn ae_loss(tape: &mut Tape, recon: Var, image: &Tensor, normalize: bool) -> Result<Var> {
    let s = tape.shape(recon).to_vec();
    if s != image.shape() || s.is_empty() {
        return Err(NnError::Config(format!("ae loss: reconstruction {s:?} vs image {:?}", image.shape())));
    }
    let n = s[0];
    let per = image.numel() / n;
    let target = tape.constant(image.clone());
    let d = tape.sub(recon, target)?;
    let sq = tape.mul(d, d)?;
    let sq = tape.reshape(sq, &[n, per])?;
    let ss = tape.sum_axis(sq, 1)?;
    let norm = tape.sqrt(ss);
    let mean = tape.mean(norm);
    Ok(if normalize { tape.mul_scalar(mean, 1.0 / per as f64) } else { mean })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualMode {
    Infonce,
    Ae,
    None,
}

impl VisualMode {
    pub const ALL: [VisualMode; 3] = [VisualMode::Infonce, VisualMode::Ae, VisualMode::None];

    pub fn name(self) -> &'static str {
        match self {
            VisualMode::Infonce => "infonce",
            VisualMode::Ae => "ae",
            VisualMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Component losses available for one step.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub attention: Option<Var>,
    pub movement: Option<Var>,
    pub visual: Option<Var>,
}

/// Weighted total and its component values.
#[derive(Clone, Copy, Debug)]
pub struct TotalLoss {
    pub total: Var,
    pub attention: f64,
    pub movement: f64,
    pub visual: f64,
}

/// `α·L_attention + β·L_movement + γ·L_visual`. A component with zero weight
/// or no value is left off the tape entirely.
pub fn total_loss(tape: &mut Tape, parts: LossParts, weights: &LossWeights) -> Result<TotalLoss> {
    let mut terms = Vec::with_capacity(3);
    let mut values = [0.0; 3];
    for (i, (part, w)) in
        [(parts.attention, weights.alpha), (parts.movement, weights.beta), (parts.visual, weights.gamma)]
            .into_iter()
            .enumerate()
    {
        if let Some(v) = part {
            values[i] = tape.item(v);
            if w != 0.0 {
                terms.push(tape.mul_scalar(v, w));
            }
        }
    }
    let mut total = match terms.first() {
        Some(&t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    for &t in terms.iter().skip(1) {
        total = tape.add(total, t)?;
    }
    Ok(TotalLoss { total, attention: values[0], movement: values[1], visual: values[2] })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::grad_check;

    fn huber_at(e: f64, delta: f64) -> f64 {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::new([1, 2], vec![e, 0.0]).unwrap());
        let l = gaze_loss(&mut tape, p, &[0.0, 0.0], &[true], delta).unwrap();
        // Two coordinates, one of them exact: the mean halves the term.
        2.0 * tape.item(l.value)
    }

    #[test]
    fn huber_closed_forms() {
        assert_eq!(huber_at(0.0, 1.0), 0.0);
        assert!((huber_at(0.4, 1.0) - 0.08).abs() < 1e-12);
        assert!((huber_at(2.0, 1.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn huber_is_smooth_at_threshold() {
        let d = 1.0;
        let h = 1e-7;
        let below = huber_at(d - h, d);
        let above = huber_at(d + h, d);
        assert!((below - above).abs() < 1e-6);
        let grad = |e: f64| {
            let mut tape = Tape::new();
            let p = tape.param(Tensor::new([1, 2], vec![e, 0.0]).unwrap());
            let l = gaze_loss(&mut tape, p, &[0.0, 0.0], &[true], d).unwrap();
            tape.backward(l.value).unwrap();
            2.0 * tape.grad(p).unwrap()[0]
        };
        assert!((grad(d - h) - grad(d + h)).abs() < 1e-6);
    }

    #[test]
    fn invalid_frames_are_excluded() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::new([2, 2], vec![0.4, 0.0, 9.0, 9.0]).unwrap());
        let l = gaze_loss(&mut tape, p, &[0.0; 4], &[true, false], 1.0).unwrap();
        assert!((tape.item(l.value) - 0.04).abs() < 1e-12);
        let none = gaze_loss(&mut tape, p, &[0.0; 4], &[false, false], 1.0).unwrap();
        assert_eq!(tape.item(none.value), 0.0);
        assert!(none.no_valid_frames);
    }

    #[test]
    fn movement_closed_forms() {
        let mut tape = Tape::new();
        let target = MovementTarget::new(vec![1, 0, 1, 1, 0, 0], vec![true; 6]).unwrap();
        let zero = tape.param(Tensor::zeros([1, 6]));
        let l = movement_loss(&mut tape, zero, &target).unwrap();
        assert!((tape.item(l) - std::f64::consts::LN_2).abs() < 1e-12);

        let sat = tape.param(
            Tensor::new(
                [1, 6],
                vec![
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                ],
            )
            .unwrap(),
        );
        let l = movement_loss(&mut tape, sat, &target).unwrap();
        assert_eq!(tape.item(l), 0.0);

        let masked = MovementTarget::new(vec![1; 6], vec![false; 6]).unwrap();
        let l = movement_loss(&mut tape, zero, &masked).unwrap();
        assert_eq!(tape.item(l), 0.0);
    }

    #[test]
    fn masked_logits_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<u8> = (0..30).map(|_| rng.random_range(0..2)).collect();
        let mask: Vec<bool> = (0..30).map(|_| rng.random_bool(0.5)).collect();
        let target = MovementTarget::new(labels, mask.clone()).unwrap();
        let base: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
        let eval = |logits: Vec<f64>| {
            let mut tape = Tape::new();
            let v = tape.param(Tensor::new([5, 6], logits).unwrap());
            let l = movement_loss(&mut tape, v, &target).unwrap();
            tape.item(l)
        };
        let reference = eval(base.clone());
        for _ in 0..200 {
            let mut fuzzed = base.clone();
            for (x, &m) in fuzzed.iter_mut().zip(&mask) {
                if !m {
                    *x = rng.random_range(-1e6..1e6);
                }
            }
            assert_eq!(eval(fuzzed), reference);
        }
    }

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        let mut t = Tensor::from_fn([n, d], |_| rng.random_range(-1.0..1.0));
        for row in t.data_mut().chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
        t
    }

    fn nce_value(q: &Tensor, k: &Tensor, bank: Option<&Tensor>, tau: f64, den: Denominator) -> f64 {
        let mut tape = Tape::new();
        let qv = tape.param(q.clone());
        let kv = tape.constant(k.clone());
        let l = infonce_loss(&mut tape, qv, kv, bank, tau, den).unwrap();
        tape.item(l.value)
    }

    #[test]
    fn infonce_uniform_logits_give_log_k_plus_one() {
        let q = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
        let k = Tensor::new([1, 2], vec![0.0, 1.0]).unwrap();
        let bank = Tensor::new([6, 2], [0.0, 1.0].repeat(6)).unwrap();
        let v = nce_value(&q, &k, Some(&bank), 0.07, Denominator::WithPositive);
        assert!((v - 7f64.ln()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn infonce_separated_pair() {
        // q·k⁺ = 10 and q·M₀ = −10 with ‖q‖ = √10 scaling.
        let s = 10f64.sqrt();
        let q = Tensor::new([1, 1], vec![s]).unwrap();
        let k = Tensor::new([1, 1], vec![s]).unwrap();
        let bank = Tensor::new([1, 1], vec![-s]).unwrap();
        let v = nce_value(&q, &k, Some(&bank), 1.0, Denominator::WithPositive);
        assert!((v - (-20f64).exp().ln_1p()).abs() < 1e-15, "{v}");
        assert!((v - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn infonce_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (n, d, kk) = (3, 5, 9);
            let q = unit_rows(&mut rng, n, d);
            let k = unit_rows(&mut rng, n, d);
            let bank = unit_rows(&mut rng, kk, d);
            let tau = rng.random_range(0.05..1.0);
            for den in [Denominator::WithPositive, Denominator::BankOnly] {
                let mut expected = 0.0;
                for i in 0..n {
                    let qi = &q.data()[i * d..(i + 1) * d];
                    let dot = |b: &[f64]| qi.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau;
                    let pos = dot(&k.data()[i * d..(i + 1) * d]);
                    let mut denom: f64 = (0..kk).map(|j| dot(&bank.data()[j * d..(j + 1) * d]).exp()).sum();
                    if den == Denominator::WithPositive {
                        denom += pos.exp();
                    }
                    expected += denom.ln() - pos;
                }
                expected /= n as f64;
                let got = nce_value(&q, &k, Some(&bank), tau, den);
                assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
            }
        }
    }

    #[test]
    fn infonce_empty_bank_is_warm_up() {
        let mut tape = Tape::new();
        let q = tape.param(Tensor::new([1, 2], vec![1.0, 0.0]).unwrap());
        let l = infonce_loss(&mut tape, q, q, None, 0.07, Denominator::WithPositive).unwrap();
        assert!(l.warm_up);
        assert_eq!(tape.item(l.value), 0.0);
    }

    #[test]
    fn infonce_decreases_with_positive_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank = unit_rows(&mut rng, 16, 2);
        let q = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..=20 {
            let a = std::f64::consts::PI * (1.0 - i as f64 / 20.0);
            let k = Tensor::new([1, 2], vec![a.cos(), a.sin()]).unwrap();
            let v = nce_value(&q, &k, Some(&bank), 0.2, Denominator::WithPositive);
            assert!(v >= 0.0 && v <= last + 1e-12);
            last = v;
        }
    }

    #[test]
    fn ae_loss_values_and_gradient() {
        let img = Tensor::full([1, 4], 0.25);
        let mut tape = Tape::new();
        let same = tape.param(img.clone());
        let l = ae_loss(&mut tape, same, &img, true).unwrap();
        assert_eq!(tape.item(l), 0.0);
        let off = tape.param(Tensor::full([1, 4], 0.75));
        let raw = ae_loss(&mut tape, off, &img, false).unwrap();
        assert!((tape.item(raw) - 1.0).abs() < 1e-12);
        let norm = ae_loss(&mut tape, off, &img, true).unwrap();
        assert!((tape.item(norm) - 0.25).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = Tensor::from_fn([2, 3, 2, 2], |_| rng.random_range(0.0..1.0));
        let point = Tensor::from_fn([2, 3, 2, 2], |_| rng.random_range(0.0..1.0));
        let err = grad_check(
            |t, x| ae_loss(t, x, &target, true).map_err(|e| crate::tensor::TensorError::Format(e.to_string())),
            &point,
            1e-4,
        );
        assert!(err < 1e-4, "{err}");
    }

    fn parts(tape: &mut Tape, a: f64, m: f64, v: f64) -> LossParts {
        LossParts {
            attention: Some(tape.param(Tensor::scalar(a))),
            movement: Some(tape.param(Tensor::scalar(m))),
            visual: Some(tape.param(Tensor::scalar(v))),
        }
    }

    #[test]
    fn total_loss_hand_value() {
        let mut tape = Tape::new();
        let p = parts(&mut tape, 1.0, 2.0, 3.0);
        let t = total_loss(&mut tape, p, &LossWeights::default()).unwrap();
        assert!((tape.item(t.total) - 2.81).abs() < 1e-12);
    }

    #[test]
    fn vision_only_weights() {
        let mut tape = Tape::new();
        let p = parts(&mut tape, 5.0, 7.0, 3.0);
        let w = LossWeights { alpha: 0.0, beta: 0.0, ..LossWeights::default() };
        let t = total_loss(&mut tape, p, &w).unwrap();
        assert_eq!(tape.item(t.total), 0.9 * 3.0);
        tape.backward(t.total).unwrap();
        assert!(tape.grad(p.attention.unwrap()).is_none());
        assert!(tape.grad(p.movement.unwrap()).is_none());
    }

    #[test]
    fn defaults_and_validation() {
        let w = LossWeights::default();
        assert_eq!((w.alpha, w.beta, w.gamma, w.delta), (0.09, 0.01, 0.9, 1.0));
        assert!(w.validate().is_ok());
        assert!(LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 1.0 }.validate().is_err());
        assert!(LossWeights { delta: 0.0, ..w }.validate().is_err());
    }

    #[test]
    fn part_masking_clears_columns() {
        let mut t = MovementTarget::new(vec![1; 12], vec![true; 12]).unwrap();
        t.mask_parts(&[4, 5]);
        for (i, &m) in t.mask.iter().enumerate() {
            assert_eq!(m, i % 6 < 4);
        }
    }

    proptest! {
        #[test]
        fn total_is_linear_in_components(a in 0.0f64..10.0, m in 0.0f64..10.0, v in 0.0f64..10.0, s in 0.1f64..5.0) {
            let w = LossWeights::default();
            let eval = |a: f64, m: f64, v: f64| {
                let mut tape = Tape::new();
                let p = parts(&mut tape, a, m, v);
                let t = total_loss(&mut tape, p, &w).unwrap();
                tape.item(t.total)
            };
            prop_assert!((eval(a * s, m, v) - eval(a, m, v) - w.alpha * a * (s - 1.0)).abs() < 1e-9);
            prop_assert!((eval(a, m * s, v) - eval(a, m, v) - w.beta * m * (s - 1.0)).abs() < 1e-9);
            prop_assert!((eval(a, m, v * s) - eval(a, m, v) - w.gamma * v * (s - 1.0)).abs() < 1e-9);
        }
    }
}
