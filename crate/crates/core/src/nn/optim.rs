use serde::{Deserialize, Serialize};

use super::{Grads, NnError, ParamStore, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Adam,
}

/// Adam moments (empty for SGD) and the number of completed steps.
/// Moments are stored at `f32` precision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Self::new(Algorithm::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(Algorithm::Adam, lr)
    }

    pub fn new(algorithm: Algorithm, lr: f64) -> Self {
        Self { algorithm, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, state: OptimizerState::default() }
    }

    /// Applies one update to every parameter. Each parameter must have a
    /// gradient; the first missing one is reported by name.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> Result<()> {
        for id in params.ids() {
            let g = grads.get(id).ok_or_else(|| NnError::MissingGrad(params.name(id).to_string()))?;
            if g.len() != params.get(id).numel() {
                return Err(NnError::Config(format!(
                    "gradient for `{}` has {} values, parameter has {}",
                    params.name(id),
                    g.len(),
                    params.get(id).numel()
                )));
            }
        }
        if self.algorithm == Algorithm::Adam && self.state.m.len() != params.len() {
            self.state.m = params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect();
            self.state.v = self.state.m.clone();
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let lr = self.lr;
        for id in params.ids() {
            let g = grads.get(id).expect("checked above");
            let p = params.get_mut(id).data_mut();
            match self.algorithm {
                Algorithm::Sgd => {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv = (*pv - lr * gv) as f32 as f64;
                    }
                }
                Algorithm::Adam => {
                    let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    let m = &mut self.state.m[id.0];
                    let v = &mut self.state.v[id.0];
                    for i in 0..p.len() {
                        let gi = g[i];
                        let mi = b1 * m[i] + (1.0 - b1) * gi;
                        let vi = b2 * v[i] + (1.0 - b2) * gi * gi;
                        let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                        m[i] = mi as f32 as f64;
                        v[i] = vi as f32 as f64;
                        p[i] = (p[i] - update) as f32 as f64;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::new([values.len()], values.to_vec()).unwrap()).unwrap();
        s.add("a.b", Tensor::scalar(1.0)).unwrap();
        s
    }

    fn grads(s: &ParamStore, value: f64) -> Grads {
        Grads { values: s.ids().map(|id| Some(vec![value; s.get(id).numel()])).collect() }
    }

    #[test]
    fn sgd_step_by_hand() {
        let mut s = store(&[1.0]);
        let g = grads(&s, 1.0);
        Optimizer::sgd(0.1).step(&mut s, &g).unwrap();
        assert_eq!(s.by_name("a.w").unwrap().data(), &[0.9f32 as f64]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = store(&[0.5, -2.0, 3.0]);
        let before = s.clone();
        let g = grads(&s, 1.0);
        Optimizer::adam(1e-3).step(&mut s, &g).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(before.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                let expected = y - 1e-3 / (1.0 + 1e-8);
                assert!((x - expected).abs() <= 1e-7 * expected.abs().max(1.0), "{x} vs {expected}");
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for mut opt in [Optimizer::sgd(0.1), Optimizer::adam(1e-3)] {
            let mut s = store(&[0.25, -1.5]);
            let before = s.clone();
            for _ in 0..3 {
                let g = grads(&s, 0.0);
                opt.step(&mut s, &g).unwrap();
            }
            assert_eq!(s, before);
        }
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = store(&[1.0]);
        let mut g = grads(&s, 1.0);
        g.values[1] = None;
        let err = Optimizer::adam(1e-3).step(&mut s, &g).unwrap_err();
        assert!(err.to_string().contains("a.b"), "{err}");
    }

    #[test]
    fn step_counter_increases_and_is_deterministic() {
        let run = || {
            let mut s = store(&[0.3, 0.7]);
            let mut opt = Optimizer::adam(1e-2);
            let mut steps = Vec::new();
            for k in 0..5 {
                let g = Grads { values: vec![Some(vec![0.1 * k as f64, -0.2]), Some(vec![1.0])] };
                opt.step(&mut s, &g).unwrap();
                steps.push(opt.state.step);
            }
            (s, opt, steps)
        };
        let (a, oa, steps) = run();
        let (b, ob, _) = run();
        assert_eq!(steps, vec![1, 2, 3, 4, 5]);
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Grads { values: vec![Some(vec![3.0, 4.0]), None] };
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = Grads { values: vec![Some(vec![0.3])] };
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.values[0].as_deref(), Some(&[0.3][..]));
    }
}
