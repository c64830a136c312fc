//! Parameter initializers. Every random initializer is a zero-mean uniform
//! whose variance is reported by [`Init::variance`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-√(6/fan_in), √(6/fan_in))`, variance `2 / fan_in`. Used ahead of ReLU.
    KaimingUniform {
        fan_in: usize,
    },
    /// `U(-1/√fan_in, 1/√fan_in)`, variance `1 / (3·fan_in)`. Linear and LSTM weights.
    FanInUniform {
        fan_in: usize,
    },
    Uniform {
        bound: f64,
    },
    Const(f64),
}

impl Init {
    pub const ZEROS: Init = Init::Const(0.0);
    pub const ONES: Init = Init::Const(1.0);

    pub fn bound(&self) -> f64 {
        match *self {
            Init::KaimingUniform { fan_in } => (6.0 / fan_in as f64).sqrt(),
            Init::FanInUniform { fan_in } => 1.0 / (fan_in as f64).sqrt(),
            Init::Uniform { bound } => bound,
            Init::Const(_) => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        let b = self.bound();
        b * b / 3.0
    }

    /// Draws a tensor; values are rounded to `f32`.
    pub fn sample(&self, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = match *self {
            Init::Const(c) => Tensor::full(shape.to_vec(), c),
            _ => {
                let b = self.bound();
                Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-b..=b))
            }
        };
        t.round_to_f32();
        t
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn sample_variance_matches_documented_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for init in [
            Init::KaimingUniform { fan_in: 27 },
            Init::KaimingUniform { fan_in: 1152 },
            Init::FanInUniform { fan_in: 128 },
            Init::FanInUniform { fan_in: 3136 },
            Init::Uniform { bound: 0.5 },
        ] {
            let t = init.sample(&[10_000], &mut rng);
            let mean = t.data().iter().sum::<f64>() / 1e4;
            let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (1e4 - 1.0);
            let rel = (var - init.variance()).abs() / init.variance();
            assert!(rel < 0.1, "{init:?}: sample variance {var}, documented {}", init.variance());
        }
    }

    #[test]
    fn constants_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Init::ONES.sample(&[5], &mut rng).data().iter().all(|&v| v == 1.0));
        assert_eq!(Init::ZEROS.variance(), 0.0);
    }
}
