use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    UniformScaled,
    /// Glorot normal: `N(0, 2 / (fan_in + fan_out))`.
    NormalScaled,
    Zeros,
}

fn fans(shape: &[usize]) -> (f64, f64) {
    match shape {
        [n] => (*n as f64, *n as f64),
        [i, o] => (*i as f64, *o as f64),
        _ => {
            let o = *shape.last().unwrap_or(&1) as f64;
            let i = shape.iter().product::<usize>() as f64 / o;
            (i, o)
        }
    }
}

/// Deterministic initialization: the same `(shape, scheme, seed)` always yields
/// a bit-identical tensor.
pub fn seeded_init(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor {
    let numel: usize = shape.iter().product();
    let (fan_in, fan_out) = fans(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match scheme {
        InitScheme::Zeros => vec![0.0; numel],
        InitScheme::UniformScaled => {
            let a = (6.0 / (fan_in + fan_out)).sqrt();
            (0..numel).map(|_| rng.random_range(-a..a)).collect()
        }
        InitScheme::NormalScaled => {
            let std = (2.0 / (fan_in + fan_out)).sqrt();
            let normal = Normal::new(0.0, std).expect("std is finite and positive");
            (0..numel).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    Tensor::from_parts(shape.to_vec(), data)
}
