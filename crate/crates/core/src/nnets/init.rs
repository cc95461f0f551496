//! Fan-in truncated normal initialisation.
//!
//! Draws are standard normal samples rejected outside `[-2, 2]`, rescaled so
//! the resulting distribution has standard deviation `scale / sqrt(fan_in)`.

use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;

pub const TRUNCATION: f64 = 2.0;

/// Standard deviation of a unit normal truncated to `[-2, 2]`.
pub const TRUNCATED_STD: f64 = 0.879_625_661_034_239_8;

pub fn truncated_standard(rng: &mut Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

pub fn fan_in_std(scale: f64, fan_in: usize) -> f64 {
    scale / (fan_in.max(1) as f64).sqrt()
}

pub fn fill_fan_in(rng: &mut Rng, out: &mut [f64], scale: f64, fan_in: usize) {
    let std = fan_in_std(scale, fan_in);
    for v in out {
        *v = if scale == 0.0 { 0.0 } else { truncated_standard(rng) * std / TRUNCATED_STD };
    }
}
