//! Central finite-difference gradient checks.

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;

use super::init::truncated_standard;
use super::{mse, Model, TensorSpec};
use crate::error::Result;
use crate::rng::{self, Rng};

pub const STEP: f64 = 1e-5;

/// Denominator floor so coordinates with vanishing gradients are compared
/// on an absolute scale.
pub const REL_FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between `analytic[k]` and the central difference
/// of `f` along coordinate `k`, over the listed coordinates.
pub fn check_gradient<F>(f: F, x: &[f64], analytic: &[f64], coords: &[usize]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for &k in coords {
        let orig = probe[k];
        probe[k] = orig + STEP;
        let up = f(&probe);
        probe[k] = orig - STEP;
        let down = f(&probe);
        probe[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let err = relative_error(analytic[k], numeric);
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    worst
}

/// Picks `n` distinct coordinates of `range` (all of them if the range is smaller).
pub fn probe_coords(rng: &mut Rng, range: Range<usize>, n: usize) -> Vec<usize> {
    let len = range.len();
    if n >= len {
        return range.collect();
    }
    let mut idx: Vec<usize> = sample(rng, len, n).into_iter().map(|i| range.start + i).collect();
    idx.sort_unstable();
    idx
}

/// Max relative error of the parameter gradient of a random MSE problem,
/// over `n_probes` random parameter coordinates.
pub fn grad_check<M: Model>(model: &M, seed: u64, n_probes: usize) -> f64 {
    grad_check_range(model, seed, n_probes, 0..model.param_count())
}

/// As [`grad_check`] but probes only coordinates in `range`.
pub fn grad_check_range<M: Model>(model: &M, seed: u64, n_probes: usize, range: Range<usize>) -> f64 {
    try_grad_check(model, seed, n_probes, range).unwrap_or(f64::INFINITY)
}

fn try_grad_check<M: Model>(model: &M, seed: u64, n_probes: usize, range: Range<usize>) -> Result<f64> {
    let mut rng = rng::stream(seed, 0);
    let params = model.init_params(&mut rng);
    let rows = 4;
    let x = Array2::from_shape_fn((rows, model.input_dim()), |_| truncated_standard(&mut rng));
    let targets = Array2::from_shape_fn((rows, model.output_dim()), |_| truncated_standard(&mut rng));
    let g = model.value_and_grad(&params, x.view(), |out| mse(out, targets.view()))?;
    let loss = |p: &[f64]| -> f64 {
        match model.forward(p, x.view()) {
            Ok(out) => mse(out.view(), targets.view()).0,
            Err(_) => f64::NAN,
        }
    };
    let coords = probe_coords(&mut rng, range, n_probes);
    let param_err = check_gradient(loss, &params, &g.params, &coords);

    // input gradient on every coordinate of the batch
    let x_flat: Vec<f64> = x.iter().copied().collect();
    let dx: Vec<f64> = g.input.iter().copied().collect();
    let loss_x = |xf: &[f64]| -> f64 {
        let xv = ArrayView2::from_shape(x.raw_dim(), xf).expect("shape");
        match model.forward(&params, xv) {
            Ok(out) => mse(out.view(), targets.view()).0,
            Err(_) => f64::NAN,
        }
    };
    let all: Vec<usize> = (0..x_flat.len()).collect();
    let input_err = check_gradient(loss_x, &x_flat, &dx, &all);
    Ok(param_err.max(input_err))
}

/// Wraps a model and negates its parameter gradient. Used to confirm that
/// the checker catches a wrong backward pass.
#[derive(Clone, Debug)]
pub struct FlippedGradient<M>(pub M);

impl<M: Model> Model for FlippedGradient<M> {
    type Tape = M::Tape;

    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }
    fn param_count(&self) -> usize {
        self.0.param_count()
    }
    fn layout(&self) -> Vec<TensorSpec> {
        self.0.layout()
    }
    fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        self.0.init_params(rng)
    }
    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, M::Tape)> {
        self.0.forward_tape(params, x)
    }
    fn backward(&self, params: &[f64], tape: &M::Tape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let mut own = vec![0.0; grad.len()];
        let dx = self.0.backward(params, tape, dout, &mut own);
        for (g, o) in grad.iter_mut().zip(own) {
            *g -= o;
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnets::{Mlp, MlpSpec};

    #[test]
    fn linear_net_is_exact() {
        let mlp = Mlp::new(MlpSpec::linear(5, 1)).unwrap();
        let e = grad_check(&mlp, 3, 100);
        assert!(e < 1e-9, "{e}");
    }

    #[test]
    fn toy_width_tanh_net() {
        let mlp = Mlp::new(MlpSpec::toy_q(2)).unwrap();
        let err = grad_check(&mlp, 4, 200);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn flipped_gradient_is_caught() {
        let mlp = Mlp::new(MlpSpec { hidden_dims: vec![8], ..MlpSpec::linear(3, 1) }).unwrap();
        assert!(grad_check(&FlippedGradient(mlp), 5, 100) > 1.0);
    }

    #[test]
    fn probes_are_distinct_and_in_range() {
        let mut rng = rng::stream(0, 0);
        let c = probe_coords(&mut rng, 10..1000, 100);
        assert_eq!(c.len(), 100);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c.iter().all(|&k| (10..1000).contains(&k)));
        assert_eq!(probe_coords(&mut rng, 3..6, 100), vec![3, 4, 5]);
    }
}
