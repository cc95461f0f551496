//! Hand-differentiated neural networks.
//!
//! All models share the [`Model`] trait: parameters live in one flat `f64`
//! buffer described by [`Model::layout`], the forward pass records a tape,
//! and the backward pass accumulates parameter gradients and returns the
//! gradient with respect to the input batch.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Result};
use crate::rng::Rng;

pub mod adam;
pub mod checkpoint;
mod dense;
pub mod ensemble;
pub mod gradcheck;
pub mod init;
pub mod mlp;

pub use adam::{Adam, Optimizer, OptimizerKind};
pub use ensemble::{BatchEnsemble, DeepEnsemble, EnsembleArch, EnsembleKind, Mimo, MinPooled, MultiHead};
pub use mlp::{Mlp, MlpSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Erf,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            // exp-based form: about twice as fast as the libm call and within
            // a few ulp of it
            Activation::Tanh => 1.0 - 2.0 / ((2.0 * z).exp() + 1.0),
            Activation::Relu => z.max(0.0),
            Activation::Erf => libm::erf(z),
        }
    }

    /// Derivative given the pre-activation `z` and the output `h`.
    pub fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Erf => std::f64::consts::FRAC_2_SQRT_PI * (-z * z).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self { name: name.into(), shape: shape.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss value plus gradients with respect to parameters and inputs.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

pub trait Model: Send + Sync {
    type Tape: Send + Sync;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn layout(&self) -> Vec<TensorSpec>;
    fn init_params(&self, rng: &mut Rng) -> Vec<f64>;

    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, Self::Tape)>;

    /// Adds `d loss / d params` into `grad` and returns `d loss / d x`.
    fn backward(&self, params: &[f64], tape: &Self::Tape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64>;

    /// As [`Model::backward`] when the input gradient is not needed.
    fn backward_params(&self, params: &[f64], tape: &Self::Tape, dout: ArrayView2<f64>, grad: &mut [f64]) {
        self.backward(params, tape, dout, grad);
    }

    fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(params, x)?.0)
    }

    /// Forward pass, then `loss` maps the outputs to `(value, d value / d outputs)`.
    fn value_and_grad<F>(&self, params: &[f64], x: ArrayView2<f64>, loss: F) -> Result<Gradients>
    where
        F: FnOnce(ArrayView2<f64>) -> (f64, Array2<f64>),
        Self: Sized,
    {
        let (out, tape) = self.forward_tape(params, x)?;
        let (value, dout) = loss(out.view());
        let mut grad = vec![0.0; self.param_count()];
        let input = self.backward(params, &tape, dout.view(), &mut grad);
        Ok(Gradients { loss: value, params: grad, input })
    }

    /// Loss value and parameter gradient only.
    fn loss_and_param_grad<F>(&self, params: &[f64], x: ArrayView2<f64>, loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(ArrayView2<f64>) -> (f64, Array2<f64>),
        Self: Sized,
    {
        let (out, tape) = self.forward_tape(params, x)?;
        let (value, dout) = loss(out.view());
        let mut grad = vec![0.0; self.param_count()];
        self.backward_params(params, &tape, dout.view(), &mut grad);
        Ok((value, grad))
    }

    fn check_inputs(&self, params: &[f64], x: ArrayView2<f64>) -> Result<()> {
        dim_check(params.len() == self.param_count(), || {
            format!("expected {} parameters, got {}", self.param_count(), params.len())
        })?;
        dim_check(x.ncols() == self.input_dim(), || {
            format!("expected input width {}, got {}", self.input_dim(), x.ncols())
        })
    }
}

/// Mean squared error over all entries and its gradient.
pub fn mse(out: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = out.len().max(1) as f64;
    let diff = &out - &targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// Mean squared error and exact gradients for a single-output model.
pub fn backward_mse<M: Model>(
    model: &M,
    params: &[f64],
    x: ArrayView2<f64>,
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    dim_check(targets.len() == x.nrows(), || {
        format!("{} targets for {} rows", targets.len(), x.nrows())
    })?;
    dim_check(model.output_dim() == 1, || "backward_mse needs a single-output model".into())?;
    let t = ArrayView2::from_shape((targets.len(), 1), targets).expect("shape");
    model.loss_and_param_grad(params, x, |out| mse(out, t))
}
