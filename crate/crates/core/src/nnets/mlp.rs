use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::dense::{affine, affine_backward};
use super::init::fill_fan_in;
use super::{Activation, Model, TensorSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
    /// Fan-in truncated normal scale for weights.
    pub weight_scale: f64,
    /// Fan-in truncated normal scale for biases.
    pub bias_scale: f64,
}

impl MlpSpec {
    /// One hidden layer of 512 tanh units, weight scale 10, bias scale 0.05.
    pub fn toy_q(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![512],
            activation: Activation::Tanh,
            output_dim: 1,
            weight_scale: 10.0,
            bias_scale: 0.05,
        }
    }

    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![],
            activation: Activation::Tanh,
            output_dim,
            weight_scale: 1.0,
            bias_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("MLP dimensions must all be >= 1".into()));
        }
        if !(self.weight_scale >= 0.0 && self.bias_scale >= 0.0) {
            return Err(Error::InvalidConfig("initialisation scales must be >= 0".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Affine-activation stack; the last layer is affine only.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    dims: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    n_params: usize,
}

#[derive(Clone, Debug)]
pub struct MlpTape {
    /// Input to each affine layer (the network input first).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for (i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        Ok(Self { spec, dims, offsets, n_params: off })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len()
    }

    /// Weight and bias slices of layer `l`.
    pub fn layer<'a>(&self, params: &'a [f64], l: usize) -> (&'a [f64], &'a [f64]) {
        let (i, o) = self.dims[l];
        let w0 = self.offsets[l];
        (&params[w0..w0 + i * o], &params[w0 + i * o..w0 + i * o + o])
    }

    fn layer_grad<'a>(&self, grad: &'a mut [f64], l: usize) -> (&'a mut [f64], &'a mut [f64]) {
        let (i, o) = self.dims[l];
        let w0 = self.offsets[l];
        let (w, b) = grad[w0..w0 + i * o + o].split_at_mut(i * o);
        (w, b)
    }
}

impl Model for Mlp {
    type Tape = MlpTape;

    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn param_count(&self) -> usize {
        self.n_params
    }

    fn layout(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        for (l, (i, o)) in self.dims.iter().enumerate() {
            out.push(TensorSpec::new(format!("layer{l}.weight"), &[*i, *o]));
            out.push(TensorSpec::new(format!("layer{l}.bias"), &[*o]));
        }
        out
    }

    fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        for (l, (i, o)) in self.dims.iter().enumerate() {
            let w0 = self.offsets[l];
            let (w, b) = p[w0..w0 + i * o + o].split_at_mut(i * o);
            fill_fan_in(rng, w, self.spec.weight_scale, *i);
            fill_fan_in(rng, b, self.spec.bias_scale, *i);
        }
        p
    }

    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.check_inputs(params, x)?;
        let last = self.dims.len() - 1;
        let mut inputs = Vec::with_capacity(self.dims.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for l in 0..self.dims.len() {
            let (w, b) = self.layer(params, l);
            let z = affine(h.view(), w, b, self.dims[l].1);
            inputs.push(h);
            if l == last {
                return Ok((z, MlpTape { inputs, pre }));
            }
            let act = self.spec.activation;
            h = z.mapv(|v| act.apply(v));
            pre.push(z);
        }
        unreachable!("an MLP always has an output layer")
    }

    fn backward(&self, params: &[f64], tape: &MlpTape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        self.backward_impl(params, tape, dout, grad, true).expect("dx requested")
    }

    fn backward_params(&self, params: &[f64], tape: &MlpTape, dout: ArrayView2<f64>, grad: &mut [f64]) {
        self.backward_impl(params, tape, dout, grad, false);
    }
}

impl Mlp {
    fn backward_impl(
        &self,
        params: &[f64],
        tape: &MlpTape,
        dout: ArrayView2<f64>,
        grad: &mut [f64],
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        let act = self.spec.activation;
        let mut delta = dout.to_owned();
        for l in (0..self.dims.len()).rev() {
            let (w, _) = self.layer(params, l);
            let (gw, gb) = self.layer_grad(grad, l);
            let dx = affine_backward(tape.inputs[l].view(), w, delta.view(), gw, Some(gb), l > 0 || want_dx);
            if l == 0 {
                return dx;
            }
            let dx = dx.expect("hidden layers propagate");
            // through the activation of layer l-1
            let z = &tape.pre[l - 1];
            let h = &tape.inputs[l];
            delta = dx;
            ndarray::Zip::from(&mut delta).and(z).and(h).for_each(|d, &zv, &hv| {
                *d *= act.derivative(zv, hv);
            });
        }
        unreachable!()
    }
}
