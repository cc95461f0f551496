//! Tanh-squashed Gaussian policy.
//!
//! An MLP maps a state to `2 * action_dim` outputs: the pre-squash means
//! `mu` followed by unconstrained log-std parameters `raw`. The log-std is
//! `lo + (hi - lo) (tanh(raw) + 1) / 2`, and an action is
//! `scale * tanh(mu + sigma * eps)`.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Result};
use crate::nnets::mlp::MlpTape;
use crate::nnets::{Activation, Mlp, MlpSpec, Model};
use crate::rng::Rng;

/// Squashed actions are kept this far inside `(-scale, scale)` before
/// inverting the squash.
pub const ATANH_CLIP: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub weight_scale: f64,
    pub bias_scale: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64, 64],
            activation: Activation::Relu,
            log_std_min: -5.0,
            log_std_max: 2.0,
            weight_scale: 1.0,
            bias_scale: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    net: Mlp,
    action_dim: usize,
    action_scale: f64,
    log_std_min: f64,
    log_std_max: f64,
}

/// Forward quantities for a batch: pre-squash means and the log-std.
pub struct PolicyHeads {
    pub mu: Array2<f64>,
    pub raw: Array2<f64>,
    pub log_std: Array2<f64>,
    tape: MlpTape,
}

impl GaussianPolicy {
    pub fn new(state_dim: usize, action_dim: usize, action_scale: f64, spec: &PolicySpec) -> Result<Self> {
        let net = Mlp::new(MlpSpec {
            input_dim: state_dim,
            hidden_dims: spec.hidden_dims.clone(),
            activation: spec.activation,
            output_dim: 2 * action_dim,
            weight_scale: spec.weight_scale,
            bias_scale: spec.bias_scale,
        })?;
        if !(spec.log_std_min < spec.log_std_max) || !(action_scale > 0.0) {
            return Err(crate::Error::InvalidConfig("policy needs log_std_min < log_std_max and a positive action scale".into()));
        }
        Ok(Self { net, action_dim, action_scale, log_std_min: spec.log_std_min, log_std_max: spec.log_std_max })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_scale(&self) -> f64 {
        self.action_scale
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        self.net.init_params(rng)
    }

    fn log_std_of(&self, raw: f64) -> f64 {
        self.log_std_min + 0.5 * (self.log_std_max - self.log_std_min) * (raw.tanh() + 1.0)
    }

    fn dlog_std_draw(&self, raw: f64) -> f64 {
        let t = raw.tanh();
        0.5 * (self.log_std_max - self.log_std_min) * (1.0 - t * t)
    }

    pub fn heads(&self, params: &[f64], states: ArrayView2<f64>) -> Result<PolicyHeads> {
        let (out, tape) = self.net.forward_tape(params, states)?;
        let a = self.action_dim;
        let mu = out.slice(ndarray::s![.., ..a]).to_owned();
        let raw = out.slice(ndarray::s![.., a..]).to_owned();
        let log_std = raw.mapv(|r| self.log_std_of(r));
        Ok(PolicyHeads { mu, raw, log_std, tape })
    }

    /// Deterministic action `scale * tanh(mu)`.
    pub fn mode(&self, params: &[f64], states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.heads(params, states)?;
        Ok(h.mu.mapv(|m| self.action_scale * m.tanh()))
    }

    /// Reparameterised actions for given standard normal noise.
    pub fn sample(&self, params: &[f64], states: ArrayView2<f64>, eps: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.heads(params, states)?;
        dim_check(eps.dim() == h.mu.dim(), || format!("noise {:?} for actions {:?}", eps.dim(), h.mu.dim()))?;
        Ok(ndarray::Zip::from(&h.mu)
            .and(&h.log_std)
            .and(eps)
            .map_collect(|m, ls, e| self.action_scale * (m + ls.exp() * e).tanh()))
    }

    /// Pre-squash value of a squashed action, clipped just inside the bounds.
    pub fn unsquash(&self, a: f64) -> f64 {
        (a / self.action_scale).clamp(-1.0 + ATANH_CLIP, 1.0 - ATANH_CLIP).atanh()
    }

    /// Per-row log-density of `actions`, including the change of variables
    /// through `scale * tanh`.
    pub fn log_prob(&self, params: &[f64], states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let h = self.heads(params, states)?;
        dim_check(actions.dim() == h.mu.dim(), || format!("actions {:?} for heads {:?}", actions.dim(), h.mu.dim()))?;
        Ok(self.log_prob_rows(&h, actions))
    }

    fn log_prob_rows(&self, h: &PolicyHeads, actions: ArrayView2<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(actions.nrows());
        for b in 0..actions.nrows() {
            let mut lp = 0.0;
            for j in 0..self.action_dim {
                let u = self.unsquash(actions[[b, j]]);
                let ls = h.log_std[[b, j]];
                let z = (u - h.mu[[b, j]]) / ls.exp();
                let t = u.tanh();
                lp += -0.5 * z * z - ls - 0.5 * LN_2PI - (self.action_scale * (1.0 - t * t)).ln();
            }
            out[b] = lp;
        }
        out
    }

    /// Mean log-likelihood of `actions` and its gradient.
    pub fn log_likelihood_grad(
        &self,
        params: &[f64],
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let h = self.heads(params, states)?;
        dim_check(actions.dim() == h.mu.dim(), || format!("actions {:?} for heads {:?}", actions.dim(), h.mu.dim()))?;
        let rows = actions.nrows();
        let value = self.log_prob_rows(&h, actions).sum() / rows as f64;
        let a = self.action_dim;
        let mut dout = Array2::zeros((rows, 2 * a));
        for b in 0..rows {
            for j in 0..a {
                let u = self.unsquash(actions[[b, j]]);
                let ls = h.log_std[[b, j]];
                let z = (u - h.mu[[b, j]]) / ls.exp();
                dout[[b, j]] = z / ls.exp() / rows as f64;
                dout[[b, a + j]] = (z * z - 1.0) * self.dlog_std_draw(h.raw[[b, j]]) / rows as f64;
            }
        }
        let mut grad = vec![0.0; self.param_count()];
        self.net.backward(params, &h.tape, dout.view(), &mut grad);
        Ok((value, grad))
    }

    /// Pulls `d objective / d action` (rows x action_dim) back to the policy
    /// parameters through the reparameterised sample with noise `eps`.
    pub fn backprop_actions(
        &self,
        params: &[f64],
        heads: &PolicyHeads,
        eps: ArrayView2<f64>,
        d_action: ArrayView2<f64>,
    ) -> Vec<f64> {
        let a = self.action_dim;
        let rows = d_action.nrows();
        let mut dout = Array2::zeros((rows, 2 * a));
        for b in 0..rows {
            for j in 0..a {
                let sigma = heads.log_std[[b, j]].exp();
                let t = (heads.mu[[b, j]] + sigma * eps[[b, j]]).tanh();
                let du = d_action[[b, j]] * self.action_scale * (1.0 - t * t);
                dout[[b, j]] = du;
                dout[[b, a + j]] = du * sigma * eps[[b, j]] * self.dlog_std_draw(heads.raw[[b, j]]);
            }
        }
        let mut grad = vec![0.0; self.param_count()];
        self.net.backward(params, &heads.tape, dout.view(), &mut grad);
        grad
    }
}
