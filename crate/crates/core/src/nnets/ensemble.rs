//! Deep ensembles and their parameter-efficient approximations.
//!
//! Every ensemble maps a batch of `B` inputs to a `B x N` matrix holding one
//! scalar prediction per member:
//!
//! - [`DeepEnsemble`]: `N` independent copies of a base network.
//! - [`MinPooled`]: two subnetworks, min-pooled (one double-Q member).
//! - [`MultiHead`]: a shared trunk with `N` linear heads.
//! - [`Mimo`]: one network whose input is the example tiled `N` times and
//!   whose `N` outputs are the members.
//! - [`BatchEnsemble`]: shared weights `W` per layer with per-member rank-1
//!   modulation, `act(((x * r_i) W) * s_i + b_i)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::dense::{affine, affine_backward};
use super::init::fill_fan_in;
use super::mlp::MlpTape;
use super::{Mlp, MlpSpec, Model, TensorSpec};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng::{self, Rng};

fn require_scalar_base(spec: &MlpSpec) -> Result<()> {
    if spec.output_dim != 1 {
        return Err(Error::InvalidConfig(format!(
            "ensemble members must have a single output, base has {}",
            spec.output_dim
        )));
    }
    Ok(())
}

fn require_members(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("an ensemble needs at least one member".into()));
    }
    Ok(())
}

// --------------------------------------------------------------------------
// Deep ensemble
// --------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DeepEnsemble<M> {
    base: M,
    n: usize,
    exec: Exec,
}

impl<M: Model> DeepEnsemble<M> {
    pub fn new(base: M, n: usize) -> Result<Self> {
        require_members(n)?;
        if base.output_dim() != 1 {
            return Err(Error::InvalidConfig("deep ensemble members must have a single output".into()));
        }
        Ok(Self { base, n, exec: Exec::default() })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn base(&self) -> &M {
        &self.base
    }

    pub fn n_members(&self) -> usize {
        self.n
    }

    pub fn member_params<'a>(&self, params: &'a [f64], i: usize) -> &'a [f64] {
        let k = self.base.param_count();
        &params[i * k..(i + 1) * k]
    }

    pub fn member_params_mut<'a>(&self, params: &'a mut [f64], i: usize) -> &'a mut [f64] {
        let k = self.base.param_count();
        &mut params[i * k..(i + 1) * k]
    }

    /// Member `i` evaluated on its own batch.
    pub fn forward_member(&self, params: &[f64], i: usize, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.base.forward(self.member_params(params, i), x)?.column(0).to_owned())
    }

    /// Per-member forward passes where member `i` sees `xs[i]`.
    pub fn forward_each(&self, params: &[f64], xs: &[Array2<f64>]) -> Result<Vec<Array1<f64>>> {
        if xs.len() != self.n {
            return Err(Error::DimensionMismatch(format!("{} batches for {} members", xs.len(), self.n)));
        }
        self.exec
            .map(self.n, |i| self.forward_member(params, i, xs[i].view()))
            .into_iter()
            .collect()
    }
}

impl<M: Model> Model for DeepEnsemble<M> {
    type Tape = Vec<M::Tape>;

    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.n
    }

    fn param_count(&self) -> usize {
        self.n * self.base.param_count()
    }

    fn layout(&self) -> Vec<TensorSpec> {
        let base = self.base.layout();
        (0..self.n)
            .flat_map(|i| base.iter().map(move |t| TensorSpec::new(format!("member{i}.{}", t.name), &t.shape)))
            .collect()
    }

    /// Member `i` is initialised from stream `i` of a seed drawn from `rng`.
    fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let seed = rng.next_u64();
        let parts = self.exec.map(self.n, |i| self.base.init_params(&mut rng::stream(seed, i as u64)));
        parts.concat()
    }

    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, Self::Tape)> {
        self.check_inputs(params, x)?;
        let parts = self.exec.map(self.n, |i| self.base.forward_tape(self.member_params(params, i), x));
        let mut out = Array2::zeros((x.nrows(), self.n));
        let mut tapes = Vec::with_capacity(self.n);
        for (i, part) in parts.into_iter().enumerate() {
            let (y, tape) = part?;
            out.column_mut(i).assign(&y.column(0));
            tapes.push(tape);
        }
        Ok((out, tapes))
    }

    fn backward(&self, params: &[f64], tape: &Self::Tape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let k = self.base.param_count();
        let dxs = std::sync::Mutex::new(vec![None; self.n]);
        self.exec.for_each_chunk(grad, k, |i, g| {
            let d = dout.slice(ndarray::s![.., i..i + 1]);
            let dx = self.base.backward(self.member_params(params, i), &tape[i], d, g);
            dxs.lock().expect("poisoned")[i] = Some(dx);
        });
        let mut total: Option<Array2<f64>> = None;
        for dx in dxs.into_inner().expect("poisoned").into_iter().flatten() {
            total = Some(match total {
                None => dx,
                Some(t) => t + dx,
            });
        }
        total.expect("at least one member")
    }
}

// --------------------------------------------------------------------------
// Min-pooled pair (double-Q member)
// --------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct MinPooled<M> {
    base: M,
}

#[derive(Clone, Debug)]
pub struct MinPooledTape<T> {
    tapes: [T; 2],
    /// `true` where the second subnetwork attains the minimum.
    second: Vec<bool>,
}

impl<M: Model> MinPooled<M> {
    pub fn new(base: M) -> Result<Self> {
        if base.output_dim() != 1 {
            return Err(Error::InvalidConfig("min-pooled subnetworks must have a single output".into()));
        }
        Ok(Self { base })
    }

    /// Outputs of both subnetworks, `B x 2`.
    pub fn forward_pair(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(params, x)?;
        let k = self.base.param_count();
        let a = self.base.forward(&params[..k], x)?;
        let b = self.base.forward(&params[k..], x)?;
        ndarray::concatenate(Axis(1), &[a.view(), b.view()]).map_err(|e| Error::DimensionMismatch(e.to_string()))
    }
}

impl<M: Model> Model for MinPooled<M> {
    type Tape = MinPooledTape<M::Tape>;

    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        2 * self.base.param_count()
    }

    fn layout(&self) -> Vec<TensorSpec> {
        let base = self.base.layout();
        ["q1", "q2"]
            .iter()
            .flat_map(|p| base.iter().map(move |t| TensorSpec::new(format!("{p}.{}", t.name), &t.shape)))
            .collect()
    }

    fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = self.base.init_params(rng);
        p.extend(self.base.init_params(rng));
        p
    }

    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, Self::Tape)> {
        self.check_inputs(params, x)?;
        let k = self.base.param_count();
        let (a, ta) = self.base.forward_tape(&params[..k], x)?;
        let (b, tb) = self.base.forward_tape(&params[k..], x)?;
        let second: Vec<bool> = a.column(0).iter().zip(b.column(0)).map(|(u, v)| v < u).collect();
        let out = Array2::from_shape_fn((x.nrows(), 1), |(r, _)| if second[r] { b[[r, 0]] } else { a[[r, 0]] });
        Ok((out, MinPooledTape { tapes: [ta, tb], second }))
    }

    fn backward(&self, params: &[f64], tape: &Self::Tape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let k = self.base.param_count();
        let mut da = dout.to_owned();
        let mut db = dout.to_owned();
        for (r, &second) in tape.second.iter().enumerate() {
            if second {
                da[[r, 0]] = 0.0;
            } else {
                db[[r, 0]] = 0.0;
            }
        }
        let (ga, gb) = grad.split_at_mut(k);
        let dxa = self.base.backward(&params[..k], &tape.tapes[0], da.view(), ga);
        let dxb = self.base.backward(&params[k..], &tape.tapes[1], db.view(), gb);
        dxa + dxb
    }
}

// --------------------------------------------------------------------------
// Multi-head
// --------------------------------------------------------------------------

/// Shared trunk plus `N` linear heads: an MLP whose output layer has `N`
/// units, one per member.
#[derive(Clone, Debug)]
pub struct MultiHead {
    net: Mlp,
    n: usize,
}

impl MultiHead {
    pub fn new(base: &MlpSpec, n: usize) -> Result<Self> {
        require_members(n)?;
        require_scalar_base(base)?;
        if base.hidden_dims.is_empty() {
            return Err(Error::InvalidConfig("a multi-head ensemble needs at least one hidden layer".into()));
        }
        Ok(Self { net: Mlp::new(MlpSpec { output_dim: n, ..base.clone() })?, n })
    }

    /// `(trunk parameters, parameters of one head)`.
    pub fn count_formula(base: &MlpSpec, n: usize) -> (usize, usize) {
        let trunk: usize = base.layer_dims()[..base.hidden_dims.len()].iter().map(|(i, o)| i * o + o).sum();
        let head = base.hidden_dims.last().copied().unwrap_or(base.input_dim) + 1;
        let _ = n;
        (trunk, head)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl Model for MultiHead {
    type Tape = MlpTape;

    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.n
    }
    fn param_count(&self) -> usize {
        self.net.param_count()
    }
    fn layout(&self) -> Vec<TensorSpec> {
        let mut l = self.net.layout();
        let n = l.len();
        l[n - 2].name = "heads.weight".into();
        l[n - 1].name = "heads.bias".into();
        for t in &mut l[..n - 2] {
            t.name = format!("trunk.{}", t.name);
        }
        l
    }
    fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        self.net.init_params(rng)
    }
    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.net.forward_tape(params, x)
    }
    fn backward(&self, params: &[f64], tape: &MlpTape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        self.net.backward(params, tape, dout, grad)
    }
}

// --------------------------------------------------------------------------
// MIMO
// --------------------------------------------------------------------------

/// Single network over the input tiled `N` times, with `N` outputs.
#[derive(Clone, Debug)]
pub struct Mimo {
    net: Mlp,
    n: usize,
    base_input: usize,
}

impl Mimo {
    pub fn new(base: &MlpSpec, n: usize) -> Result<Self> {
        require_members(n)?;
        require_scalar_base(base)?;
        let net = Mlp::new(MlpSpec { input_dim: n * base.input_dim, output_dim: n, ..base.clone() })?;
        Ok(Self { net, n, base_input: base.input_dim })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Parameter count of the widened network.
    pub fn count_formula(base: &MlpSpec, n: usize) -> usize {
        MlpSpec { input_dim: n * base.input_dim, output_dim: n, ..base.clone() }.param_count()
    }

    fn tile(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let views = vec![x; self.n];
        ndarray::concatenate(Axis(1), &views).expect("same row count")
    }
}

impl Model for Mimo {
    type Tape = MlpTape;

    fn input_dim(&self) -> usize {
        self.base_input
    }
    fn output_dim(&self) -> usize {
        self.n
    }
    fn param_count(&self) -> usize {
        self.net.param_count()
    }
    fn layout(&self) -> Vec<TensorSpec> {
        self.net.layout()
    }
    fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        self.net.init_params(rng)
    }
    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.check_inputs(params, x)?;
        self.net.forward_tape(params, self.tile(x).view())
    }
    fn backward(&self, params: &[f64], tape: &MlpTape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let dtiled = self.net.backward(params, tape, dout, grad);
        let mut dx = Array2::zeros((dtiled.nrows(), self.base_input));
        for i in 0..self.n {
            dx += &dtiled.slice(ndarray::s![.., i * self.base_input..(i + 1) * self.base_input]);
        }
        dx
    }
}

// --------------------------------------------------------------------------
// Batch ensemble
// --------------------------------------------------------------------------

/// Shared per-layer weights with per-member rank-1 modulation vectors
/// `r_i` (fan-in), `s_i` (fan-out) and per-member biases `b_i`.
///
/// Layout: all shared weight matrices first, then for each member and each
/// layer the triple `(r, s, b)`.
#[derive(Clone, Debug)]
pub struct BatchEnsemble {
    spec: MlpSpec,
    n: usize,
    dims: Vec<(usize, usize)>,
    w_offsets: Vec<usize>,
    member_base: usize,
    member_len: usize,
    /// Offset of `(r, s, b)` for each layer within a member block.
    mod_offsets: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BatchEnsembleTape {
    /// Per member, per layer: `(input, input * r, pre-activation)`.
    layers: Vec<Vec<[Array2<f64>; 3]>>,
}

impl BatchEnsemble {
    pub fn new(base: &MlpSpec, n: usize) -> Result<Self> {
        require_members(n)?;
        require_scalar_base(base)?;
        base.validate()?;
        let dims = base.layer_dims();
        let mut w_offsets = Vec::new();
        let mut off = 0;
        for (i, o) in &dims {
            w_offsets.push(off);
            off += i * o;
        }
        let mut mod_offsets = Vec::new();
        let mut m = 0;
        for (i, o) in &dims {
            mod_offsets.push(m);
            m += i + 2 * o;
        }
        Ok(Self { spec: base.clone(), n, dims, w_offsets, member_base: off, member_len: m, mod_offsets })
    }

    /// `(shared weights, modulation parameters per member)`.
    pub fn count_formula(base: &MlpSpec) -> (usize, usize) {
        let dims = base.layer_dims();
        (dims.iter().map(|(i, o)| i * o).sum(), dims.iter().map(|(i, o)| i + 2 * o).sum())
    }

    /// Range of the modulation parameters (all members) within the buffer.
    pub fn modulation_range(&self) -> std::ops::Range<usize> {
        self.member_base..self.member_base + self.n * self.member_len
    }

    fn weight<'a>(&self, params: &'a [f64], l: usize) -> &'a [f64] {
        let (i, o) = self.dims[l];
        &params[self.w_offsets[l]..self.w_offsets[l] + i * o]
    }

    /// `W` with column `j` scaled by `s[j]`, so the layer is one affine map
    /// `b + (x * r) (W diag(s))`.
    fn scaled_weight(&self, params: &[f64], member: usize, l: usize) -> Vec<f64> {
        let (_, o) = self.dims[l];
        let (_, s, _) = self.modulation(params, member, l);
        self.weight(params, l).iter().enumerate().map(|(k, w)| w * s[k % o]).collect()
    }

    fn modulation_offset(&self, member: usize, l: usize) -> usize {
        self.member_base + member * self.member_len + self.mod_offsets[l]
    }

    /// `(r, s, b)` slices for a member and layer.
    pub fn modulation<'a>(&self, params: &'a [f64], member: usize, l: usize) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (i, o) = self.dims[l];
        let m0 = self.modulation_offset(member, l);
        (&params[m0..m0 + i], &params[m0 + i..m0 + i + o], &params[m0 + i + o..m0 + i + 2 * o])
    }

    /// Sets every `r` and `s` to one and every member's biases to `biases[l]`.
    pub fn set_unit_modulation(&self, params: &mut [f64], biases: &[Vec<f64>]) {
        for member in 0..self.n {
            for (l, (i, o)) in self.dims.iter().enumerate() {
                let m0 = self.modulation_offset(member, l);
                params[m0..m0 + i + o].fill(1.0);
                params[m0 + i + o..m0 + i + 2 * o].copy_from_slice(&biases[l]);
            }
        }
    }

    /// Shared weights and the given biases packed as plain MLP parameters.
    pub fn base_params(&self, params: &[f64], biases: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for (l, b) in biases.iter().enumerate().take(self.dims.len()) {
            out.extend_from_slice(self.weight(params, l));
            out.extend_from_slice(b);
        }
        out
    }

    pub fn dims(&self) -> &[(usize, usize)] {
        &self.dims
    }
}

impl Model for BatchEnsemble {
    type Tape = BatchEnsembleTape;

    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }
    fn output_dim(&self) -> usize {
        self.n
    }
    fn param_count(&self) -> usize {
        self.member_base + self.n * self.member_len
    }

    fn layout(&self) -> Vec<TensorSpec> {
        let mut out: Vec<TensorSpec> = self
            .dims
            .iter()
            .enumerate()
            .map(|(l, (i, o))| TensorSpec::new(format!("layer{l}.weight"), &[*i, *o]))
            .collect();
        for m in 0..self.n {
            for (l, (i, o)) in self.dims.iter().enumerate() {
                out.push(TensorSpec::new(format!("member{m}.layer{l}.r"), &[*i]));
                out.push(TensorSpec::new(format!("member{m}.layer{l}.s"), &[*o]));
                out.push(TensorSpec::new(format!("member{m}.layer{l}.bias"), &[*o]));
            }
        }
        out
    }

    /// Shared weights use the fan-in truncated normal; `r` and `s` start at
    /// one plus small noise and biases use the bias scale.
    fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count()];
        for (l, (i, o)) in self.dims.iter().enumerate() {
            let w0 = self.w_offsets[l];
            fill_fan_in(rng, &mut p[w0..w0 + i * o], self.spec.weight_scale, *i);
        }
        for m in 0..self.n {
            for (l, (i, o)) in self.dims.iter().enumerate() {
                let m0 = self.modulation_offset(m, l);
                fill_fan_in(rng, &mut p[m0..m0 + i + o], 0.1, 1);
                for v in &mut p[m0..m0 + i + o] {
                    *v += 1.0;
                }
                fill_fan_in(rng, &mut p[m0 + i + o..m0 + i + 2 * o], self.spec.bias_scale, *i);
            }
        }
        p
    }

    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, BatchEnsembleTape)> {
        self.check_inputs(params, x)?;
        let act = self.spec.activation;
        let last = self.dims.len() - 1;
        let mut out = Array2::zeros((x.nrows(), self.n));
        let mut tape = Vec::with_capacity(self.n);
        for m in 0..self.n {
            let mut layers = Vec::with_capacity(self.dims.len());
            let mut h = x.to_owned();
            for l in 0..self.dims.len() {
                let (r, _, b) = self.modulation(params, m, l);
                let u = &h * &ndarray::aview1(r);
                let z = affine(u.view(), &self.scaled_weight(params, m, l), b, self.dims[l].1);
                let next = if l == last { z.clone() } else { z.mapv(|t| act.apply(t)) };
                layers.push([h, u, z]);
                h = next;
            }
            out.column_mut(m).assign(&h.column(0));
            tape.push(layers);
        }
        Ok((out, BatchEnsembleTape { layers: tape }))
    }

    fn backward(&self, params: &[f64], tape: &BatchEnsembleTape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let act = self.spec.activation;
        let last = self.dims.len() - 1;
        let mut dx_total = Array2::zeros((dout.nrows(), self.spec.input_dim));
        for m in 0..self.n {
            let mut delta = dout.slice(ndarray::s![.., m..m + 1]).to_owned();
            for l in (0..self.dims.len()).rev() {
                let [h_in, u, z] = &tape.layers[m][l];
                let (i, o) = self.dims[l];
                if l != last {
                    // delta arrives as d/dh; convert to d/dz
                    ndarray::Zip::from(&mut delta).and(z).for_each(|d, &zv| {
                        *d *= act.derivative(zv, act.apply(zv));
                    });
                }
                let (r, s, _) = self.modulation(params, m, l);
                let w = self.weight(params, l);
                let ws = self.scaled_weight(params, m, l);
                let m0 = self.modulation_offset(m, l);
                let mut gws = vec![0.0; i * o];
                let du = affine_backward(
                    u.view(),
                    &ws,
                    delta.view(),
                    &mut gws,
                    Some(&mut grad[m0 + i + o..m0 + i + 2 * o]),
                    true,
                )
                .expect("dx requested");
                let w0 = self.w_offsets[l];
                for k in 0..i {
                    for j in 0..o {
                        let g = gws[k * o + j];
                        grad[w0 + k * o + j] += g * s[j];
                        grad[m0 + i + j] += g * w[k * o + j];
                    }
                }
                for row in 0..du.nrows() {
                    for k in 0..i {
                        grad[m0 + k] += du[[row, k]] * h_in[[row, k]];
                    }
                }
                delta = du * ndarray::aview1(r);
            }
            dx_total += &delta;
        }
        dx_total
    }
}

// --------------------------------------------------------------------------
// Tagged architecture
// --------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    Deep,
    /// Deep ensemble whose members are min-pooled pairs.
    DeepDoubleQ,
    MultiHead,
    Mimo,
    BatchEnsemble,
}

#[derive(Clone, Debug)]
pub enum EnsembleArch {
    Deep(DeepEnsemble<Mlp>),
    DeepDoubleQ(DeepEnsemble<MinPooled<Mlp>>),
    MultiHead(MultiHead),
    Mimo(Mimo),
    BatchEnsemble(BatchEnsemble),
}

pub enum EnsembleTape {
    Deep(Vec<MlpTape>),
    DeepDoubleQ(Vec<MinPooledTape<MlpTape>>),
    Mlp(MlpTape),
    BatchEnsemble(BatchEnsembleTape),
}

impl EnsembleArch {
    pub fn new(kind: EnsembleKind, n: usize, base: &MlpSpec) -> Result<Self> {
        require_scalar_base(base)?;
        Ok(match kind {
            EnsembleKind::Deep => EnsembleArch::Deep(DeepEnsemble::new(Mlp::new(base.clone())?, n)?),
            EnsembleKind::DeepDoubleQ => {
                EnsembleArch::DeepDoubleQ(DeepEnsemble::new(MinPooled::new(Mlp::new(base.clone())?)?, n)?)
            }
            EnsembleKind::MultiHead => EnsembleArch::MultiHead(MultiHead::new(base, n)?),
            EnsembleKind::Mimo => EnsembleArch::Mimo(Mimo::new(base, n)?),
            EnsembleKind::BatchEnsemble => EnsembleArch::BatchEnsemble(BatchEnsemble::new(base, n)?),
        })
    }

    pub fn kind(&self) -> EnsembleKind {
        match self {
            EnsembleArch::Deep(_) => EnsembleKind::Deep,
            EnsembleArch::DeepDoubleQ(_) => EnsembleKind::DeepDoubleQ,
            EnsembleArch::MultiHead(_) => EnsembleKind::MultiHead,
            EnsembleArch::Mimo(_) => EnsembleKind::Mimo,
            EnsembleArch::BatchEnsemble(_) => EnsembleKind::BatchEnsemble,
        }
    }

    pub fn n_members(&self) -> usize {
        self.output_dim()
    }
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            EnsembleArch::Deep($m) => $body,
            EnsembleArch::DeepDoubleQ($m) => $body,
            EnsembleArch::MultiHead($m) => $body,
            EnsembleArch::Mimo($m) => $body,
            EnsembleArch::BatchEnsemble($m) => $body,
        }
    };
}

impl Model for EnsembleArch {
    type Tape = EnsembleTape;

    fn input_dim(&self) -> usize {
        dispatch!(self, m => m.input_dim())
    }
    fn output_dim(&self) -> usize {
        dispatch!(self, m => m.output_dim())
    }
    fn param_count(&self) -> usize {
        dispatch!(self, m => m.param_count())
    }
    fn layout(&self) -> Vec<TensorSpec> {
        dispatch!(self, m => m.layout())
    }
    fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        dispatch!(self, m => m.init_params(rng))
    }

    fn forward_tape(&self, params: &[f64], x: ArrayView2<f64>) -> Result<(Array2<f64>, EnsembleTape)> {
        Ok(match self {
            EnsembleArch::Deep(m) => {
                let (y, t) = m.forward_tape(params, x)?;
                (y, EnsembleTape::Deep(t))
            }
            EnsembleArch::DeepDoubleQ(m) => {
                let (y, t) = m.forward_tape(params, x)?;
                (y, EnsembleTape::DeepDoubleQ(t))
            }
            EnsembleArch::MultiHead(m) => {
                let (y, t) = m.forward_tape(params, x)?;
                (y, EnsembleTape::Mlp(t))
            }
            EnsembleArch::Mimo(m) => {
                let (y, t) = m.forward_tape(params, x)?;
                (y, EnsembleTape::Mlp(t))
            }
            EnsembleArch::BatchEnsemble(m) => {
                let (y, t) = m.forward_tape(params, x)?;
                (y, EnsembleTape::BatchEnsemble(t))
            }
        })
    }

    fn backward(&self, params: &[f64], tape: &EnsembleTape, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        match (self, tape) {
            (EnsembleArch::Deep(m), EnsembleTape::Deep(t)) => m.backward(params, t, dout, grad),
            (EnsembleArch::DeepDoubleQ(m), EnsembleTape::DeepDoubleQ(t)) => m.backward(params, t, dout, grad),
            (EnsembleArch::MultiHead(m), EnsembleTape::Mlp(t)) => m.backward(params, t, dout, grad),
            (EnsembleArch::Mimo(m), EnsembleTape::Mlp(t)) => m.backward(params, t, dout, grad),
            (EnsembleArch::BatchEnsemble(m), EnsembleTape::BatchEnsemble(t)) => m.backward(params, t, dout, grad),
            _ => panic!("tape does not belong to this architecture"),
        }
    }
}
