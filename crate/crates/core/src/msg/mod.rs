//! Actor-critic offline RL with an independently trained Q ensemble.
//!
//! Every critic member regresses onto targets computed from its own EMA
//! target network, optionally with a support regularizer that lowers Q at
//! policy actions relative to dataset actions. The policy ascends the
//! ensemble lower confidence bound `mean + beta * std` (with `beta <= 0`)
//! through reparameterised samples.

mod eval;
mod policy;

pub use eval::{evaluate_policy, EvalSummary};
pub use policy::{GaussianPolicy, PolicyHeads, PolicySpec, ATANH_CLIP};

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::error::{dim_check, Error, Result};
use crate::fqe::{ensemble_mean, ensemble_std};
use crate::io::{csv_writer, fmt_f64};
use crate::nnets::{checkpoint, Activation, Adam, Mlp, MlpSpec, Model};
use crate::par::Exec;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsgHyperparams {
    /// LCB weight, `Q_LCB = mean + beta * std`; must be `<= 0`.
    pub beta: f64,
    /// Support regularizer weight, `>= 0`.
    pub alpha: f64,
    pub gamma: f64,
    /// EMA rate: `target <- tau * target + (1 - tau) * online`.
    pub tau: f64,
    pub n_members: usize,
    pub batch_size: usize,
    pub bc_steps: usize,
    pub train_steps: usize,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub seed: u64,
    pub q_hidden: Vec<usize>,
    pub q_activation: Activation,
    pub policy: PolicySpec,
}

impl Default for MsgHyperparams {
    fn default() -> Self {
        Self {
            beta: -4.0,
            alpha: 0.0,
            gamma: 0.99,
            tau: 0.995,
            n_members: 4,
            batch_size: 256,
            bc_steps: 500,
            train_steps: 3000,
            lr_q: 3e-4,
            lr_pi: 3e-4,
            seed: 0,
            q_hidden: vec![64, 64],
            q_activation: Activation::Relu,
            policy: PolicySpec::default(),
        }
    }
}

impl MsgHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("msg hyperparameters: {m}")));
        if !(self.beta <= 0.0) {
            return bad(format!("beta must be <= 0, got {}", self.beta));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if self.n_members == 0 || self.batch_size == 0 {
            return bad("n_members and batch_size must be >= 1".into());
        }
        if !(self.lr_q > 0.0 && self.lr_pi > 0.0) {
            return bad("learning rates must be > 0".into());
        }
        Ok(())
    }

    pub fn q_spec(&self, input_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_dims: self.q_hidden.clone(),
            activation: self.q_activation,
            output_dim: 1,
            weight_scale: 1.0,
            bias_scale: 0.0,
        }
    }
}

/// `mean + beta * std` of one row of member values (population std).
pub fn q_lcb(values: ArrayView1<f64>, beta: f64) -> f64 {
    ensemble_mean(values) + beta * ensemble_std(values)
}

/// `d q_lcb / d values`. Where the members agree the std term contributes
/// nothing.
pub fn q_lcb_weights(values: ArrayView1<f64>, beta: f64) -> Array1<f64> {
    let n = values.len() as f64;
    let m = ensemble_mean(values);
    let s = ensemble_std(values);
    values.mapv(|v| 1.0 / n + if s > 0.0 { beta * (v - m) / (n * s) } else { 0.0 })
}

/// Support regularizer for one member: mean Q at policy actions minus mean
/// Q at dataset actions.
pub fn support_regularizer(q_policy: ArrayView1<f64>, q_data: ArrayView1<f64>) -> f64 {
    q_policy.mean().unwrap_or(0.0) - q_data.mean().unwrap_or(0.0)
}

/// `target <- tau * target + (1 - tau) * online`.
pub fn ema_update(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * *t + (1.0 - tau) * o;
    }
}

fn concat_cols(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("equal row counts")
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

// --------------------------------------------------------------------------
// Critic ensemble
// --------------------------------------------------------------------------

/// Online and EMA target parameters plus Adam state for each member.
#[derive(Clone, Debug)]
pub struct Critic {
    net: Mlp,
    pub online: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    opts: Vec<Adam>,
    exec: Exec,
}

/// Per-member scalars from one evaluation step.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStepStats {
    pub td_loss: Vec<f64>,
    pub regularizer: Vec<f64>,
}

/// A sampled minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
}

impl Batch {
    pub fn sample(dataset: &OfflineDataset, size: usize, rng: &mut Rng) -> Self {
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..dataset.len())).collect();
        Self {
            states: dataset.states().select(Axis(0), &idx),
            actions: dataset.actions().select(Axis(0), &idx),
            rewards: dataset.r().select(Axis(0), &idx),
            next_states: dataset.next_states().select(Axis(0), &idx),
        }
    }
}

impl Critic {
    /// Member `i` starts from stream `i` of `seed`; targets copy the online
    /// parameters exactly.
    pub fn init(spec: MlpSpec, n: usize, seed: u64, lr: f64) -> Result<Self> {
        let net = Mlp::new(spec)?;
        let online: Vec<Vec<f64>> = (0..n).map(|i| net.init_params(&mut rng::stream(seed, i as u64))).collect();
        Ok(Self::from_params(net, online, lr))
    }

    pub fn from_params(net: Mlp, online: Vec<Vec<f64>>, lr: f64) -> Self {
        let k = net.param_count();
        let opts = online.iter().map(|_| Adam::new(k, lr)).collect();
        Self { net, target: online.clone(), online, opts, exec: Exec::default() }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn n_members(&self) -> usize {
        self.online.len()
    }

    /// Online member values at `[states, actions]`, `B x N`.
    pub fn values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = concat_cols(states, actions);
        let cols = self.exec.map(self.online.len(), |i| self.net.forward(&self.online[i], x.view()));
        let mut out = Array2::zeros((x.nrows(), self.online.len()));
        for (i, c) in cols.into_iter().enumerate() {
            out.column_mut(i).assign(&c?.column(0));
        }
        Ok(out)
    }

    /// Per-member TD targets `r + gamma Q_target_i(s', a'_i)`; column `i` of
    /// `next_actions` is member `i`'s own policy sample.
    pub fn targets(&self, batch: &Batch, next_actions: &[Array2<f64>], gamma: f64) -> Result<Array2<f64>> {
        dim_check(next_actions.len() == self.online.len(), || "one next-action sample per member".into())?;
        let cols = self.exec.map(self.online.len(), |i| {
            let x = concat_cols(batch.next_states.view(), next_actions[i].view());
            self.net.forward(&self.target[i], x.view())
        });
        let mut y = Array2::zeros((batch.rewards.len(), self.online.len()));
        for (i, c) in cols.into_iter().enumerate() {
            let q = c?;
            for b in 0..y.nrows() {
                y[[b, i]] = batch.rewards[b] + gamma * q[[b, 0]];
            }
        }
        Ok(y)
    }

    /// Loss and gradient of member `i`: MSE to `y` plus `alpha` times the
    /// support regularizer.
    pub fn member_loss_grad(
        &self,
        params: &[f64],
        batch: &Batch,
        y: ArrayView1<f64>,
        policy_actions: ArrayView2<f64>,
        alpha: f64,
    ) -> Result<(f64, f64, Vec<f64>)> {
        let rows = batch.rewards.len() as f64;
        let x_data = concat_cols(batch.states.view(), batch.actions.view());
        let (q_data, tape) = self.net.forward_tape(params, x_data.view())?;
        let mut grad = vec![0.0; params.len()];
        let mut d_data = Array2::zeros(q_data.raw_dim());
        let mut mse = 0.0;
        for b in 0..q_data.nrows() {
            let diff = q_data[[b, 0]] - y[b];
            mse += diff * diff / rows;
            d_data[[b, 0]] = 2.0 * diff / rows - alpha / rows;
        }
        self.net.backward_params(params, &tape, d_data.view(), &mut grad);
        let mut reg = 0.0;
        if alpha != 0.0 || policy_actions.nrows() > 0 {
            let x_pi = concat_cols(batch.states.view(), policy_actions);
            let (q_pi, tape_pi) = self.net.forward_tape(params, x_pi.view())?;
            reg = support_regularizer(q_pi.column(0), q_data.column(0));
            if alpha != 0.0 {
                let d_pi = Array2::from_elem(q_pi.raw_dim(), alpha / rows);
                self.net.backward_params(params, &tape_pi, d_pi.view(), &mut grad);
            }
        }
        Ok((mse + alpha * reg, reg, grad))
    }

    /// One Adam step per member followed by the EMA target update.
    pub fn evaluation_step(
        &mut self,
        batch: &Batch,
        next_actions: &[Array2<f64>],
        policy_actions: &[Array2<f64>],
        alpha: f64,
        gamma: f64,
        tau: f64,
    ) -> Result<EvalStepStats> {
        let y = self.targets(batch, next_actions, gamma)?;
        let n = self.online.len();
        let grads = self.exec.map(n, |i| {
            self.member_loss_grad(&self.online[i], batch, y.column(i), policy_actions[i].view(), alpha)
        });
        let mut stats = EvalStepStats { td_loss: Vec::with_capacity(n), regularizer: Vec::with_capacity(n) };
        for (i, g) in grads.into_iter().enumerate() {
            let (loss, reg, grad) = g?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("critic member {i} loss {loss}")));
            }
            self.opts[i].update(&mut self.online[i], &grad);
            ema_update(&mut self.target[i], &self.online[i], tau);
            stats.td_loss.push(loss - alpha * reg);
            stats.regularizer.push(reg);
        }
        Ok(stats)
    }

    /// Mean over the batch of `Q_LCB(s, a)` and its gradient with respect
    /// to `a` (`B x action_dim`).
    pub fn lcb_and_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        beta: f64,
    ) -> Result<(f64, Array2<f64>)> {
        let x = concat_cols(states, actions);
        let rows = x.nrows();
        let n = self.online.len();
        let fwd = self.exec.map(n, |i| self.net.forward_tape(&self.online[i], x.view()));
        let mut tapes = Vec::with_capacity(n);
        let mut q = Array2::zeros((rows, n));
        for (i, f) in fwd.into_iter().enumerate() {
            let (out, tape) = f?;
            q.column_mut(i).assign(&out.column(0));
            tapes.push(tape);
        }
        let mut weights = Array2::zeros((rows, n));
        let mut total = 0.0;
        for b in 0..rows {
            total += q_lcb(q.row(b), beta);
            weights.row_mut(b).assign(&(q_lcb_weights(q.row(b), beta) / rows as f64));
        }
        let dxs = self.exec.map(n, |i| {
            let mut scratch = vec![0.0; self.net.param_count()];
            let dout = weights.slice(ndarray::s![.., i..i + 1]);
            self.net.backward(&self.online[i], &tapes[i], dout, &mut scratch)
        });
        let s_dim = states.ncols();
        let mut da = Array2::zeros((rows, actions.ncols()));
        for dx in dxs {
            da += &dx.slice(ndarray::s![.., s_dim..]);
        }
        Ok((total / rows as f64, da))
    }
}

/// Mean `Q_LCB` at reparameterised policy actions and its gradient with
/// respect to the policy parameters, for fixed noise `eps`.
pub fn policy_objective(
    critic: &Critic,
    policy: &GaussianPolicy,
    pi_params: &[f64],
    states: ArrayView2<f64>,
    eps: ArrayView2<f64>,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let heads = policy.heads(pi_params, states)?;
    dim_check(eps.dim() == heads.mu.dim(), || "noise shape does not match the action batch".into())?;
    let actions = ndarray::Zip::from(&heads.mu)
        .and(&heads.log_std)
        .and(eps)
        .map_collect(|m, ls, e| policy.action_scale() * (m + ls.exp() * e).tanh());
    let (value, da) = critic.lcb_and_action_grad(states, actions.view(), beta)?;
    let grad = policy.backprop_actions(pi_params, &heads, eps, da.view());
    Ok((value, grad))
}

// --------------------------------------------------------------------------
// Training
// --------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Bc,
    Policy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub phase: Phase,
    pub td_loss: Vec<f64>,
    /// Mean over members of the support regularizer.
    pub regularizer: f64,
    pub q_lcb_mean: f64,
    /// Negative mean log-likelihood in the BC phase, negative mean `Q_LCB`
    /// afterwards.
    pub policy_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let n = self.rows.first().map(|r| r.td_loss.len()).unwrap_or(0);
        let mut header = vec!["step".to_string(), "phase".into()];
        header.extend((0..n).map(|i| format!("td_loss_{i}")));
        header.extend(["regularizer".into(), "q_lcb_mean".into(), "policy_loss".into()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), if r.phase == Phase::Bc { "bc" } else { "policy" }.to_string()];
            rec.extend(r.td_loss.iter().map(|v| fmt_f64(*v)));
            rec.extend([fmt_f64(r.regularizer), fmt_f64(r.q_lcb_mean), fmt_f64(r.policy_loss)]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Policy, critic and optimiser state of a training run.
pub struct MsgAgent {
    pub hp: MsgHyperparams,
    pub policy: GaussianPolicy,
    pub pi_params: Vec<f64>,
    pi_opt: Adam,
    pub critic: Critic,
    rng: Rng,
    step: usize,
}

impl MsgAgent {
    pub fn new(dataset: &OfflineDataset, action_scale: f64, hp: MsgHyperparams) -> Result<Self> {
        Self::with_exec(dataset, action_scale, hp, Exec::default())
    }

    pub fn with_exec(dataset: &OfflineDataset, action_scale: f64, hp: MsgHyperparams, exec: Exec) -> Result<Self> {
        hp.validate()?;
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (s_dim, a_dim) = (dataset.state_dim(), dataset.action_dim());
        let policy = GaussianPolicy::new(s_dim, a_dim, action_scale, &hp.policy)?;
        let pi_params = policy.init_params(&mut rng::stream(rng::derive_seed(hp.seed, "msg-policy-init"), 0));
        let critic = Critic::init(hp.q_spec(s_dim + a_dim), hp.n_members, rng::derive_seed(hp.seed, "msg-critic-init"), hp.lr_q)?
            .with_exec(exec);
        let pi_opt = Adam::new(policy.param_count(), hp.lr_pi);
        let rng = rng::stream(rng::derive_seed(hp.seed, "msg-train"), 0);
        Ok(Self { hp, policy, pi_params, pi_opt, critic, rng, step: 0 })
    }

    /// Samples one minibatch and fresh per-member policy actions, then runs
    /// the critic update.
    fn evaluation(&mut self, batch: &Batch) -> Result<EvalStepStats> {
        let n = self.critic.n_members();
        let a_dim = self.policy.action_dim();
        let rows = batch.rewards.len();
        let mut next_actions = Vec::with_capacity(n);
        let mut policy_actions = Vec::with_capacity(n);
        for _ in 0..n {
            let e1 = normal_matrix(&mut self.rng, rows, a_dim);
            let e2 = normal_matrix(&mut self.rng, rows, a_dim);
            next_actions.push(self.policy.sample(&self.pi_params, batch.next_states.view(), e1.view())?);
            policy_actions.push(self.policy.sample(&self.pi_params, batch.states.view(), e2.view())?);
        }
        let hp = &self.hp;
        self.critic.evaluation_step(batch, &next_actions, &policy_actions, hp.alpha, hp.gamma, hp.tau)
    }

    fn log_row(&self, phase: Phase, stats: EvalStepStats, q_lcb_mean: f64, policy_loss: f64) -> LogRow {
        let n = stats.regularizer.len() as f64;
        LogRow {
            step: self.step,
            phase,
            regularizer: stats.regularizer.iter().sum::<f64>() / n,
            td_loss: stats.td_loss,
            q_lcb_mean,
            policy_loss,
        }
    }

    /// Critic update plus one behavioural cloning step.
    pub fn bc_step(&mut self, dataset: &OfflineDataset) -> Result<LogRow> {
        let batch = Batch::sample(dataset, self.hp.batch_size, &mut self.rng);
        let stats = self.evaluation(&batch)?;
        let (ll, grad) = self.policy.log_likelihood_grad(&self.pi_params, batch.states.view(), batch.actions.view())?;
        if !ll.is_finite() {
            return Err(Error::Diverged(format!("behavioural cloning log-likelihood {ll}")));
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.pi_opt.update(&mut self.pi_params, &neg);
        let q = self.batch_lcb(&batch)?;
        let row = self.log_row(Phase::Bc, stats, q, -ll);
        self.step += 1;
        Ok(row)
    }

    /// Critic update plus one ascent step on the ensemble LCB.
    pub fn policy_step(&mut self, dataset: &OfflineDataset) -> Result<LogRow> {
        let batch = Batch::sample(dataset, self.hp.batch_size, &mut self.rng);
        let stats = self.evaluation(&batch)?;
        let eps = normal_matrix(&mut self.rng, batch.rewards.len(), self.policy.action_dim());
        let (value, grad) =
            policy_objective(&self.critic, &self.policy, &self.pi_params, batch.states.view(), eps.view(), self.hp.beta)?;
        if !value.is_finite() {
            return Err(Error::Diverged(format!("policy objective {value}")));
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.pi_opt.update(&mut self.pi_params, &neg);
        let row = self.log_row(Phase::Policy, stats, value, -value);
        self.step += 1;
        Ok(row)
    }

    /// Mean LCB at the policy's deterministic actions on the batch states.
    fn batch_lcb(&self, batch: &Batch) -> Result<f64> {
        let a = self.policy.mode(&self.pi_params, batch.states.view())?;
        let q = self.critic.values(batch.states.view(), a.view())?;
        Ok(q.rows().into_iter().map(|r| q_lcb(r, self.hp.beta)).sum::<f64>() / q.nrows() as f64)
    }

    /// Deterministic action for a single state.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Ok(self.policy.mode(&self.pi_params, s)?.row(0).to_vec())
    }

    /// Writes `policy.{bin,json}` and `critic_<i>.{bin,json}` under `dir`.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        let pol_meta = serde_json::json!({ "kind": "squashed-gaussian-policy", "net": self.policy.net().spec(), "action_scale": self.policy.action_scale() });
        files.extend(checkpoint::save(&dir.join("policy"), &self.pi_params, &self.policy.net().layout(), pol_meta)?);
        for (i, p) in self.critic.online.iter().enumerate() {
            let meta = serde_json::json!({ "kind": "critic-member", "member": i, "net": self.critic.net().spec() });
            files.extend(checkpoint::save(&dir.join(format!("critic_{i}")), p, &self.critic.net().layout(), meta)?);
        }
        Ok(files)
    }
}

/// Behavioural cloning interleaved with critic updates for `steps` steps.
pub fn bc_pretrain(agent: &mut MsgAgent, dataset: &OfflineDataset, steps: usize) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    for _ in 0..steps {
        log.rows.push(agent.bc_step(dataset)?);
    }
    Ok(log)
}

/// `bc_steps` of BC, then `train_steps` of LCB policy optimisation.
pub fn train_msg(dataset: &OfflineDataset, action_scale: f64, hp: &MsgHyperparams) -> Result<(MsgAgent, TrainLog)> {
    let mut agent = MsgAgent::new(dataset, action_scale, hp.clone())?;
    let mut log = bc_pretrain(&mut agent, dataset, hp.bc_steps)?;
    for _ in 0..hp.train_steps {
        log.rows.push(agent.policy_step(dataset)?);
    }
    Ok((agent, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_chain_dataset, ChainConfig, DatasetMeta};
    use crate::nnets::gradcheck::{check_gradient, probe_coords};
    use ndarray::array;

    fn tiny_hp() -> MsgHyperparams {
        MsgHyperparams {
            n_members: 3,
            batch_size: 16,
            bc_steps: 3,
            train_steps: 3,
            q_hidden: vec![8],
            q_activation: Activation::Tanh,
            policy: PolicySpec { hidden_dims: vec![8], activation: Activation::Tanh, bias_scale: 0.3, ..Default::default() },
            ..Default::default()
        }
    }

    fn chain() -> (OfflineDataset, ChainConfig) {
        let cfg = ChainConfig { n_episodes: 5, episode_len: 10, gap_lo: 0.0, gap_hi: 0.0, ..Default::default() };
        (collect_chain_dataset(&cfg).unwrap(), cfg)
    }

    #[test]
    fn lcb_reduces_to_mean_and_is_pessimistic() {
        let v = array![1.0, 2.0, 6.0];
        assert_eq!(q_lcb(v.view(), 0.0), 3.0);
        assert!(q_lcb(v.view(), -1.0) < 3.0);
        assert_eq!(q_lcb(array![0.7].view(), -4.0), 0.7);
        assert_eq!(q_lcb(array![0.1, 0.1, 0.1].view(), -4.0), 0.1);
    }

    #[test]
    fn lcb_weights_match_finite_differences() {
        let v = [0.3, -1.2, 2.5, 0.9];
        let w = q_lcb_weights(ndarray::aview1(&v), -2.0);
        let f = |x: &[f64]| q_lcb(ndarray::aview1(x), -2.0);
        assert!(check_gradient(f, &v, w.as_slice().unwrap(), &[0, 1, 2, 3]) < 1e-6);
    }

    #[test]
    fn regularizer_shift_invariant_and_zero_at_data_actions() {
        let qp = array![1.0, 4.0, -2.0];
        let qd = array![0.5, 0.0, 3.0];
        let base = support_regularizer(qp.view(), qd.view());
        let shifted = support_regularizer((&qp + 7.25).view(), (&qd + 7.25).view());
        assert!((base - shifted).abs() < 1e-12);
        assert_eq!(support_regularizer(qd.view(), qd.view()), 0.0);
    }

    #[test]
    fn ema_matches_closed_form() {
        let tau: f64 = 0.9;
        let online = [0.5, -1.0, 2.0, 3.0, 0.25];
        let mut target = [4.0];
        for o in online {
            ema_update(&mut target, &[o], tau);
        }
        let k = online.len();
        let mut expect = tau.powi(k as i32) * 4.0;
        for (j, o) in online.iter().enumerate() {
            expect += (1.0 - tau) * tau.powi((k - 1 - j) as i32) * o;
        }
        assert!((target[0] - expect).abs() < 1e-12);
        let mut fixed = [1.5];
        ema_update(&mut fixed, &[9.0], 1.0);
        assert_eq!(fixed, [1.5]);
    }

    #[test]
    fn zero_alpha_is_plain_td_gradient() {
        let (data, _) = chain();
        let hp = tiny_hp();
        let critic = Critic::init(hp.q_spec(2), 2, 3, 1e-3).unwrap();
        let mut r = rng::stream(0, 0);
        let batch = Batch::sample(&data, 8, &mut r);
        let y = Array1::from_shape_fn(8, |k| k as f64 * 0.1);
        let pa = Array2::from_elem((8, 1), 0.2);
        let (loss, reg, g) = critic.member_loss_grad(&critic.online[0], &batch, y.view(), pa.view(), 0.0).unwrap();
        let x = concat_cols(batch.states.view(), batch.actions.view());
        let (mse, g2) = crate::nnets::backward_mse(critic.net(), &critic.online[0], x.view(), y.as_slice().unwrap()).unwrap();
        assert_eq!(loss, mse);
        assert_eq!(g, g2);
        assert!(reg.is_finite());
        let (_, reg_same, _) =
            critic.member_loss_grad(&critic.online[0], &batch, y.view(), batch.actions.view(), 5.0).unwrap();
        assert_eq!(reg_same, 0.0);
    }

    #[test]
    fn regularized_loss_gradient_matches_finite_differences() {
        let (data, _) = chain();
        let critic = Critic::init(tiny_hp().q_spec(2), 1, 4, 1e-3).unwrap();
        let mut r = rng::stream(1, 0);
        let batch = Batch::sample(&data, 8, &mut r);
        let y = Array1::from_shape_fn(8, |k| 1.0 - k as f64 * 0.2);
        let pa = Array2::from_shape_fn((8, 1), |(b, _)| 0.3 * ((b as f64) * 0.7).sin());
        let p = critic.online[0].clone();
        let (_, _, g) = critic.member_loss_grad(&p, &batch, y.view(), pa.view(), 0.8).unwrap();
        let f = |q: &[f64]| critic.member_loss_grad(q, &batch, y.view(), pa.view(), 0.8).unwrap().0;
        let coords: Vec<usize> = (0..p.len()).collect();
        assert!(check_gradient(f, &p, &g, &coords) < 1e-4);
    }

    #[test]
    fn member_targets_read_only_own_target_network() {
        let (data, _) = chain();
        let mut critic = Critic::init(tiny_hp().q_spec(2), 3, 5, 1e-3).unwrap();
        let mut r = rng::stream(2, 0);
        let batch = Batch::sample(&data, 8, &mut r);
        let na: Vec<Array2<f64>> = (0..3).map(|i| Array2::from_elem((8, 1), 0.1 * i as f64)).collect();
        let before = critic.targets(&batch, &na, 0.99).unwrap();
        for v in &mut critic.target[1] {
            *v += 0.3;
        }
        for v in &mut critic.online[0] {
            *v -= 0.5;
        }
        let after = critic.targets(&batch, &na, 0.99).unwrap();
        assert_eq!(before.column(0), after.column(0));
        assert_eq!(before.column(2), after.column(2));
        assert_ne!(before.column(1), after.column(1));
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let (data, cfg) = chain();
        let hp = tiny_hp();
        let agent = MsgAgent::new(&data, cfg.action_range, hp).unwrap();
        let mut r = rng::stream(3, 0);
        let batch = Batch::sample(&data, 10, &mut r);
        let eps = normal_matrix(&mut r, 10, 1);
        let (_, g) =
            policy_objective(&agent.critic, &agent.policy, &agent.pi_params, batch.states.view(), eps.view(), -4.0)
                .unwrap();
        let f = |p: &[f64]| {
            policy_objective(&agent.critic, &agent.policy, p, batch.states.view(), eps.view(), -4.0).unwrap().0
        };
        let coords = probe_coords(&mut r, 0..agent.pi_params.len(), 100);
        let err = check_gradient(f, &agent.pi_params, &g, &coords);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn single_member_objective_ignores_beta() {
        let (data, cfg) = chain();
        let hp = MsgHyperparams { n_members: 1, ..tiny_hp() };
        let agent = MsgAgent::new(&data, cfg.action_range, hp).unwrap();
        let s = data.states().to_owned();
        let eps = Array2::from_elem((s.nrows(), 1), 0.3);
        let a = policy_objective(&agent.critic, &agent.policy, &agent.pi_params, s.view(), eps.view(), 0.0).unwrap();
        let b = policy_objective(&agent.critic, &agent.policy, &agent.pi_params, s.view(), eps.view(), -4.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_bc_steps_leave_policy_unchanged() {
        let (data, cfg) = chain();
        let mut agent = MsgAgent::new(&data, cfg.action_range, tiny_hp()).unwrap();
        let before = agent.pi_params.clone();
        let log = bc_pretrain(&mut agent, &data, 0).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(agent.pi_params, before);
    }

    #[test]
    fn bc_recovers_a_constant_action() {
        let n = 64;
        let states = Array2::from_shape_fn((n, 1), |(k, _)| -1.0 + 2.0 * k as f64 / (n - 1) as f64);
        let actions = Array2::from_elem((n, 1), 0.2);
        let meta = DatasetMeta {
            generator: "constant".into(),
            seed: 0,
            config: serde_json::Value::Null,
            config_hash: String::new(),
            state_dim: 1,
            action_dim: 1,
        };
        let x = concat_cols(states.view(), actions.view());
        let xp = x.clone();
        let data = OfflineDataset::new(x, Array1::zeros(n), xp, meta).unwrap();
        let hp = MsgHyperparams { lr_pi: 3e-3, batch_size: 32, ..tiny_hp() };
        let mut agent = MsgAgent::new(&data, 0.3, hp).unwrap();
        let log = bc_pretrain(&mut agent, &data, 600).unwrap();
        for s in [-0.9, -0.2, 0.4, 1.0] {
            let a = agent.act(&[s]).unwrap()[0];
            assert!((a - 0.2).abs() < 0.05, "state {s}: action {a}");
        }
        // smoothed negative log-likelihood trends down
        let first: f64 = log.rows[..50].iter().map(|r| r.policy_loss).sum();
        let last: f64 = log.rows[550..].iter().map(|r| r.policy_loss).sum();
        assert!(last < first);
    }

    #[test]
    fn training_is_deterministic_and_logged() {
        let (data, cfg) = chain();
        let hp = tiny_hp();
        let (a, la) = train_msg(&data, cfg.action_range, &hp).unwrap();
        let (b, lb) = train_msg(&data, cfg.action_range, &hp).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.pi_params, b.pi_params);
        assert_eq!(la.rows.len(), hp.bc_steps + hp.train_steps);
        assert_eq!(la.rows[0].phase, Phase::Bc);
        assert_eq!(la.rows.last().unwrap().phase, Phase::Policy);
        let seq = MsgAgent::with_exec(&data, cfg.action_range, hp.clone(), Exec::Sequential).unwrap();
        let par = MsgAgent::with_exec(&data, cfg.action_range, hp, Exec::Parallel).unwrap();
        assert_eq!(seq.critic.online, par.critic.online);
    }

    #[test]
    fn zero_train_steps_return_bc_policy() {
        let (data, cfg) = chain();
        let hp = MsgHyperparams { train_steps: 0, ..tiny_hp() };
        let (agent, _) = train_msg(&data, cfg.action_range, &hp).unwrap();
        let mut manual = MsgAgent::new(&data, cfg.action_range, hp.clone()).unwrap();
        bc_pretrain(&mut manual, &data, hp.bc_steps).unwrap();
        assert_eq!(agent.pi_params, manual.pi_params);
    }

    #[test]
    fn tau_one_freezes_targets() {
        let (data, cfg) = chain();
        let hp = MsgHyperparams { tau: 1.0, ..tiny_hp() };
        let mut agent = MsgAgent::new(&data, cfg.action_range, hp).unwrap();
        let before = agent.critic.target.clone();
        agent.policy_step(&data).unwrap();
        assert_eq!(agent.critic.target, before);
        assert_ne!(agent.critic.online, before);
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(MsgHyperparams::default().validate().is_ok());
        assert!(MsgHyperparams { beta: 1.0, ..Default::default() }.validate().is_err());
        assert!(MsgHyperparams { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(MsgHyperparams { tau: 0.0, ..Default::default() }.validate().is_err());
    }
}
