//! Ensemble fitted Q-evaluation of a fixed policy.
//!
//! Each outer iteration freezes TD targets computed from the current
//! ensemble under a [`TargetRule`], then fits every member to its target
//! column with full-batch gradient steps. No target networks are used.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::error::{dim_check, Error, Result};
use crate::io::{csv_writer, fmt_f64};
use crate::nnets::{mse, Activation, MinPooled, Mlp, MlpSpec, Model, Optimizer, OptimizerKind};
use crate::par::Exec;
use crate::rng;

/// Regions reported for the chain experiment: gap-feeding, gap, data-rich.
pub const CHAIN_REGIONS: [(f64, f64); 3] = [(-1.0, -0.33), (-0.33, 0.33), (0.33, 1.0)];

/// Slack when testing whether a grid point lies inside a region.
pub const REGION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetRule {
    Independent,
    IndependentDoubleQ,
    SharedMean,
    SharedLcb { k: f64 },
    SharedMin,
}

impl TargetRule {
    pub const ALL_CHAIN: [TargetRule; 5] = [
        TargetRule::Independent,
        TargetRule::IndependentDoubleQ,
        TargetRule::SharedMean,
        TargetRule::SharedLcb { k: 2.0 },
        TargetRule::SharedMin,
    ];

    pub fn is_shared(self) -> bool {
        matches!(self, TargetRule::SharedMean | TargetRule::SharedLcb { .. } | TargetRule::SharedMin)
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetRule::Independent => "independent",
            TargetRule::IndependentDoubleQ => "independent-double-q",
            TargetRule::SharedMean => "shared-mean",
            TargetRule::SharedLcb { .. } => "shared-lcb",
            TargetRule::SharedMin => "shared-min",
        }
    }

    pub fn validate(self) -> Result<()> {
        if let TargetRule::SharedLcb { k } = self {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidConfig(format!("shared-lcb multiplier must be > 0, got {k}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TargetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetRule::SharedLcb { k } => write!(f, "shared-lcb-{k}"),
            r => f.write_str(r.name()),
        }
    }
}

/// Parses `independent`, `independent-double-q`, `shared-mean`, `shared-min`,
/// `shared-lcb` (k = 2) or `shared-lcb-<k>`.
impl FromStr for TargetRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rule = match s {
            "independent" => TargetRule::Independent,
            "independent-double-q" => TargetRule::IndependentDoubleQ,
            "shared-mean" => TargetRule::SharedMean,
            "shared-min" => TargetRule::SharedMin,
            "shared-lcb" => TargetRule::SharedLcb { k: 2.0 },
            other => match other.strip_prefix("shared-lcb-").map(str::parse::<f64>) {
                Some(Ok(k)) => TargetRule::SharedLcb { k },
                _ => return Err(Error::InvalidConfig(format!("unknown target rule '{s}'"))),
            },
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// Mean of a row, computed as an offset from the first entry so identical
/// entries give back that entry exactly.
pub fn ensemble_mean(row: ArrayView1<f64>) -> f64 {
    let n = row.len();
    if n == 0 {
        return f64::NAN;
    }
    let first = row[0];
    first + row.iter().map(|v| v - first).sum::<f64>() / n as f64
}

/// Population standard deviation (divide by `N`).
pub fn ensemble_std(row: ArrayView1<f64>) -> f64 {
    let m = ensemble_mean(row);
    (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / row.len() as f64).sqrt()
}

/// Ensemble predictions at `(s', pi(s'))`.
#[derive(Clone, Debug, PartialEq)]
pub enum NextValues {
    /// `|D| x N`.
    Single(Array2<f64>),
    /// Both subnetworks of each min-pooled member, each `|D| x N`.
    Paired(Array2<f64>, Array2<f64>),
}

impl NextValues {
    pub fn dim(&self) -> (usize, usize) {
        match self {
            NextValues::Single(q) | NextValues::Paired(q, _) => q.dim(),
        }
    }
}

/// Per-member TD targets, `|D| x N`.
pub fn compute_targets(rule: TargetRule, next: &NextValues, r: ArrayView1<f64>, gamma: f64) -> Result<Array2<f64>> {
    let (rows, n) = next.dim();
    dim_check(r.len() == rows, || format!("{} rewards for {} rows", r.len(), rows))?;
    dim_check(n >= 1, || "no ensemble members".into())?;
    let q = match (rule, next) {
        (TargetRule::IndependentDoubleQ, NextValues::Paired(a, b)) => {
            dim_check(a.dim() == b.dim(), || "paired next values differ in shape".into())?;
            let mut m = a.clone();
            m.zip_mut_with(b, |x, y| *x = x.min(*y));
            return Ok(bootstrap(r, gamma, &m));
        }
        (TargetRule::IndependentDoubleQ, NextValues::Single(_)) => {
            return Err(Error::DimensionMismatch("double-Q targets need paired subnetwork values".into()));
        }
        (_, NextValues::Paired(..)) => {
            return Err(Error::DimensionMismatch(format!("{} targets take one value per member", rule.name())));
        }
        (_, NextValues::Single(q)) => q,
    };
    let shared: Array1<f64> = match rule {
        TargetRule::Independent => return Ok(bootstrap(r, gamma, q)),
        TargetRule::SharedMean => q.rows().into_iter().map(ensemble_mean).collect(),
        TargetRule::SharedLcb { k } => q.rows().into_iter().map(|row| ensemble_mean(row) - k * ensemble_std(row)).collect(),
        TargetRule::SharedMin => q.rows().into_iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).collect(),
        TargetRule::IndependentDoubleQ => unreachable!("handled above"),
    };
    let col = &r + &(shared * gamma);
    Ok(Array2::from_shape_fn((rows, n), |(i, _)| col[i]))
}

fn bootstrap(r: ArrayView1<f64>, gamma: f64, q: &Array2<f64>) -> Array2<f64> {
    let mut y = q * gamma;
    for (mut row, ri) in y.rows_mut().into_iter().zip(r) {
        row += *ri;
    }
    y
}

// --------------------------------------------------------------------------
// Configuration
// --------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FqeConfig {
    pub gamma: f64,
    pub n_members: usize,
    pub outer_iters: usize,
    pub inner_steps: usize,
    pub lr: f64,
    pub rule: TargetRule,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub weight_scale: f64,
    pub bias_scale: f64,
    pub optimizer: OptimizerKind,
    pub grid_points: usize,
}

impl Default for FqeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            n_members: 64,
            outer_iters: 1000,
            inner_steps: 2000,
            lr: 1e-4,
            rule: TargetRule::Independent,
            seed: 0,
            hidden_dims: vec![512],
            activation: Activation::Tanh,
            weight_scale: 10.0,
            bias_scale: 0.05,
            optimizer: OptimizerKind::Adam,
            grid_points: 201,
        }
    }
}

impl FqeConfig {
    /// Reduced schedule for continuous integration: 8 members, 50 x 200 steps.
    pub fn ci() -> Self {
        Self { n_members: 8, outer_iters: 50, inner_steps: 200, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("fqe config: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if self.n_members == 0 || self.outer_iters == 0 {
            return bad("n_members and outer_iters must be >= 1".into());
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0".into());
        }
        if self.grid_points < 2 {
            return bad("grid_points must be >= 2".into());
        }
        self.rule.validate()
    }

    pub fn member_spec(&self, input_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            activation: self.activation,
            output_dim: 1,
            weight_scale: self.weight_scale,
            bias_scale: self.bias_scale,
        }
    }
}

// --------------------------------------------------------------------------
// Ensemble training
// --------------------------------------------------------------------------

/// A single-output member network that can report the values entering its
/// TD target: one column, or two for a min-pooled pair.
pub trait QMember: Model + Clone {
    fn target_values(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl QMember for Mlp {
    fn target_values(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(params, x)
    }
}

impl QMember for MinPooled<Mlp> {
    fn target_values(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_pair(params, x)
    }
}

struct MemberState {
    params: Vec<f64>,
    opt: Optimizer,
}

/// `N` independently parameterised copies of a member network, each with
/// its own optimizer state.
pub struct FqeEnsemble<M> {
    model: M,
    members: Vec<MemberState>,
    exec: Exec,
}

impl<M: QMember> FqeEnsemble<M> {
    /// Member `i` is initialised from stream `i` of the derived init seed.
    pub fn init(model: M, n: usize, seed: u64, opt: OptimizerKind, lr: f64) -> Self {
        let init_seed = rng::derive_seed(seed, "fqe-init");
        let params = (0..n).map(|i| model.init_params(&mut rng::stream(init_seed, i as u64))).collect();
        Self::from_params(model, params, opt, lr)
    }

    pub fn from_params(model: M, params: Vec<Vec<f64>>, opt: OptimizerKind, lr: f64) -> Self {
        let k = model.param_count();
        let members = params
            .into_iter()
            .map(|p| {
                assert_eq!(p.len(), k, "member parameter count");
                MemberState { params: p, opt: Optimizer::new(opt, k, lr) }
            })
            .collect();
        Self { model, members, exec: Exec::default() }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn params(&self, i: usize) -> &[f64] {
        &self.members[i].params
    }

    pub fn all_params(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.params.clone()).collect()
    }

    /// Member predictions, `B x N`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cols = self.exec.map(self.members.len(), |i| self.model.forward(&self.members[i].params, x));
        let mut out = Array2::zeros((x.nrows(), self.members.len()));
        for (i, c) in cols.into_iter().enumerate() {
            out.column_mut(i).assign(&c?.column(0));
        }
        Ok(out)
    }

    pub fn next_values(&self, xp: ArrayView2<f64>) -> Result<NextValues> {
        let n = self.members.len();
        let cols = self.exec.map(n, |i| self.model.target_values(&self.members[i].params, xp));
        let cols: Vec<Array2<f64>> = cols.into_iter().collect::<Result<_>>()?;
        let width = cols[0].ncols();
        let gather = |j: usize| {
            let mut m = Array2::zeros((xp.nrows(), n));
            for (i, c) in cols.iter().enumerate() {
                m.column_mut(i).assign(&c.column(j));
            }
            m
        };
        Ok(if width == 2 { NextValues::Paired(gather(0), gather(1)) } else { NextValues::Single(gather(0)) })
    }

    /// `steps` full-batch updates of every member towards its column of
    /// `targets`. Returns each member's loss before its last update.
    pub fn fit(&mut self, x: ArrayView2<f64>, targets: ArrayView2<f64>, steps: usize) -> Result<Vec<f64>> {
        dim_check(targets.dim() == (x.nrows(), self.members.len()), || {
            format!("targets {:?} for {} rows and {} members", targets.dim(), x.nrows(), self.members.len())
        })?;
        let model = &self.model;
        let mut results: Vec<Result<f64>> = (0..self.members.len()).map(|_| Ok(f64::NAN)).collect();
        let mut work: Vec<(&mut MemberState, &mut Result<f64>)> = self.members.iter_mut().zip(results.iter_mut()).collect();
        self.exec.for_each_mut(&mut work, |i, (member, out)| {
            let t = targets.slice(ndarray::s![.., i..i + 1]);
            let mut loss = f64::NAN;
            for step in 0..steps {
                let (l, grad) = match model.loss_and_param_grad(&member.params, x, |o| mse(o, t)) {
                    Ok(g) => g,
                    Err(e) => {
                        **out = Err(e);
                        return;
                    }
                };
                if !l.is_finite() {
                    **out = Err(Error::Diverged(format!("member {i} loss {l} at step {step}")));
                    return;
                }
                loss = l;
                member.opt.update(&mut member.params, &grad);
            }
            **out = Ok(loss);
        });
        results.into_iter().collect()
    }
}

/// Mean, population std and per-member Q-values over a state grid.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyCurve {
    pub states: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub std_q: Vec<f64>,
    pub per_member_q: Option<Array2<f64>>,
}

impl UncertaintyCurve {
    pub fn from_members(states: Vec<f64>, q: Array2<f64>) -> Self {
        let mean_q = q.rows().into_iter().map(ensemble_mean).collect();
        let std_q = q.rows().into_iter().map(ensemble_std).collect();
        Self { states, mean_q, std_q, per_member_q: Some(q) }
    }

    /// Columns `state, mean_q, std_q` and, if present, `member_0..`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec!["state".to_string(), "mean_q".into(), "std_q".into()];
        if let Some(q) = &self.per_member_q {
            header.extend((0..q.ncols()).map(|i| format!("member_{i}")));
        }
        w.write_record(&header)?;
        for k in 0..self.states.len() {
            let mut rec = vec![fmt_f64(self.states[k]), fmt_f64(self.mean_q[k]), fmt_f64(self.std_q[k])];
            if let Some(q) = &self.per_member_q {
                rec.extend(q.row(k).iter().map(|v| fmt_f64(*v)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Record of one FQE run.
pub struct FqeOutcome<M> {
    pub ensemble: FqeEnsemble<M>,
    pub curve: UncertaintyCurve,
    /// Mean member loss at the end of every outer iteration.
    pub loss_trace: Vec<f64>,
}

/// Runs the outer/inner loop on an existing ensemble and evaluates it on
/// `grid` (rows of `(s, a)`).
pub fn run_fqe_with<M: QMember>(
    mut ensemble: FqeEnsemble<M>,
    dataset: &OfflineDataset,
    cfg: &FqeConfig,
    grid: ArrayView2<f64>,
) -> Result<FqeOutcome<M>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let x = dataset.x();
    let xp = dataset.xp();
    let mut loss_trace = Vec::with_capacity(cfg.outer_iters);
    for _ in 0..cfg.outer_iters {
        let next = ensemble.next_values(xp)?;
        let targets = compute_targets(cfg.rule, &next, dataset.r().view(), cfg.gamma)?;
        let losses = ensemble.fit(x, targets.view(), cfg.inner_steps)?;
        loss_trace.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    let q = ensemble.predict(grid)?;
    let curve = UncertaintyCurve::from_members(grid.column(0).to_vec(), q);
    Ok(FqeOutcome { ensemble, curve, loss_trace })
}

/// Trained ensemble of either plain or min-pooled members.
pub enum TrainedEnsemble {
    Plain(FqeEnsemble<Mlp>),
    DoubleQ(FqeEnsemble<MinPooled<Mlp>>),
}

impl TrainedEnsemble {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            TrainedEnsemble::Plain(e) => e.predict(x),
            TrainedEnsemble::DoubleQ(e) => e.predict(x),
        }
    }
}

/// Builds a freshly initialised ensemble for `cfg.rule` and runs FQE.
pub fn run_fqe(
    dataset: &OfflineDataset,
    cfg: &FqeConfig,
    grid: ArrayView2<f64>,
) -> Result<(TrainedEnsemble, UncertaintyCurve, Vec<f64>)> {
    run_fqe_exec(dataset, cfg, grid, Exec::default())
}

pub fn run_fqe_exec(
    dataset: &OfflineDataset,
    cfg: &FqeConfig,
    grid: ArrayView2<f64>,
    exec: Exec,
) -> Result<(TrainedEnsemble, UncertaintyCurve, Vec<f64>)> {
    cfg.validate()?;
    let mlp = Mlp::new(cfg.member_spec(dataset.x().ncols()))?;
    if cfg.rule == TargetRule::IndependentDoubleQ {
        let ens = FqeEnsemble::init(MinPooled::new(mlp)?, cfg.n_members, cfg.seed, cfg.optimizer, cfg.lr).with_exec(exec);
        let out = run_fqe_with(ens, dataset, cfg, grid)?;
        Ok((TrainedEnsemble::DoubleQ(out.ensemble), out.curve, out.loss_trace))
    } else {
        let ens = FqeEnsemble::init(mlp, cfg.n_members, cfg.seed, cfg.optimizer, cfg.lr).with_exec(exec);
        let out = run_fqe_with(ens, dataset, cfg, grid)?;
        Ok((TrainedEnsemble::Plain(out.ensemble), out.curve, out.loss_trace))
    }
}

// --------------------------------------------------------------------------
// Region summaries
// --------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
    pub mean_std: f64,
    pub max_std: f64,
}

/// Mean and max of `std_q` over grid states in each closed interval.
pub fn summarize_curve(curve: &UncertaintyCurve, regions: &[(f64, f64)]) -> Result<Vec<RegionSummary>> {
    regions
        .iter()
        .map(|&(lo, hi)| {
            let vals: Vec<f64> = curve
                .states
                .iter()
                .zip(&curve.std_q)
                .filter(|(s, _)| **s >= lo - REGION_TOL && **s <= hi + REGION_TOL)
                .map(|(_, v)| *v)
                .collect();
            if vals.is_empty() {
                return Err(Error::EmptyRegion { lo, hi });
            }
            Ok(RegionSummary {
                lo,
                hi,
                n_points: vals.len(),
                mean_std: ensemble_mean(ndarray::aview1(&vals)),
                max_std: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

/// Writes `rule, lo, hi, n_points, mean_std, max_std` rows.
pub fn write_region_csv(path: &Path, rows: &[(String, Vec<RegionSummary>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["rule", "lo", "hi", "n_points", "mean_std", "max_std"])?;
    for (rule, summaries) in rows {
        for s in summaries {
            w.write_record([
                rule.clone(),
                fmt_f64(s.lo),
                fmt_f64(s.hi),
                s.n_points.to_string(),
                fmt_f64(s.mean_std),
                fmt_f64(s.max_std),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `curve_<rule>_seed<seed>_<hash>.csv`.
pub fn curve_file_name(rule: TargetRule, seed: u64, config_hash: &str) -> String {
    format!("curve_{rule}_seed{seed}_{config_hash}.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetMeta, OfflineDataset};
    use crate::kernel::build_kernel_system;
    use ndarray::array;

    fn single(q: Array2<f64>) -> NextValues {
        NextValues::Single(q)
    }

    #[test]
    fn zero_dispersion_all_rules_agree() {
        let q = array![[0.3, 0.3, 0.3], [-1.7, -1.7, -1.7]];
        let r = array![1.0, 0.0];
        let gamma = 0.9;
        let expect = Array2::from_shape_fn((2, 3), |(i, _)| r[i] + gamma * q[[i, 0]]);
        for rule in TargetRule::ALL_CHAIN {
            let next = if rule == TargetRule::IndependentDoubleQ {
                NextValues::Paired(q.clone(), q.clone())
            } else {
                single(q.clone())
            };
            assert_eq!(compute_targets(rule, &next, r.view(), gamma).unwrap(), expect, "{rule}");
        }
    }

    #[test]
    fn two_member_hand_examples() {
        let q = array![[0.0, 2.0]];
        let r = array![0.0];
        let min = compute_targets(TargetRule::SharedMin, &single(q.clone()), r.view(), 1.0).unwrap();
        assert_eq!(min, array![[0.0, 0.0]]);
        let ind = compute_targets(TargetRule::Independent, &single(q), r.view(), 1.0).unwrap();
        assert_eq!(ind, array![[0.0, 2.0]]);
        let lcb = compute_targets(TargetRule::SharedLcb { k: 2.0 }, &single(array![[1.0, 3.0]]), r.view(), 1.0).unwrap();
        assert_eq!(lcb, array![[0.0, 0.0]]);
        let mean = compute_targets(TargetRule::SharedMean, &single(array![[1.0, 3.0]]), r.view(), 1.0).unwrap();
        assert_eq!(mean, array![[2.0, 2.0]]);
    }

    #[test]
    fn double_q_takes_pairwise_min() {
        let a = array![[1.0, 5.0]];
        let b = array![[2.0, -1.0]];
        let y = compute_targets(TargetRule::IndependentDoubleQ, &NextValues::Paired(a, b), array![0.5].view(), 0.5).unwrap();
        assert_eq!(y, array![[1.0, 0.0]]);
    }

    #[test]
    fn shape_errors() {
        let q = array![[1.0, 2.0]];
        assert!(compute_targets(TargetRule::Independent, &single(q.clone()), array![1.0, 2.0].view(), 0.9).is_err());
        assert!(compute_targets(TargetRule::IndependentDoubleQ, &single(q.clone()), array![1.0].view(), 0.9).is_err());
        assert!(compute_targets(TargetRule::SharedMin, &NextValues::Paired(q.clone(), q), array![1.0].view(), 0.9).is_err());
    }

    #[test]
    fn rule_names_round_trip() {
        for rule in TargetRule::ALL_CHAIN {
            let parsed: TargetRule = rule.to_string().parse().unwrap();
            assert_eq!(parsed, rule);
        }
        assert_eq!("shared-lcb".parse::<TargetRule>().unwrap(), TargetRule::SharedLcb { k: 2.0 });
        assert!("shared-lcb--1".parse::<TargetRule>().is_err());
        assert!("bogus".parse::<TargetRule>().is_err());
    }

    #[test]
    fn summaries() {
        let states: Vec<f64> = (0..201).map(|k| -1.0 + 2.0 * k as f64 / 200.0).collect();
        let constant = UncertaintyCurve { states: states.clone(), mean_q: vec![0.0; 201], std_q: vec![0.7; 201], per_member_q: None };
        let rows = summarize_curve(&constant, &CHAIN_REGIONS).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.mean_std == 0.7 && r.max_std == 0.7));
        let abs = UncertaintyCurve { std_q: states.iter().map(|s| s.abs()).collect(), ..constant.clone() };
        let rows = summarize_curve(&abs, &CHAIN_REGIONS).unwrap();
        assert_eq!(rows[2].n_points, 68);
        assert!((rows[2].mean_std - 0.665).abs() < 1e-12);
        assert!(matches!(summarize_curve(&constant, &[(2.0, 3.0)]), Err(Error::EmptyRegion { .. })));
    }

    #[test]
    fn curve_std_is_population_std_of_members() {
        let q = array![[1.0, 3.0], [2.0, 2.0]];
        let c = UncertaintyCurve::from_members(vec![0.0, 1.0], q);
        assert_eq!(c.mean_q, vec![2.0, 2.0]);
        assert_eq!(c.std_q, vec![1.0, 0.0]);
    }

    fn one_transition(s: f64, a: f64, r: f64, s2: f64, a2: f64) -> OfflineDataset {
        let meta = DatasetMeta {
            generator: "test".into(),
            seed: 0,
            config: serde_json::Value::Null,
            config_hash: String::new(),
            state_dim: 1,
            action_dim: 1,
        };
        OfflineDataset::new(array![[s, a]], array![r], array![[s2, a2]], meta).unwrap()
    }

    #[test]
    fn linear_members_follow_kernel_recursion() {
        // a linear member with bias has features [s, a, 1]
        let data = one_transition(0.4, -0.2, 1.0, 0.2, 0.1);
        let gamma = 0.9;
        let cfg = FqeConfig {
            gamma,
            n_members: 3,
            outer_iters: 25,
            inner_steps: 300,
            lr: 0.1,
            hidden_dims: vec![],
            weight_scale: 1.0,
            bias_scale: 1.0,
            optimizer: OptimizerKind::Sgd,
            ..FqeConfig::default()
        };
        let mlp = Mlp::new(cfg.member_spec(2)).unwrap();
        let ens = FqeEnsemble::init(mlp.clone(), cfg.n_members, 7, cfg.optimizer, cfg.lr);
        let q0 = ens.predict(data.x()).unwrap();
        let q0p = ens.predict(data.xp()).unwrap();
        let out = run_fqe_with(ens, &data, &cfg, data.xp()).unwrap();

        let featured = OfflineDataset::new(
            array![[0.4, -0.2, 1.0]],
            array![1.0],
            array![[0.2, 0.1, 1.0]],
            DatasetMeta { state_dim: 2, ..data.meta().clone() },
        )
        .unwrap();
        let c = build_kernel_system(&featured, 0.0).unwrap().c[[0, 0]];
        for i in 0..cfg.n_members {
            let mut qp = q0p[[0, i]];
            for _ in 0..cfg.outer_iters {
                qp = q0p[[0, i]] + c * (1.0 + gamma * qp - q0[[0, i]]);
            }
            let got = out.curve.per_member_q.as_ref().unwrap()[[0, i]];
            assert!((got - qp).abs() < 1e-3, "member {i}: {got} vs {qp}");
        }
    }

    fn small_cfg(rule: TargetRule, n: usize) -> FqeConfig {
        FqeConfig {
            n_members: n,
            outer_iters: 3,
            inner_steps: 5,
            lr: 1e-3,
            hidden_dims: vec![8],
            weight_scale: 1.0,
            rule,
            ..FqeConfig::default()
        }
    }

    fn chain_data() -> OfflineDataset {
        let cfg = crate::dataset::ChainConfig { n_episodes: 4, episode_len: 10, ..Default::default() };
        crate::dataset::collect_chain_dataset(&cfg).unwrap()
    }

    #[test]
    fn single_member_rules_coincide() {
        let data = chain_data();
        let grid = crate::dataset::uncertainty_grid(&Default::default(), 11).unwrap();
        let (_, a, ta) = run_fqe(&data, &small_cfg(TargetRule::Independent, 1), grid.view()).unwrap();
        let (_, b, tb) = run_fqe(&data, &small_cfg(TargetRule::SharedMean, 1), grid.view()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.std_q.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn identical_members_stay_identical() {
        let data = chain_data();
        let grid = crate::dataset::uncertainty_grid(&Default::default(), 11).unwrap();
        for rule in [TargetRule::Independent, TargetRule::SharedLcb { k: 2.0 }, TargetRule::SharedMin] {
            let cfg = small_cfg(rule, 4);
            let mlp = Mlp::new(cfg.member_spec(2)).unwrap();
            let p = mlp.init_params(&mut rng::stream(1, 0));
            let ens = FqeEnsemble::from_params(mlp, vec![p; 4], cfg.optimizer, cfg.lr);
            let out = run_fqe_with(ens, &data, &cfg, grid.view()).unwrap();
            let q = out.curve.per_member_q.unwrap();
            for row in q.rows() {
                assert!(row.iter().all(|v| *v == row[0]));
            }
        }
    }

    #[test]
    fn deterministic_and_exec_independent() {
        let data = chain_data();
        let grid = crate::dataset::uncertainty_grid(&Default::default(), 11).unwrap();
        let cfg = small_cfg(TargetRule::IndependentDoubleQ, 3);
        let (_, a, _) = run_fqe_exec(&data, &cfg, grid.view(), Exec::Sequential).unwrap();
        let (_, b, _) = run_fqe_exec(&data, &cfg, grid.view(), Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let data = chain_data();
        let grid = crate::dataset::uncertainty_grid(&Default::default(), 11).unwrap();
        let cfg = FqeConfig { lr: 1e200, optimizer: OptimizerKind::Sgd, ..small_cfg(TargetRule::Independent, 2) };
        assert!(matches!(run_fqe(&data, &cfg, grid.view()), Err(Error::Diverged(_))));
    }

    #[test]
    fn config_validation() {
        assert!(FqeConfig::default().validate().is_ok());
        assert!(FqeConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(FqeConfig { rule: TargetRule::SharedLcb { k: 0.0 }, ..Default::default() }.validate().is_err());
    }
}
