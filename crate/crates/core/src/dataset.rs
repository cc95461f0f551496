//! Toy environments and offline dataset generation.
//!
//! Two generators are provided:
//!
//! - a random Gaussian MDP whose states, actions, rewards and transitions are
//!   all standard normal draws, with an evaluation policy that replays the
//!   behaviour action at the next state;
//! - the Continuous Chain MDP on `[-1, 1]` with `s' = clamp(s + a)` and a unit
//!   reward whenever `s'` lands in the goal interval.
//!
//! Both produce an [`OfflineDataset`]: row-aligned matrices `X` (rows `(s, a)`),
//! `R` and `X'` (rows `(s', pi(s'))`). Each episode draws from its own random
//! stream, so generation is a pure function of the config.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::io;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// The evaluation policy's action at `s_next`.
    pub a_next: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl DatasetMeta {
    fn for_config<T: Serialize>(generator: &str, seed: u64, cfg: &T, ds: usize, da: usize) -> Self {
        Self {
            generator: generator.to_owned(),
            seed,
            config: serde_json::to_value(cfg).expect("config serializes"),
            config_hash: io::config_hash(cfg),
            state_dim: ds,
            action_dim: da,
        }
    }
}

/// Row-aligned offline data matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    x: Array2<f64>,
    r: Array1<f64>,
    xp: Array2<f64>,
    meta: DatasetMeta,
}

impl OfflineDataset {
    pub fn new(x: Array2<f64>, r: Array1<f64>, xp: Array2<f64>, meta: DatasetMeta) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        dim_check(x.nrows() == r.len() && x.nrows() == xp.nrows(), || {
            format!("row counts X={} R={} X'={}", x.nrows(), r.len(), xp.nrows())
        })?;
        dim_check(x.ncols() == xp.ncols(), || {
            format!("column counts X={} X'={}", x.ncols(), xp.ncols())
        })?;
        dim_check(x.ncols() == meta.state_dim + meta.action_dim, || {
            format!(
                "X has {} columns but meta declares {} state + {} action dims",
                x.ncols(),
                meta.state_dim,
                meta.action_dim
            )
        })?;
        Ok(Self { x, r, xp, meta })
    }

    pub fn from_transitions(ts: &[Transition], meta: DatasetMeta) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (ds, da) = (meta.state_dim, meta.action_dim);
        let width = ds + da;
        let mut x = Array2::zeros((ts.len(), width));
        let mut xp = Array2::zeros((ts.len(), width));
        let mut r = Array1::zeros(ts.len());
        for (k, t) in ts.iter().enumerate() {
            dim_check(
                t.s.len() == ds && t.s_next.len() == ds && t.a.len() == da && t.a_next.len() == da,
                || format!("transition {k} has inconsistent dimensions"),
            )?;
            for (j, v) in t.s.iter().chain(&t.a).enumerate() {
                x[[k, j]] = *v;
            }
            for (j, v) in t.s_next.iter().chain(&t.a_next).enumerate() {
                xp[[k, j]] = *v;
            }
            r[k] = t.r;
        }
        Self::new(x, r, xp, meta)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn r(&self) -> &Array1<f64> {
        &self.r
    }

    pub fn xp(&self) -> ArrayView2<'_, f64> {
        self.xp.view()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn state_dim(&self) -> usize {
        self.meta.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.meta.action_dim
    }

    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.x.slice(s![.., ..self.meta.state_dim])
    }

    pub fn actions(&self) -> ArrayView2<'_, f64> {
        self.x.slice(s![.., self.meta.state_dim..])
    }

    pub fn next_states(&self) -> ArrayView2<'_, f64> {
        self.xp.slice(s![.., ..self.meta.state_dim])
    }

    pub fn transition(&self, k: usize) -> Transition {
        let ds = self.meta.state_dim;
        Transition {
            s: self.x.row(k).slice(s![..ds]).to_vec(),
            a: self.x.row(k).slice(s![ds..]).to_vec(),
            r: self.r[k],
            s_next: self.xp.row(k).slice(s![..ds]).to_vec(),
            a_next: self.xp.row(k).slice(s![ds..]).to_vec(),
        }
    }

    fn header(&self) -> Vec<String> {
        (0..self.meta.state_dim)
            .map(|i| format!("s{i}"))
            .chain((0..self.meta.action_dim).map(|i| format!("a{i}")))
            .collect()
    }

    /// Writes `x.csv`, `r.csv`, `xp.csv` and `meta.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let header = self.header();
        let paths = [dir.join("x.csv"), dir.join("r.csv"), dir.join("xp.csv"), dir.join("meta.json")];
        io::write_matrix(&paths[0], &header, self.x.view())?;
        let r = self.r.view().insert_axis(ndarray::Axis(1));
        io::write_matrix(&paths[1], &["r".to_owned()], r)?;
        io::write_matrix(&paths[2], &header, self.xp.view())?;
        let mut json = serde_json::to_string_pretty(&self.meta)?;
        json.push('\n');
        std::fs::write(&paths[3], json)?;
        Ok(paths.to_vec())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        let (_, x) = io::read_matrix(&dir.join("x.csv"))?;
        let (_, r) = io::read_matrix(&dir.join("r.csv"))?;
        let (_, xp) = io::read_matrix(&dir.join("xp.csv"))?;
        dim_check(r.ncols() == 1, || "r.csv must have exactly one column".into())?;
        Self::new(x, r.column(0).to_owned(), xp, meta)
    }
}

// --------------------------------------------------------------------------
// Gaussian MDP
// --------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianMdpConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub n_episodes: usize,
    pub episode_len: usize,
    pub seed: u64,
}

impl Default for GaussianMdpConfig {
    fn default() -> Self {
        Self { state_dim: 30, action_dim: 30, n_episodes: 5, episode_len: 5, seed: 0 }
    }
}

impl GaussianMdpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.n_episodes == 0 || self.episode_len == 0 {
            return Err(Error::InvalidConfig(
                "gaussian MDP dimensions, episode count and length must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Samples `n_episodes` episodes of length `episode_len`. Per step the
/// action, the next state and the reward are drawn in that order; the
/// evaluation policy at `s'` replays the behaviour action.
pub fn generate_gaussian_dataset(cfg: &GaussianMdpConfig) -> Result<OfflineDataset> {
    cfg.validate()?;
    let mut ts = Vec::with_capacity(cfg.n_episodes * cfg.episode_len);
    for ep in 0..cfg.n_episodes {
        let mut rng = rng::stream(cfg.seed, ep as u64);
        let mut s = normal_vec(&mut rng, cfg.state_dim);
        for _ in 0..cfg.episode_len {
            let a = normal_vec(&mut rng, cfg.action_dim);
            let s_next = normal_vec(&mut rng, cfg.state_dim);
            let r: f64 = StandardNormal.sample(&mut rng);
            ts.push(Transition { s: s.clone(), a: a.clone(), r, s_next: s_next.clone(), a_next: a });
            s = s_next;
        }
    }
    let meta = DatasetMeta::for_config("gaussian-mdp", cfg.seed, cfg, cfg.state_dim, cfg.action_dim);
    OfflineDataset::from_transitions(&ts, meta)
}

// --------------------------------------------------------------------------
// Continuous Chain MDP
// --------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub reward_lo: f64,
    pub reward_hi: f64,
    pub state_lo: f64,
    pub state_hi: f64,
    pub action_range: f64,
    pub n_episodes: usize,
    pub episode_len: usize,
    /// Transitions with `s` or `s'` in `[gap_lo, gap_hi]` are removed. A
    /// degenerate interval (`gap_lo == gap_hi`) disables the filter.
    pub gap_lo: f64,
    pub gap_hi: f64,
    pub eval_action: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            reward_lo: 0.75,
            reward_hi: 1.0,
            state_lo: -1.0,
            state_hi: 1.0,
            action_range: 0.3,
            n_episodes: 40,
            episode_len: 30,
            gap_lo: -0.33,
            gap_hi: 0.33,
            eval_action: 0.1,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("chain config: {m}")));
        if !(self.state_lo < self.state_hi) {
            return bad("state_lo must be < state_hi");
        }
        if !(self.state_lo <= self.gap_lo && self.gap_lo <= self.gap_hi && self.gap_hi <= self.state_hi) {
            return bad("gap must satisfy state_lo <= gap_lo <= gap_hi <= state_hi");
        }
        if !(self.state_lo <= self.reward_lo && self.reward_lo <= self.reward_hi && self.reward_hi <= self.state_hi) {
            return bad("reward interval must lie inside the state interval");
        }
        if !(self.action_range > 0.0) {
            return bad("action_range must be > 0");
        }
        if self.n_episodes == 0 || self.episode_len == 0 {
            return bad("n_episodes and episode_len must be >= 1");
        }
        Ok(())
    }

    pub fn has_gap(&self) -> bool {
        self.gap_lo < self.gap_hi
    }

    pub fn in_gap(&self, s: f64) -> bool {
        self.has_gap() && s >= self.gap_lo && s <= self.gap_hi
    }

    pub fn in_reward(&self, s: f64) -> bool {
        s >= self.reward_lo && s <= self.reward_hi
    }
}

/// One deterministic chain transition: `(s', r)`.
pub fn chain_step(s: f64, a: f64, cfg: &ChainConfig) -> (f64, f64) {
    let s_next = (s + a).clamp(cfg.state_lo, cfg.state_hi);
    let r = if cfg.in_reward(s_next) { 1.0 } else { 0.0 };
    (s_next, r)
}

/// Collects uniform-random-action episodes from uniform starts, drops every
/// transition touching the data gap, and labels `X'` with the constant
/// evaluation action.
pub fn collect_chain_dataset(cfg: &ChainConfig) -> Result<OfflineDataset> {
    cfg.validate()?;
    let starts = Uniform::new_inclusive(cfg.state_lo, cfg.state_hi).expect("valid state bounds");
    let actions = Uniform::new_inclusive(-cfg.action_range, cfg.action_range).expect("valid action range");
    let mut ts = Vec::new();
    for ep in 0..cfg.n_episodes {
        let mut rng = rng::stream(cfg.seed, ep as u64);
        let mut s = rng.sample(starts);
        for _ in 0..cfg.episode_len {
            let a = rng.sample(actions);
            let (s_next, r) = chain_step(s, a, cfg);
            if !cfg.in_gap(s) && !cfg.in_gap(s_next) {
                ts.push(Transition { s: vec![s], a: vec![a], r, s_next: vec![s_next], a_next: vec![cfg.eval_action] });
            }
            s = s_next;
        }
    }
    if ts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let meta = DatasetMeta::for_config("continuous-chain", cfg.seed, cfg, 1, 1);
    OfflineDataset::from_transitions(&ts, meta)
}

/// Evenly spaced `(s, eval_action)` rows over the state interval, endpoints
/// included.
pub fn uncertainty_grid(cfg: &ChainConfig, n_points: usize) -> Result<Array2<f64>> {
    if n_points < 2 {
        return Err(Error::InvalidConfig("uncertainty grid needs at least 2 points".into()));
    }
    let span = cfg.state_hi - cfg.state_lo;
    let last = (n_points - 1) as f64;
    let mut g = Array2::zeros((n_points, 2));
    for k in 0..n_points {
        g[[k, 0]] = if k == n_points - 1 { cfg.state_hi } else { cfg.state_lo + span * k as f64 / last };
        g[[k, 1]] = cfg.eval_action;
    }
    Ok(g)
}
