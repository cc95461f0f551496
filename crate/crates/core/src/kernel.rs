//! Closed-form LCB estimates for ensembles in the linear / kernel regime.
//!
//! Every ensemble member is a linear model `Q(x) = x . theta` with
//! `theta ~ N(0, I)`, so the tangent kernel is `Theta(A, B) = A B^T` and the
//! propagation matrix is `C = Theta(X', X) Theta(X, X)^{-1}`. Trained to
//! convergence on fixed targets, a member's predictions at `X'` become
//! `Q0(X') + C (y - Q0(X))`.
//!
//! Two estimators are compared after `t + 1` rounds of policy evaluation,
//! with `B = sum_{k<=t} (gamma C)^k` the backup term:
//!
//! - independent targets: mean `B C R`, penalty `-sqrt(E[(B (Q0(X') - C Q0(X)))^2])`
//! - shared LCB targets: mean `B C R`, penalty `-B sqrt(E[(Q0(X') - C Q0(X))^2])`
//!
//! The first penalty is a square root and can never be positive. The second
//! pushes a non-negative vector through `B`, which may have negative
//! entries, so the "pessimism" can turn into a bonus.
//!
//! [`lcb_closed_form`] drops the `O((gamma ||C||)^{t+1})` remainder;
//! [`iterate_linearized_fqe`] runs the recursions directly and keeps it.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_gaussian_dataset, GaussianMdpConfig, OfflineDataset};
use crate::error::{dim_check, Error, Result};
use crate::linalg::{frobenius, row_norms, Cholesky};
use crate::par::Exec;
use crate::rng;

/// Pessimism entries above this are counted as optimistic.
pub const OPTIMISM_THRESHOLD: f64 = 1e-9;

pub const SPECTRAL_TOL: f64 = 1e-13;
pub const SPECTRAL_MAX_ITER: usize = 20_000;

const CHOLESKY_REL_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMethod {
    Independent,
    Shared,
}

impl std::fmt::Display for TargetMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMethod::Independent => "independent",
            TargetMethod::Shared => "shared",
        })
    }
}

/// `A B^T`.
pub fn linear_gram(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    dim_check(a.ncols() == b.ncols(), || {
        format!("gram operands have {} and {} columns", a.ncols(), b.ncols())
    })?;
    Ok(a.dot(&b.t()))
}

#[derive(Clone, Debug)]
pub struct KernelSystem {
    pub gram_xx: Array2<f64>,
    pub gram_px: Array2<f64>,
    pub ridge: f64,
    pub c: Array2<f64>,
}

impl KernelSystem {
    /// `|| C (Theta_xx + ridge I) - Theta_px ||_F`.
    pub fn residual(&self) -> f64 {
        let n = self.gram_xx.nrows();
        let reg = &self.gram_xx + &(Array2::<f64>::eye(n) * self.ridge);
        frobenius((self.c.dot(&reg) - &self.gram_px).view())
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        spectral_norm(self.c.view(), SPECTRAL_TOL, SPECTRAL_MAX_ITER)
    }
}

/// Builds the linear-kernel Gram matrices and solves for `C` with a
/// Cholesky factorisation of `Theta(X, X) + ridge I`.
pub fn build_kernel_system(dataset: &OfflineDataset, ridge: f64) -> Result<KernelSystem> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
    }
    let gram_xx = linear_gram(dataset.x(), dataset.x())?;
    let gram_px = linear_gram(dataset.xp(), dataset.x())?;
    let n = gram_xx.nrows();
    let reg = &gram_xx + &(Array2::<f64>::eye(n) * ridge);
    // C (G + rI) = P  <=>  (G + rI) C^T = P^T, G symmetric
    let chol = Cholesky::factor(reg.view(), CHOLESKY_REL_TOL)?;
    let c = chol.solve(gram_px.t()).reversed_axes();
    Ok(KernelSystem { gram_xx, gram_px, ridge, c })
}

/// `sum_{k=0}^{t} (gamma C)^k`, accumulated Horner-style.
pub fn geometric_backup(c: ArrayView2<f64>, gamma: f64, t: usize) -> Array2<f64> {
    let n = c.nrows();
    let eye = Array2::<f64>::eye(n);
    backup_apply(c, gamma, t, eye.view())
}

/// `sum_{k=0}^{t} (gamma C)^k V` without forming the backup matrix.
pub fn backup_apply(c: ArrayView2<f64>, gamma: f64, t: usize, v: ArrayView2<f64>) -> Array2<f64> {
    let gc = &c * gamma;
    let mut acc = v.to_owned();
    for _ in 0..t {
        acc = gc.dot(&acc) + v;
    }
    acc
}

fn backup_apply_vec(c: ArrayView2<f64>, gamma: f64, t: usize, v: ArrayView1<f64>) -> Array1<f64> {
    let gc = &c * gamma;
    let mut acc = v.to_owned();
    for _ in 0..t {
        acc = gc.dot(&acc) + v;
    }
    acc
}

/// Largest singular value by power iteration on `C^T C`.
///
/// Stops when the Rayleigh quotient changes by less than `tol` (relative).
pub fn spectral_norm(c: ArrayView2<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    dim_check(c.is_square(), || format!("spectral norm needs a square matrix, got {:?}", c.dim()))?;
    let n = c.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let m = c.t().dot(&c);
    let mut rng = rng::stream(0x5eed, 0);
    let mut v: Array1<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let nv = crate::linalg::norm(v.view());
    v /= nv;
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let w = m.dot(&v);
        let lambda = v.dot(&w);
        let nw = crate::linalg::norm(w.view());
        if nw == 0.0 {
            return Ok(0.0);
        }
        if (lambda - prev).abs() <= tol * lambda.abs() {
            return Ok(lambda.max(0.0).sqrt());
        }
        prev = lambda;
        v = w / nw;
    }
    Err(Error::NoConvergence(max_iter))
}

/// `sqrt(E[(Q0(X') - C Q0(X))^2])` for linear members with `theta ~ N(0, I)`.
///
/// `Q0(X') - C Q0(X) = (X' - C X) theta`, and `E[(v . theta)^2] = |v|^2`, so
/// this is the row norms of `X' - C X`.
pub fn init_sqdev(dataset: &OfflineDataset, c: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(row_norms(init_deviation(dataset, c)?.view()))
}

fn init_deviation(dataset: &OfflineDataset, c: ArrayView2<f64>) -> Result<Array2<f64>> {
    dim_check(c.nrows() == dataset.len() && c.ncols() == dataset.len(), || {
        format!("C is {:?} but dataset has {} rows", c.dim(), dataset.len())
    })?;
    Ok(&dataset.xp() - &c.dot(&dataset.x()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LcbReport {
    pub method: TargetMethod,
    pub horizon_t: usize,
    pub mean_term: Array1<f64>,
    pub pessimism_term: Array1<f64>,
    pub q_lcb: Array1<f64>,
    pub optimistic_rows: Vec<usize>,
    pub spectral_gamma_c: f64,
}

impl LcbReport {
    pub fn max_pessimism(&self) -> f64 {
        self.pessimism_term.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use crate::io::{csv_writer, fmt_f64};
        let mut w = csv_writer(path)?;
        w.write_record(["row_index", "mean_term", "pessimism_term", "q_lcb", "optimistic"])?;
        for k in 0..self.q_lcb.len() {
            w.write_record([
                k.to_string(),
                fmt_f64(self.mean_term[k]),
                fmt_f64(self.pessimism_term[k]),
                fmt_f64(self.q_lcb[k]),
                (self.pessimism_term[k] > OPTIMISM_THRESHOLD).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_horizon(gamma: f64, c_norm: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let gc = gamma * c_norm;
    if !(gc < 1.0) {
        return Err(Error::DivergentHorizon(gc));
    }
    Ok(gc)
}

/// Closed-form LCB at `X'` after `t + 1` evaluation rounds, remainder dropped.
pub fn lcb_closed_form(
    sys: &KernelSystem,
    dataset: &OfflineDataset,
    gamma: f64,
    t: usize,
    method: TargetMethod,
) -> Result<LcbReport> {
    let c_norm = sys.spectral_norm()?;
    lcb_closed_form_with_norm(sys, dataset, gamma, t, method, c_norm)
}

pub(crate) fn lcb_closed_form_with_norm(
    sys: &KernelSystem,
    dataset: &OfflineDataset,
    gamma: f64,
    t: usize,
    method: TargetMethod,
    c_norm: f64,
) -> Result<LcbReport> {
    let gc = check_horizon(gamma, c_norm)?;
    let c = sys.c.view();
    let cr = c.dot(dataset.r());
    let mean_term = backup_apply_vec(c, gamma, t, cr.view());
    let deviation = init_deviation(dataset, c)?;
    let pessimism_term = match method {
        TargetMethod::Independent => -row_norms(backup_apply(c, gamma, t, deviation.view()).view()),
        TargetMethod::Shared => {
            let a = row_norms(deviation.view());
            -backup_apply_vec(c, gamma, t, a.view())
        }
    };
    let q_lcb = &mean_term + &pessimism_term;
    let optimistic_rows = pessimism_term
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > OPTIMISM_THRESHOLD)
        .map(|(k, _)| k)
        .collect();
    Ok(LcbReport { method, horizon_t: t, mean_term, pessimism_term, q_lcb, optimistic_rows, spectral_gamma_c: gc })
}

/// Exact mean, standard deviation and LCB of the ensemble at `X'`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateOutcome {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub lcb: Array1<f64>,
}

/// Runs `t + 1` rounds of linearized policy evaluation directly.
///
/// Independent targets: each member's prediction at `X'` is affine in its
/// initial weights, `m_k + M_k theta`, with
/// `Q^{k+1}(X') = Q0(X') + C (R + gamma Q^k(X') - Q0(X))`, so the mean and
/// the exact variance (`|row of M_k|^2`) are carried along.
///
/// Shared LCB targets: the target `y` is deterministic; after the first
/// round every prediction has mean `C y` and the constant standard
/// deviation `A = init_sqdev`, giving `y_k = R + gamma (C y_{k-1} - A)` with
/// `y_0 = R + gamma LCB(Q0(X'))`.
pub fn iterate_linearized_fqe(
    sys: &KernelSystem,
    dataset: &OfflineDataset,
    gamma: f64,
    t: usize,
    method: TargetMethod,
) -> Result<IterateOutcome> {
    check_horizon(gamma, sys.spectral_norm()?)?;
    let c = sys.c.view();
    let x = dataset.x();
    let xp = dataset.xp();
    let r = dataset.r();
    match method {
        TargetMethod::Independent => {
            let mut mean = Array1::<f64>::zeros(dataset.len());
            let mut coef = xp.to_owned();
            for _ in 0..=t {
                mean = c.dot(&(r + &(&mean * gamma)));
                coef = &xp + &c.dot(&(&coef * gamma - x));
            }
            let std = row_norms(coef.view());
            let lcb = &mean - &std;
            Ok(IterateOutcome { mean, std, lcb })
        }
        TargetMethod::Shared => {
            let a = init_sqdev(dataset, c)?;
            let init_std = row_norms(xp);
            let mut y = r - &(&init_std * gamma);
            for _ in 0..t {
                y = r + &((c.dot(&y) - &a) * gamma);
            }
            let mean = c.dot(&y);
            let lcb = &mean - &a;
            Ok(IterateOutcome { mean, std: a, lcb })
        }
    }
}

/// Bound on `|closed form - iterative|` per entry: `(gamma ||C||)^{t+1} ||X'||_F`.
///
/// Both remainders are `(gamma C)^{t+1}` applied to a vector whose norm is at
/// most `||X'||_F` (the row norms of `X'`, i.e. the initial ensemble std).
pub fn remainder_bound(dataset: &OfflineDataset, gamma: f64, c_norm: f64, t: usize) -> f64 {
    (gamma * c_norm).powi(t as i32 + 1) * frobenius(dataset.xp())
}

// --------------------------------------------------------------------------
// Seed sweep
// --------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRecord {
    pub seed: u64,
    pub rows: usize,
    /// `None` when the kernel system could not be built or the norm did
    /// not converge.
    pub spectral_gamma_c: Option<f64>,
    pub retained: bool,
    pub max_pessimism_entry: Option<f64>,
    pub optimistic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub n_seeds: usize,
    pub n_retained: usize,
    pub n_optimistic: usize,
    pub per_seed: Vec<SeedRecord>,
}

impl SweepOutcome {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use crate::io::{csv_writer, fmt_opt};
        let mut w = csv_writer(path)?;
        w.write_record(["seed", "rows", "gamma_C_norm", "retained", "max_pessimism_entry", "optimistic"])?;
        for rec in &self.per_seed {
            w.write_record([
                rec.seed.to_string(),
                rec.rows.to_string(),
                fmt_opt(rec.spectral_gamma_c),
                rec.retained.to_string(),
                fmt_opt(rec.max_pessimism_entry),
                rec.optimistic.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_line(&self) -> String {
        format!(
            "n_seeds={} n_retained={} n_optimistic={}",
            self.n_seeds, self.n_retained, self.n_optimistic
        )
    }
}

fn sweep_one(cfg: &GaussianMdpConfig, seed: u64, gamma: f64, t: usize, ridge: f64) -> SeedRecord {
    let cfg = GaussianMdpConfig { seed, ..cfg.clone() };
    let mut rec = SeedRecord {
        seed,
        rows: cfg.n_episodes * cfg.episode_len,
        spectral_gamma_c: None,
        retained: false,
        max_pessimism_entry: None,
        optimistic: false,
    };
    let Ok(dataset) = generate_gaussian_dataset(&cfg) else { return rec };
    let Ok(sys) = build_kernel_system(&dataset, ridge) else { return rec };
    let Ok(c_norm) = sys.spectral_norm() else { return rec };
    rec.spectral_gamma_c = Some(gamma * c_norm);
    if let Ok(report) = lcb_closed_form_with_norm(&sys, &dataset, gamma, t, TargetMethod::Shared, c_norm) {
        rec.retained = true;
        rec.max_pessimism_entry = Some(report.max_pessimism());
        rec.optimistic = !report.optimistic_rows.is_empty();
    }
    rec
}

/// Per seed: build the dataset and kernel system, keep runs with
/// `gamma ||C|| < 1`, and flag runs whose shared-target pessimism term has a
/// positive entry.
pub fn run_validation_sweep_seeds(
    cfg: &GaussianMdpConfig,
    gamma: f64,
    t: usize,
    seeds: &[u64],
    ridge: f64,
    exec: Exec,
) -> SweepOutcome {
    let per_seed = exec.map(seeds.len(), |i| sweep_one(cfg, seeds[i], gamma, t, ridge));
    SweepOutcome {
        n_seeds: per_seed.len(),
        n_retained: per_seed.iter().filter(|r| r.retained).count(),
        n_optimistic: per_seed.iter().filter(|r| r.optimistic).count(),
        per_seed,
    }
}

/// Sweep over seeds `cfg.seed, cfg.seed + 1, ..`.
pub fn run_validation_sweep(
    cfg: &GaussianMdpConfig,
    gamma: f64,
    t: usize,
    n_seeds: usize,
    ridge: f64,
) -> SweepOutcome {
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    run_validation_sweep_seeds(cfg, gamma, t, &seeds, ridge, Exec::default())
}

/// Random small Gaussian-MDP instance for oracle checks: episode count and
/// length chosen so the dataset has between 2 and `max_rows` rows, with
/// feature width at least the row count so the Gram matrix is full rank.
pub fn random_instance(seed: u64, max_rows: usize) -> Result<OfflineDataset> {
    if max_rows < 2 {
        return Err(Error::InvalidConfig("random instances need max_rows >= 2".into()));
    }
    let mut rng = rng::stream(seed, u64::MAX);
    let n_episodes = rng.random_range(1..=max_rows.min(5));
    let episode_len = rng.random_range(1..=(max_rows / n_episodes)).max(if n_episodes == 1 { 2 } else { 1 });
    let rows = n_episodes * episode_len;
    let state_dim = rng.random_range(1..=rows + 4);
    let action_dim = (rows + 2).saturating_sub(state_dim).max(1) + rng.random_range(0..4);
    generate_gaussian_dataset(&GaussianMdpConfig { state_dim, action_dim, n_episodes, episode_len, seed })
}
