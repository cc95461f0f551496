//! Subcommand implementations. Each writes its artifacts under `out` and
//! returns the list of files plus a pass/fail status.

use std::path::{Path, PathBuf};

use msglab::dataset::{collect_chain_dataset, uncertainty_grid, OfflineDataset};
use msglab::fqe::{run_fqe_exec, summarize_curve, write_region_csv, curve_file_name, TargetRule, UncertaintyCurve, CHAIN_REGIONS};
use msglab::io::{csv_writer, fmt_f64, fmt_opt};
use msglab::kernel::{
    build_kernel_system, iterate_linearized_fqe, lcb_closed_form, random_instance, remainder_bound,
    run_validation_sweep_seeds, TargetMethod,
};
use msglab::msg::evaluate_policy;
use msglab::msg::GaussianPolicy;
use msglab::msg::{MsgAgent, TrainLog};
use msglab::nnets::gradcheck::{check_gradient, grad_check, probe_coords, FlippedGradient};
use msglab::nnets::init::truncated_standard;
use msglab::nnets::{Activation, EnsembleArch, EnsembleKind, Mlp, MlpSpec, Model};
use msglab::par::Exec;
use msglab::rng;
use msglab::Error;
use ndarray::Array2;
use rand::Rng as _;

use crate::config::{GradCheckConfig, MsgTrainConfig, OracleCheckConfig, ToyChainConfig, ValidateTheoremConfig};
use crate::{svg, CliError};

/// Result of a subcommand: emitted files, human-readable summary lines and
/// the first failure, if any.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
    pub failure: Option<CliError>,
}

impl Report {
    fn fail(&mut self, e: CliError) {
        if self.failure.is_none() {
            self.failure = Some(e);
        }
    }
}

pub fn validate_theorem(c: &ValidateTheoremConfig, out: &Path, exec: Exec) -> Result<Report, CliError> {
    let seeds: Vec<u64> = match &c.seeds {
        Some(s) => s.clone(),
        None => (0..c.n_seeds as u64).map(|k| c.mdp.seed.wrapping_add(k)).collect(),
    };
    let sweep = run_validation_sweep_seeds(&c.mdp, c.gamma, c.horizon_t, &seeds, c.ridge, exec);
    let mut rep = Report::default();
    let per_seed = out.join("sweep.csv");
    sweep.write_csv(&per_seed)?;
    let summary = out.join("summary.csv");
    let mut w = csv_writer(&summary)?;
    w.write_record(["n_seeds", "n_retained", "n_optimistic", "optimistic_fraction"])?;
    w.write_record([
        sweep.n_seeds.to_string(),
        sweep.n_retained.to_string(),
        sweep.n_optimistic.to_string(),
        fmt_f64(sweep.n_optimistic as f64 / sweep.n_seeds as f64),
    ])?;
    w.flush()?;
    rep.files.extend([per_seed, summary]);
    rep.lines.push(sweep.summary_line());
    Ok(rep)
}

pub fn oracle_check(c: &OracleCheckConfig, out: &Path) -> Result<Report, CliError> {
    let mut rep = Report::default();
    let path = out.join("oracle.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "instance", "seed", "rows", "t", "method", "gamma", "gamma_C_norm", "retained", "max_abs_dev", "allowed", "pass",
    ])?;
    let (mut checked, mut failed, mut skipped) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    for k in 0..c.n_instances {
        let seed = rng::derive_seed(c.seed, &format!("oracle-instance-{k}"));
        let t = c.horizons[k % c.horizons.len()];
        let ds = random_instance(seed, c.max_rows)?;
        let sys = build_kernel_system(&ds, 0.0)?;
        let c_norm = sys.spectral_norm()?;
        let gamma = match c.gamma {
            Some(g) => g,
            None => {
                let u: f64 = rng::stream(seed, 1).random();
                (u * c.gamma_c_max / c_norm.max(f64::MIN_POSITIVE)).min(0.999)
            }
        };
        let gc = gamma * c_norm;
        for method in [TargetMethod::Independent, TargetMethod::Shared] {
            let mut rec = vec![
                k.to_string(),
                seed.to_string(),
                ds.len().to_string(),
                t.to_string(),
                method.to_string(),
                fmt_f64(gamma),
                fmt_f64(gc),
            ];
            if !(gc < 1.0) {
                skipped += 1;
                rec.extend(["false".into(), String::new(), String::new(), String::new()]);
                w.write_record(&rec)?;
                continue;
            }
            let closed = lcb_closed_form(&sys, &ds, gamma, t, method)?;
            let iter = iterate_linearized_fqe(&sys, &ds, gamma, t, method)?;
            let dev = closed
                .q_lcb
                .iter()
                .zip(&iter.lcb)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, |m: f64, d| if d.is_nan() { f64::INFINITY } else { m.max(d) });
            let allowed = c.tolerance + remainder_bound(&ds, gamma, c_norm, t);
            let pass = dev <= allowed;
            checked += 1;
            worst = worst.max(dev);
            if !pass {
                failed += 1;
            }
            rec.extend(["true".into(), fmt_f64(dev), fmt_f64(allowed), pass.to_string()]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    rep.files.push(path);
    rep.lines.push(format!("checked={checked} failed={failed} unretained={skipped} max_abs_dev={worst:e}"));
    if failed > 0 {
        rep.fail(CliError::Threshold(format!("{failed} oracle comparisons exceeded tolerance plus remainder")));
    }
    Ok(rep)
}

pub fn toy_chain(c: &ToyChainConfig, out: &Path, config_hash: &str, exec: Exec) -> Result<Report, CliError> {
    let mut rep = Report::default();
    let dataset = collect_chain_dataset(&c.chain)?;
    rep.files.extend(dataset.write_dir(&out.join("dataset"))?);
    let grid = uncertainty_grid(&c.chain, c.fqe.grid_points)?;
    let seeds = c.seeds.clone().unwrap_or_else(|| vec![c.fqe.seed]);
    let mut status = csv_writer(&out.join("status.csv"))?;
    status.write_record(["seed", "rule", "status", "final_loss"])?;
    for &seed in &seeds {
        let mut regions = Vec::new();
        let mut curves: Vec<(String, UncertaintyCurve)> = Vec::new();
        let mut losses = csv_writer(&out.join(format!("losses_seed{seed}.csv")))?;
        losses.write_record(["rule", "outer_iter", "mean_member_loss"])?;
        for &rule in &c.rules {
            let cfg = msglab::fqe::FqeConfig { rule, seed, ..c.fqe.clone() };
            match run_fqe_exec(&dataset, &cfg, grid.view(), exec) {
                Ok((_, curve, trace)) => {
                    let path = out.join(curve_file_name(rule, seed, config_hash));
                    curve.write_csv(&path)?;
                    rep.files.push(path);
                    for (i, l) in trace.iter().enumerate() {
                        losses.write_record([rule.to_string(), i.to_string(), fmt_f64(*l)])?;
                    }
                    let summary = summarize_curve(&curve, &CHAIN_REGIONS)?;
                    if rule == TargetRule::Independent {
                        let ratio = summary[0].mean_std / summary[2].mean_std;
                        rep.lines.push(format!("seed {seed}: independent gap-feeding / data-rich std ratio {ratio:.3}"));
                    }
                    status.write_record([seed.to_string(), rule.to_string(), "ok".into(), fmt_opt(trace.last().copied())])?;
                    regions.push((rule.to_string(), summary));
                    curves.push((rule.to_string(), curve));
                }
                Err(Error::Diverged(msg)) => {
                    rep.lines.push(format!("seed {seed}: rule {rule} diverged: {msg}"));
                    status.write_record([seed.to_string(), rule.to_string(), "diverged".into(), String::new()])?;
                    rep.fail(CliError::Internal(format!("rule {rule} diverged for seed {seed}")));
                }
                Err(e) => return Err(e.into()),
            }
        }
        losses.flush()?;
        rep.files.push(out.join(format!("losses_seed{seed}.csv")));
        let region_path = out.join(format!("regions_seed{seed}.csv"));
        write_region_csv(&region_path, &regions)?;
        rep.files.push(region_path);
        if c.svg && !curves.is_empty() {
            let path = out.join(format!("std_curves_seed{seed}.svg"));
            let refs: Vec<(String, &UncertaintyCurve)> = curves.iter().map(|(n, c)| (n.clone(), c)).collect();
            svg::render_std_curves(&path, &refs, Some((c.chain.gap_lo, c.chain.gap_hi)))?;
            rep.files.push(path);
        }
    }
    status.flush()?;
    rep.files.push(out.join("status.csv"));
    Ok(rep)
}

pub fn msg_train(c: &MsgTrainConfig, out: &Path, exec: Exec) -> Result<Report, CliError> {
    let mut rep = Report::default();
    let dataset = collect_chain_dataset(&c.chain)?;
    rep.files.extend(dataset.write_dir(&out.join("dataset"))?);
    let seeds = c.seeds.clone().unwrap_or_else(|| vec![c.msg.seed]);
    let eval_path = out.join("eval.csv");
    let mut eval = csv_writer(&eval_path)?;
    eval.write_record(["seed", "episodes", "horizon", "mean_return", "success_rate"])?;
    for &seed in &seeds {
        let dir = out.join(format!("seed{seed}"));
        let hp = msglab::msg::MsgHyperparams { seed, ..c.msg.clone() };
        let mut agent = MsgAgent::with_exec(&dataset, c.chain.action_range, hp, exec)?;
        let (log, trained) = train_steps(&mut agent, &dataset, c.msg.bc_steps, c.msg.train_steps);
        let log_path = dir.join("train_log.csv");
        log.write_csv(&log_path)?;
        rep.files.push(log_path);
        if let Err(e) = trained {
            eval.flush()?;
            rep.files.push(eval_path);
            return Err(CliError::Partial { error: Box::new(e.into()), files: rep.files });
        }
        rep.files.extend(agent.save_checkpoints(&dir.join("checkpoints"))?);
        let policy = |s: f64| agent.act(&[s]).map(|a| a[0]).unwrap_or(f64::NAN);
        let summary = evaluate_policy(policy, &c.chain, c.eval_episodes, c.eval_horizon, c.eval_seed)?;
        eval.write_record([
            seed.to_string(),
            summary.episodes.to_string(),
            c.eval_horizon.to_string(),
            fmt_f64(summary.mean_return),
            fmt_f64(summary.success_rate),
        ])?;
        rep.lines.push(format!("seed {seed}: success_rate={} mean_return={:.3}", summary.success_rate, summary.mean_return));
        if let Some(min) = c.min_success {
            if summary.success_rate < min {
                rep.fail(CliError::Threshold(format!("seed {seed}: success rate {} < {min}", summary.success_rate)));
            }
        }
    }
    eval.flush()?;
    rep.files.push(eval_path);
    Ok(rep)
}

/// Runs the BC and policy phases, returning whatever was logged before any
/// failure.
fn train_steps(agent: &mut MsgAgent, dataset: &OfflineDataset, bc: usize, policy: usize) -> (TrainLog, msglab::Result<()>) {
    let mut log = TrainLog::default();
    for k in 0..bc + policy {
        let row = if k < bc { agent.bc_step(dataset) } else { agent.policy_step(dataset) };
        match row {
            Ok(r) => log.rows.push(r),
            Err(e) => return (log, Err(e)),
        }
    }
    (log, Ok(()))
}

/// `(architecture, parameter count, max relative error)` per architecture.
pub fn grad_check_table(c: &GradCheckConfig, inject_sign_bug: bool) -> Result<Vec<(String, usize, f64)>, CliError> {
    let base = MlpSpec {
        input_dim: 3,
        hidden_dims: c.hidden_dims.clone(),
        activation: Activation::Tanh,
        output_dim: 1,
        weight_scale: 1.0,
        bias_scale: 0.1,
    };
    let mut rows = Vec::new();
    let mlp = Mlp::new(base.clone())?;
    let err = if inject_sign_bug { grad_check(&FlippedGradient(mlp.clone()), c.seed, c.n_probes) } else { grad_check(&mlp, c.seed, c.n_probes) };
    rows.push(("mlp".to_string(), mlp.param_count(), err));
    for kind in [EnsembleKind::Deep, EnsembleKind::DeepDoubleQ, EnsembleKind::MultiHead, EnsembleKind::Mimo, EnsembleKind::BatchEnsemble] {
        let arch = EnsembleArch::new(kind, c.n_members, &base)?;
        let name = serde_json::to_value(kind).map_err(Error::from)?.as_str().unwrap_or("ensemble").to_string();
        rows.push((name, arch.param_count(), grad_check(&arch, c.seed, c.n_probes)));
    }
    let spec = msglab::msg::PolicySpec {
        hidden_dims: c.hidden_dims.clone(),
        activation: Activation::Tanh,
        bias_scale: 0.3,
        ..Default::default()
    };
    let policy = GaussianPolicy::new(2, 2, 0.3, &spec)?;
    rows.push(("policy-log-likelihood".into(), policy.param_count(), policy_grad_error(&policy, c.seed, c.n_probes)?));
    Ok(rows)
}

fn policy_grad_error(policy: &GaussianPolicy, seed: u64, n_probes: usize) -> Result<f64, CliError> {
    let mut r = rng::stream(seed, 1);
    let params = policy.init_params(&mut r);
    let s = Array2::from_shape_fn((4, 2), |_| truncated_standard(&mut r));
    let a = Array2::from_shape_fn((4, 2), |_| 0.25 * truncated_standard(&mut r).tanh());
    let (_, g) = policy.log_likelihood_grad(&params, s.view(), a.view())?;
    let f = |q: &[f64]| {
        policy
            .log_prob(q, s.view(), a.view())
            .map(|v| v.mean().unwrap_or(f64::NAN))
            .unwrap_or(f64::NAN)
    };
    let coords = probe_coords(&mut r, 0..params.len(), n_probes);
    Ok(check_gradient(f, &params, &g, &coords))
}

pub fn grad_check_cmd(c: &GradCheckConfig, out: &Path, inject_sign_bug: bool) -> Result<Report, CliError> {
    let mut rep = Report::default();
    let rows = grad_check_table(c, inject_sign_bug)?;
    let path = out.join("grad_check.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["architecture", "param_count", "probes", "max_rel_error", "pass"])?;
    for (name, count, err) in &rows {
        let pass = *err < c.tolerance;
        w.write_record([name.clone(), count.to_string(), c.n_probes.min(*count).to_string(), fmt_f64(*err), pass.to_string()])?;
        rep.lines.push(format!("{name:<24} max_rel_error={err:.3e} {}", if pass { "ok" } else { "FAIL" }));
        if !pass {
            rep.fail(CliError::Threshold(format!("{name}: gradient error {err:e} >= {}", c.tolerance)));
        }
    }
    w.flush()?;
    rep.files.push(path);
    Ok(rep)
}
