//! Acceptance criteria 1-10. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use msglab::dataset::{collect_chain_dataset, uncertainty_grid, ChainConfig, GaussianMdpConfig};
use msglab::fqe::{compute_targets, run_fqe_exec, summarize_curve, FqeConfig, FqeEnsemble, QMember, TargetRule, CHAIN_REGIONS};
use msglab::kernel::{
    build_kernel_system, iterate_linearized_fqe, lcb_closed_form, random_instance, remainder_bound, run_validation_sweep,
    run_validation_sweep_seeds, TargetMethod,
};
use msglab::msg::{evaluate_policy, train_msg, GaussianPolicy, MsgHyperparams, PolicySpec};
use msglab::nnets::gradcheck::{check_gradient, grad_check, probe_coords};
use msglab::nnets::init::truncated_standard;
use msglab::nnets::{Activation, BatchEnsemble, EnsembleArch, EnsembleKind, MinPooled, Mlp, MlpSpec, Model, OptimizerKind};
use msglab::par::Exec;
use msglab::rng;
use ndarray::Array2;
use rand::Rng as _;

type Criterion = (usize, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn main() {
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let criteria: [Criterion; 10] = [
        (1, "optimism exhibit reproduction", c1_optimism_exhibit),
        (2, "independent pessimism sign", c2_independent_sign),
        (3, "closed form vs iterative oracle", c3_oracle_equivalence),
        (4, "t = 0 coincidence", c4_t0_coincidence),
        (5, "toy-chain uncertainty structure", c5_toy_chain),
        (6, "target-rule locality", c6_locality),
        (7, "gradient correctness", c7_gradients),
        (8, "BatchEnsemble degeneracy", c8_batch_ensemble),
        (9, "MSG end-to-end on the chain", c9_msg),
        (10, "determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {id:>2} ({name}): {} [{:.1}s]", v.detail, t.elapsed().as_secs_f64());
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn c1_optimism_exhibit() -> Verdict {
    let cfg = GaussianMdpConfig { state_dim: 30, action_dim: 30, n_episodes: 5, episode_len: 5, seed: 0 };
    let t = Instant::now();
    let out = run_validation_sweep(&cfg, 0.5, 1000, 1000, 0.0);
    let secs = t.elapsed().as_secs_f64();
    let frac = out.n_optimistic as f64 / out.n_seeds as f64;
    verdict(
        out.n_optimistic > 0 && (0.10..=0.35).contains(&frac) && secs < 600.0,
        format!("{} fraction={frac:.3} (band [0.10, 0.35]) runtime={secs:.1}s", out.summary_line()),
    )
}

/// Random kernel instance with `gamma ||C||` drawn uniformly below `gc_max`.
fn instance(k: u64, max_rows: usize, gc_max: f64) -> (msglab::dataset::OfflineDataset, msglab::kernel::KernelSystem, f64, f64) {
    let seed = rng::derive_seed(0xacce, &format!("instance-{k}"));
    let ds = random_instance(seed, max_rows).expect("instance");
    let sys = build_kernel_system(&ds, 0.0).expect("kernel system");
    let c_norm = sys.spectral_norm().expect("norm");
    let u: f64 = rng::stream(seed, 1).random();
    let gamma = (u * gc_max / c_norm).min(0.999);
    (ds, sys, gamma, c_norm)
}

fn c2_independent_sign() -> Verdict {
    let horizons = [0, 1, 10, 100];
    let n = 600;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..n {
        let (ds, sys, gamma, _) = instance(k, 25, 0.95);
        let t = horizons[k as usize % horizons.len()];
        let rep = lcb_closed_form(&sys, &ds, gamma, t, TargetMethod::Independent).expect("closed form");
        worst = worst.max(rep.max_pessimism());
    }
    verdict(worst <= 1e-9, format!("{n} instances, max pessimism entry {worst:.3e} (must be <= 1e-9)"))
}

fn c3_oracle_equivalence() -> Verdict {
    let horizons = [0, 1, 5, 20, 60];
    let n = 150;
    let t0 = Instant::now();
    let (mut worst_ratio, mut worst_dev, mut bad) = (0.0_f64, 0.0_f64, 0);
    for k in 0..n {
        let (ds, sys, gamma, c_norm) = instance(10_000 + k, 20, 0.95);
        let t = horizons[k as usize % horizons.len()];
        let allowed = 1e-6 + remainder_bound(&ds, gamma, c_norm, t);
        for method in [TargetMethod::Independent, TargetMethod::Shared] {
            let closed = lcb_closed_form(&sys, &ds, gamma, t, method).expect("closed form");
            let iter = iterate_linearized_fqe(&sys, &ds, gamma, t, method).expect("iterative");
            let dev = closed.q_lcb.iter().zip(&iter.lcb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if dev.is_nan() || dev > allowed {
                bad += 1;
            }
            worst_dev = worst_dev.max(dev);
            worst_ratio = worst_ratio.max(dev / allowed);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        bad == 0 && secs < 60.0,
        format!("{n} instances x 2 methods, t <= 60: {bad} violations, max |dev| {worst_dev:.3e}, max dev/allowed {worst_ratio:.3e}, runtime {secs:.1}s"),
    )
}

fn c4_t0_coincidence() -> Verdict {
    let n = 200;
    let mut mismatches = 0;
    for k in 0..n {
        let (ds, sys, gamma, _) = instance(20_000 + k, 25, 0.95);
        let a = lcb_closed_form(&sys, &ds, gamma, 0, TargetMethod::Independent).expect("independent");
        let b = lcb_closed_form(&sys, &ds, gamma, 0, TargetMethod::Shared).expect("shared");
        if a.q_lcb != b.q_lcb || a.mean_term != b.mean_term || a.pessimism_term != b.pessimism_term {
            mismatches += 1;
        }
    }
    for seed in 0..20 {
        let ds = msglab::dataset::generate_gaussian_dataset(&GaussianMdpConfig { seed, ..Default::default() }).expect("dataset");
        let sys = build_kernel_system(&ds, 0.0).expect("kernel system");
        let a = lcb_closed_form(&sys, &ds, 0.5, 0, TargetMethod::Independent);
        let b = lcb_closed_form(&sys, &ds, 0.5, 0, TargetMethod::Shared);
        if let (Ok(a), Ok(b)) = (a, b) {
            if a.q_lcb != b.q_lcb || a.pessimism_term != b.pessimism_term {
                mismatches += 1;
            }
        }
    }
    verdict(mismatches == 0, format!("{} instances, {mismatches} with any differing entry", n + 20))
}

fn c5_toy_chain() -> Verdict {
    let chain = ChainConfig::default();
    let cfg = FqeConfig::ci();
    let ds = collect_chain_dataset(&chain).expect("chain dataset");
    let grid = uncertainty_grid(&chain, cfg.grid_points).expect("grid");
    match run_fqe_exec(&ds, &cfg, grid.view(), Exec::default()) {
        Ok((_, curve, _)) => {
            let s = summarize_curve(&curve, &CHAIN_REGIONS).expect("regions");
            let ratio = s[0].mean_std / s[2].mean_std;
            verdict(
                ratio >= 1.5,
                format!(
                    "N={} {}x{}: mean std [-1,-0.33] = {:.3}, [0.33,1] = {:.3}, ratio {ratio:.3} (needs >= 1.5)",
                    cfg.n_members, cfg.outer_iters, cfg.inner_steps, s[0].mean_std, s[2].mean_std
                ),
            )
        }
        Err(e) => verdict(false, format!("run failed: {e}")),
    }
}

/// For each rule: perturb member `j` twice (a shift of every parameter, then
/// a large negative output bias that makes it the ensemble minimum),
/// recompute targets, and list which other members' targets moved.
fn moved_members<M: QMember>(model: M, rule: TargetRule) -> Vec<usize> {
    let chain = ChainConfig { n_episodes: 4, episode_len: 8, ..Default::default() };
    let ds = collect_chain_dataset(&chain).expect("chain dataset");
    let n = 4;
    let j = 2;
    let params: Vec<Vec<f64>> = (0..n).map(|i| model.init_params(&mut rng::stream(31, i as u64))).collect();
    let targets = |ps: Vec<Vec<f64>>| {
        let ens = FqeEnsemble::from_params(model.clone(), ps, OptimizerKind::Adam, 1e-3);
        let next = ens.next_values(ds.xp()).expect("next values");
        compute_targets(rule, &next, ds.r().view(), 0.99).expect("targets")
    };
    let before = targets(params.clone());
    let mut shifted = params.clone();
    for p in shifted[j].iter_mut() {
        *p += 0.37;
    }
    let mut lowered = params;
    *lowered[j].last_mut().expect("output bias") -= 50.0;
    let after = [targets(shifted), targets(lowered)];
    (0..n).filter(|&i| i != j && after.iter().any(|a| before.column(i) != a.column(i))).collect()
}

fn c6_locality() -> Verdict {
    let spec = MlpSpec { input_dim: 2, hidden_dims: vec![16], activation: Activation::Tanh, output_dim: 1, weight_scale: 1.0, bias_scale: 0.1 };
    let mlp = Mlp::new(spec).expect("mlp");
    let mut ok = true;
    let mut parts = Vec::new();
    for rule in TargetRule::ALL_CHAIN {
        let moved = if rule == TargetRule::IndependentDoubleQ {
            moved_members(MinPooled::new(mlp.clone()).expect("pair"), rule)
        } else {
            moved_members(mlp.clone(), rule)
        };
        let good = if rule.is_shared() { moved.len() == 3 } else { moved.is_empty() };
        ok &= good;
        parts.push(format!("{rule}: {} other members moved", moved.len()));
    }
    verdict(ok, parts.join(", "))
}

fn c7_gradients() -> Verdict {
    let probes = 150;
    let mut rows: Vec<(String, f64)> = Vec::new();
    let toy = Mlp::new(MlpSpec::toy_q(2)).expect("mlp");
    rows.push(("mlp".into(), grad_check(&toy, 1, probes)));
    let base = MlpSpec { input_dim: 2, hidden_dims: vec![24, 24], activation: Activation::Tanh, output_dim: 1, weight_scale: 1.0, bias_scale: 0.1 };
    for kind in [EnsembleKind::MultiHead, EnsembleKind::Mimo, EnsembleKind::BatchEnsemble, EnsembleKind::DeepDoubleQ] {
        let arch = EnsembleArch::new(kind, 4, &base).expect("architecture");
        rows.push((format!("{kind:?}"), grad_check(&arch, 2, probes)));
    }
    let pspec = PolicySpec { hidden_dims: vec![32, 32], activation: Activation::Relu, bias_scale: 0.3, ..Default::default() };
    let policy = GaussianPolicy::new(1, 1, 0.3, &pspec).expect("policy");
    let mut r = rng::stream(3, 0);
    let params = policy.init_params(&mut r);
    let s = Array2::from_shape_fn((8, 1), |_| truncated_standard(&mut r));
    let a = Array2::from_shape_fn((8, 1), |_| 0.28 * truncated_standard(&mut r).tanh());
    let (_, g) = policy.log_likelihood_grad(&params, s.view(), a.view()).expect("log-likelihood");
    let f = |q: &[f64]| policy.log_prob(q, s.view(), a.view()).map(|v| v.mean().unwrap_or(f64::NAN)).unwrap_or(f64::NAN);
    let coords = probe_coords(&mut r, 0..params.len(), probes);
    rows.push(("policy-log-likelihood".into(), check_gradient(f, &params, &g, &coords)));
    let worst = rows.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail = rows.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ");
    verdict(worst < 1e-4, format!("{probes} probes each: {detail}"))
}

fn c8_batch_ensemble() -> Verdict {
    let spec = MlpSpec { input_dim: 2, hidden_dims: vec![64, 64], activation: Activation::Tanh, output_dim: 1, weight_scale: 1.0, bias_scale: 0.1 };
    let n = 6;
    let be = BatchEnsemble::new(&spec, n).expect("batch ensemble");
    let mut p = be.init_params(&mut rng::stream(8, 0));
    let mut r = rng::stream(8, 1);
    let biases: Vec<Vec<f64>> = be.dims().iter().map(|(_, o)| (0..*o).map(|_| 0.1 * truncated_standard(&mut r)).collect()).collect();
    be.set_unit_modulation(&mut p, &biases);
    let base = Mlp::new(spec).expect("mlp");
    let base_p = be.base_params(&p, &biases);
    let x = Array2::from_shape_fn((50, 2), |_| truncated_standard(&mut r));
    let y = be.forward(&p, x.view()).expect("forward");
    let y0 = base.forward(&base_p, x.view()).expect("base forward");
    let worst = (0..n).flat_map(|m| (0..50).map(move |b| (m, b))).map(|(m, b)| (y[[b, m]] - y0[[b, 0]]).abs()).fold(0.0, f64::max);
    verdict(worst == 0.0, format!("{n} members x 50 inputs, max |member - base| = {worst:e}"))
}

fn c9_msg() -> Verdict {
    let chain = ChainConfig { gap_lo: 0.0, gap_hi: 0.0, ..Default::default() };
    let hp = MsgHyperparams::default();
    let setup = (hp.beta, hp.alpha, hp.n_members, hp.gamma);
    if setup != (-4.0, 0.0, 4, 0.99) {
        return verdict(false, format!("unexpected defaults (beta, alpha, N, gamma) = {setup:?}"));
    }
    let ds = collect_chain_dataset(&chain).expect("chain dataset");
    let t = Instant::now();
    let (agent, _) = match train_msg(&ds, chain.action_range, &hp) {
        Ok(x) => x,
        Err(e) => return verdict(false, format!("training failed: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let eval = evaluate_policy(|s| agent.act(&[s]).map(|a| a[0]).unwrap_or(f64::NAN), &chain, 100, 30, 7919).expect("evaluation");
    verdict(
        eval.success_rate >= 0.8 && secs < 900.0,
        format!(
            "{} BC + {} policy steps: success rate {} over 100 episodes (needs >= 0.8), mean return {:.2}, training {secs:.1}s",
            hp.bc_steps, hp.train_steps, eval.success_rate, eval.mean_return
        ),
    )
}

fn bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).expect("read back")
}

fn c10_determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let d = dir.path();
    let mut diffs = Vec::new();

    let cfg = GaussianMdpConfig::default();
    let seeds: Vec<u64> = (0..40).collect();
    for (name, exec) in [("sweep_a", Exec::Parallel), ("sweep_b", Exec::Sequential), ("sweep_c", Exec::Parallel)] {
        run_validation_sweep_seeds(&cfg, 0.5, 200, &seeds, 0.0, exec).write_csv(&d.join(format!("{name}.csv"))).expect("csv");
    }
    if bytes(&d.join("sweep_a.csv")) != bytes(&d.join("sweep_b.csv")) || bytes(&d.join("sweep_a.csv")) != bytes(&d.join("sweep_c.csv")) {
        diffs.push("sweep");
    }

    let (ds, sys, gamma, _) = instance(77, 20, 0.9);
    for name in ["lcb_a", "lcb_b"] {
        lcb_closed_form(&sys, &ds, gamma, 10, TargetMethod::Shared).expect("lcb").write_csv(&d.join(format!("{name}.csv"))).expect("csv");
    }
    if bytes(&d.join("lcb_a.csv")) != bytes(&d.join("lcb_b.csv")) {
        diffs.push("oracle");
    }

    let chain = ChainConfig { n_episodes: 6, episode_len: 10, ..Default::default() };
    let chain_ds = collect_chain_dataset(&chain).expect("chain");
    let grid = uncertainty_grid(&chain, 21).expect("grid");
    for rule in TargetRule::ALL_CHAIN {
        let fcfg = FqeConfig { n_members: 3, outer_iters: 2, inner_steps: 4, hidden_dims: vec![16], rule, ..FqeConfig::default() };
        for (name, exec) in [("a", Exec::Parallel), ("b", Exec::Sequential)] {
            let (_, curve, _) = run_fqe_exec(&chain_ds, &fcfg, grid.view(), exec).expect("fqe");
            curve.write_csv(&d.join(format!("curve_{rule}_{name}.csv"))).expect("csv");
        }
        if bytes(&d.join(format!("curve_{rule}_a.csv"))) != bytes(&d.join(format!("curve_{rule}_b.csv"))) {
            diffs.push("toy-chain");
        }
    }

    let hp = MsgHyperparams { batch_size: 32, bc_steps: 5, train_steps: 5, q_hidden: vec![16], ..Default::default() };
    for name in ["msg_a", "msg_b"] {
        let (_, log) = train_msg(&chain_ds, chain.action_range, &hp).expect("msg");
        log.write_csv(&d.join(format!("{name}.csv"))).expect("csv");
    }
    if bytes(&d.join("msg_a.csv")) != bytes(&d.join("msg_b.csv")) {
        diffs.push("msg-train");
    }

    let mlp = Mlp::new(MlpSpec { hidden_dims: vec![8], ..MlpSpec::linear(3, 1) }).expect("mlp");
    if grad_check(&mlp, 4, 50).to_bits() != grad_check(&mlp, 4, 50).to_bits() {
        diffs.push("grad-check");
    }

    verdict(
        diffs.is_empty(),
        if diffs.is_empty() {
            "sweep, oracle, toy-chain (5 rules), msg-train and grad-check outputs byte-identical on rerun and across execution modes".to_string()
        } else {
            format!("differences in {}", diffs.join(", "))
        },
    )
}
