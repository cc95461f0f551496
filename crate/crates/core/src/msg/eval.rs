use rand::distr::Uniform;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{chain_step, ChainConfig};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Rolls `policy` in the chain MDP from uniform starts (stream `k` of
/// `seed` for episode `k`). An episode succeeds if it collects any reward.
/// Returns are undiscounted.
pub fn evaluate_policy<F>(policy: F, cfg: &ChainConfig, n_episodes: usize, horizon: usize, seed: u64) -> Result<EvalSummary>
where
    F: Fn(f64) -> f64,
{
    cfg.validate()?;
    if horizon == 0 || n_episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs horizon >= 1 and at least one episode".into()));
    }
    let starts = Uniform::new_inclusive(cfg.state_lo, cfg.state_hi).expect("valid state bounds");
    let mut total = 0.0;
    let mut successes = 0;
    for ep in 0..n_episodes {
        let mut r = rng::stream(seed, ep as u64);
        let mut s = r.sample(starts);
        let mut ret = 0.0;
        for _ in 0..horizon {
            let (next, rew) = chain_step(s, policy(s), cfg);
            ret += rew;
            s = next;
        }
        total += ret;
        if ret > 0.0 {
            successes += 1;
        }
    }
    Ok(EvalSummary {
        episodes: n_episodes,
        mean_return: total / n_episodes as f64,
        success_rate: successes as f64 / n_episodes as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_policies() {
        let cfg = ChainConfig::default();
        assert_eq!(evaluate_policy(|_| 0.3, &cfg, 100, 30, 0).unwrap().success_rate, 1.0);
        assert_eq!(evaluate_policy(|_| -0.3, &cfg, 100, 30, 0).unwrap().success_rate, 0.0);
        let still = evaluate_policy(|_| 0.0, &cfg, 20_000, 30, 0).unwrap();
        assert!((still.success_rate - 0.125).abs() < 0.01, "{}", still.success_rate);
        assert!((still.mean_return - 0.125 * 30.0).abs() < 0.3);
    }

    #[test]
    fn rejects_zero_horizon() {
        assert!(evaluate_policy(|_| 0.0, &ChainConfig::default(), 10, 0, 0).is_err());
    }
}
