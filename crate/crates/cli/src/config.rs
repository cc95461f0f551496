//! Run configuration: one TOML file per run, tagged by `kind`.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use msglab::dataset::{ChainConfig, GaussianMdpConfig};
use msglab::fqe::{FqeConfig, TargetRule};
use msglab::msg::MsgHyperparams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    ValidateTheorem,
    OracleCheck,
    ToyChain,
    MsgTrain,
    GradCheck,
}

impl Kind {
    pub const ALL: [Kind; 5] = [Kind::ValidateTheorem, Kind::OracleCheck, Kind::ToyChain, Kind::MsgTrain, Kind::GradCheck];

    pub fn name(self) -> &'static str {
        match self {
            Kind::ValidateTheorem => "validate-theorem",
            Kind::OracleCheck => "oracle-check",
            Kind::ToyChain => "toy-chain",
            Kind::MsgTrain => "msg-train",
            Kind::GradCheck => "grad-check",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    ValidateTheorem(ValidateTheoremConfig),
    OracleCheck(OracleCheckConfig),
    ToyChain(ToyChainConfig),
    MsgTrain(MsgTrainConfig),
    GradCheck(GradCheckConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateTheoremConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Explicit seeds; when absent the sweep uses `mdp.seed, mdp.seed + 1, ..`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub gamma: f64,
    pub horizon_t: usize,
    pub n_seeds: usize,
    pub ridge: f64,
    pub mdp: GaussianMdpConfig,
}

impl Default for ValidateTheoremConfig {
    fn default() -> Self {
        Self { out: None, seeds: None, gamma: 0.5, horizon_t: 1000, n_seeds: 1000, ridge: 0.0, mdp: GaussianMdpConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCheckConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub n_instances: usize,
    pub max_rows: usize,
    /// Instance `k` uses `horizons[k % len]`.
    pub horizons: Vec<usize>,
    /// Fixed discount. When absent each instance draws `gamma ||C||`
    /// uniformly from `(0, gamma_c_max)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub gamma_c_max: f64,
    pub tolerance: f64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        Self {
            out: None,
            seed: 0,
            n_instances: 100,
            max_rows: 20,
            horizons: vec![0, 1, 10, 50],
            gamma: None,
            gamma_c_max: 0.95,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyChainConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Ensemble seeds; one full set of rules per seed. Defaults to `[fqe.seed]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(with = "rule_names")]
    pub rules: Vec<TargetRule>,
    /// Also render the curves as SVG.
    pub svg: bool,
    pub chain: ChainConfig,
    /// `fqe.rule` is ignored; every rule in `rules` is run.
    pub fqe: FqeConfig,
}

impl Default for ToyChainConfig {
    fn default() -> Self {
        Self {
            out: None,
            seeds: None,
            rules: TargetRule::ALL_CHAIN.to_vec(),
            svg: false,
            chain: ChainConfig::default(),
            fqe: FqeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsgTrainConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Training seeds, one run each. Defaults to `[msg.seed]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    pub eval_seed: u64,
    /// Exit with status 1 when a run's success rate falls below this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_success: Option<f64>,
    pub chain: ChainConfig,
    pub msg: MsgHyperparams,
}

impl Default for MsgTrainConfig {
    fn default() -> Self {
        Self {
            out: None,
            seeds: None,
            eval_episodes: 100,
            eval_horizon: 30,
            eval_seed: 7919,
            min_success: None,
            chain: msg_chain(),
            msg: MsgHyperparams::default(),
        }
    }
}

/// Chain dataset for control: same MDP, no data gap, so every state has
/// logged transitions.
pub fn msg_chain() -> ChainConfig {
    ChainConfig { gap_lo: 0.0, gap_hi: 0.0, ..ChainConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub n_probes: usize,
    pub n_members: usize,
    pub hidden_dims: Vec<usize>,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { out: None, seed: 0, n_probes: 200, n_members: 3, hidden_dims: vec![16, 16], tolerance: 1e-4 }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub quick: bool,
}

impl ExperimentConfig {
    pub fn default_for(kind: Kind) -> Self {
        match kind {
            Kind::ValidateTheorem => Self::ValidateTheorem(Default::default()),
            Kind::OracleCheck => Self::OracleCheck(Default::default()),
            Kind::ToyChain => Self::ToyChain(Default::default()),
            Kind::MsgTrain => Self::MsgTrain(Default::default()),
            Kind::GradCheck => Self::GradCheck(Default::default()),
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Self::ValidateTheorem(_) => Kind::ValidateTheorem,
            Self::OracleCheck(_) => Kind::OracleCheck,
            Self::ToyChain(_) => Kind::ToyChain,
            Self::MsgTrain(_) => Kind::MsgTrain,
            Self::GradCheck(_) => Kind::GradCheck,
        }
    }

    /// Parses a config file. The `kind` line is blanked in place before the
    /// body is deserialized, so errors keep their line and column.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        #[derive(Deserialize)]
        struct Head {
            kind: toml::Spanned<Kind>,
        }
        let err = |e: toml::de::Error| CliError::Config(e.to_string());
        let head: Head = toml::from_str(text).map_err(err)?;
        let span = head.kind.span();
        let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
        let line_end = text[span.end..].find('\n').map_or(text.len(), |i| span.end + i);
        let mut body = String::with_capacity(text.len());
        body.push_str(&text[..line_start]);
        body.push_str(&" ".repeat(line_end - line_start));
        body.push_str(&text[line_end..]);
        Ok(match head.kind.into_inner() {
            Kind::ValidateTheorem => Self::ValidateTheorem(toml::from_str(&body).map_err(err)?),
            Kind::OracleCheck => Self::OracleCheck(toml::from_str(&body).map_err(err)?),
            Kind::ToyChain => Self::ToyChain(toml::from_str(&body).map_err(err)?),
            Kind::MsgTrain => Self::MsgTrain(toml::from_str(&body).map_err(err)?),
            Kind::GradCheck => Self::GradCheck(toml::from_str(&body).map_err(err)?),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize to TOML")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn out(&self) -> Option<&Path> {
        match self {
            Self::ValidateTheorem(c) => c.out.as_deref(),
            Self::OracleCheck(c) => c.out.as_deref(),
            Self::ToyChain(c) => c.out.as_deref(),
            Self::MsgTrain(c) => c.out.as_deref(),
            Self::GradCheck(c) => c.out.as_deref(),
        }
    }

    /// Reduced CI-scale settings.
    pub fn quick(&mut self) {
        match self {
            Self::ValidateTheorem(c) => c.n_seeds = c.n_seeds.min(100),
            Self::OracleCheck(c) => c.n_instances = c.n_instances.min(20),
            Self::ToyChain(c) => {
                let ci = FqeConfig::ci();
                c.fqe.n_members = ci.n_members;
                c.fqe.outer_iters = ci.outer_iters;
                c.fqe.inner_steps = ci.inner_steps;
            }
            Self::MsgTrain(c) => {
                c.msg.bc_steps = c.msg.bc_steps.min(100);
                c.msg.train_steps = c.msg.train_steps.min(300);
                c.eval_episodes = c.eval_episodes.min(20);
            }
            Self::GradCheck(c) => c.n_probes = c.n_probes.min(100),
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if o.quick {
            self.quick();
        }
        if let Some(s) = o.seed {
            match self {
                Self::ValidateTheorem(c) => c.mdp.seed = s,
                Self::OracleCheck(c) => c.seed = s,
                Self::ToyChain(c) => c.fqe.seed = s,
                Self::MsgTrain(c) => c.msg.seed = s,
                Self::GradCheck(c) => c.seed = s,
            }
        }
        if let Some(seeds) = &o.seeds {
            match self {
                Self::ValidateTheorem(c) => c.seeds = Some(seeds.clone()),
                Self::ToyChain(c) => c.seeds = Some(seeds.clone()),
                Self::MsgTrain(c) => c.seeds = Some(seeds.clone()),
                _ => return Err(CliError::Config(format!("{} takes a single --seed, not a seed list", self.kind().name()))),
            }
        }
        if let Some(out) = &o.out {
            let out = Some(out.clone());
            match self {
                Self::ValidateTheorem(c) => c.out = out,
                Self::OracleCheck(c) => c.out = out,
                Self::ToyChain(c) => c.out = out,
                Self::MsgTrain(c) => c.out = out,
                Self::GradCheck(c) => c.out = out,
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: msglab::Error| CliError::Config(e.to_string());
        match self {
            Self::ValidateTheorem(c) => {
                c.mdp.validate().map_err(cfg)?;
                if !(0.0..1.0).contains(&c.gamma) || !(c.ridge >= 0.0) {
                    return Err(CliError::Config("validate-theorem needs 0 <= gamma < 1 and ridge >= 0".into()));
                }
                if c.seeds.as_ref().map_or(c.n_seeds == 0, Vec::is_empty) {
                    return Err(CliError::Config("validate-theorem needs at least one seed".into()));
                }
            }
            Self::OracleCheck(c) => {
                if c.n_instances == 0 || c.horizons.is_empty() || c.max_rows < 2 {
                    return Err(CliError::Config("oracle-check needs n_instances >= 1, max_rows >= 2 and a horizon".into()));
                }
                if let Some(g) = c.gamma {
                    if !(0.0..1.0).contains(&g) {
                        return Err(CliError::Config(format!("oracle-check gamma must be in [0, 1), got {g}")));
                    }
                }
                if !(c.gamma_c_max > 0.0 && c.gamma_c_max < 1.0) || !(c.tolerance >= 0.0) {
                    return Err(CliError::Config("oracle-check needs 0 < gamma_c_max < 1 and tolerance >= 0".into()));
                }
            }
            Self::ToyChain(c) => {
                c.chain.validate().map_err(cfg)?;
                c.fqe.validate().map_err(cfg)?;
                for r in &c.rules {
                    r.validate().map_err(cfg)?;
                }
                if c.rules.is_empty() || c.seeds.as_ref().is_some_and(Vec::is_empty) {
                    return Err(CliError::Config("toy-chain needs at least one rule and one seed".into()));
                }
            }
            Self::MsgTrain(c) => {
                c.chain.validate().map_err(cfg)?;
                c.msg.validate().map_err(cfg)?;
                if c.eval_episodes == 0 || c.eval_horizon == 0 || c.seeds.as_ref().is_some_and(Vec::is_empty) {
                    return Err(CliError::Config("msg-train needs eval_episodes, eval_horizon and seeds to be non-empty".into()));
                }
            }
            Self::GradCheck(c) => {
                if c.n_probes == 0 || c.n_members == 0 || c.hidden_dims.contains(&0) {
                    return Err(CliError::Config("grad-check needs n_probes, n_members and hidden widths >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Reads one seed per line; blank lines and `#` comments are skipped.
pub fn read_seed_file(path: &Path) -> Result<Vec<u64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut seeds = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        seeds.push(line.parse().map_err(|e| {
            CliError::Config(format!("{}:{}: bad seed {line:?}: {e}", path.display(), n + 1))
        })?);
    }
    if seeds.is_empty() {
        return Err(CliError::Config(format!("{} lists no seeds", path.display())));
    }
    Ok(seeds)
}

/// Target rules as their display names, e.g. `"shared-lcb-2"`.
mod rule_names {
    use msglab::fqe::TargetRule;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rules: &[TargetRule], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(rules.iter().map(|r| r.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<TargetRule>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for kind in Kind::ALL {
            let mut cfg = ExperimentConfig::default_for(kind);
            for quick in [false, true] {
                if quick {
                    cfg.quick();
                }
                let text = cfg.to_toml();
                let back = ExperimentConfig::from_toml(&text).unwrap();
                assert_eq!(back, cfg, "{text}");
                assert_eq!(back.to_toml(), text);
            }
        }
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml("kind = \"validate-theorem\"\nn_seeds = 10\n[mdp]\nseed = 4\n").unwrap();
        let ExperimentConfig::ValidateTheorem(c) = cfg else { panic!("wrong kind") };
        assert_eq!(c.n_seeds, 10);
        assert_eq!(c.mdp.seed, 4);
        assert_eq!(c.mdp.state_dim, 30);
    }

    #[test]
    fn unknown_fields_report_location() {
        let err = ExperimentConfig::from_toml("kind = \"toy-chain\"\n[fqe]\nlearning_rate = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate"), "{msg}");
        assert!(msg.contains("line 3") || msg.contains("3:"), "{msg}");
        let bad_value = ExperimentConfig::from_toml("kind = \"grad-check\"\nn_probes = \"many\"\n").unwrap_err().to_string();
        assert!(bad_value.contains("line 2"), "{bad_value}");
        assert!(ExperimentConfig::from_toml("kind = \"nope\"\n").is_err());
        assert!(ExperimentConfig::from_toml("gamma = 0.5\n").is_err());
    }

    #[test]
    fn rules_parse_by_name() {
        let cfg = ExperimentConfig::from_toml("kind = \"toy-chain\"\nrules = [\"independent\", \"shared-lcb-3\"]\n").unwrap();
        let ExperimentConfig::ToyChain(c) = cfg else { panic!("wrong kind") };
        assert_eq!(c.rules, vec![TargetRule::Independent, TargetRule::SharedLcb { k: 3.0 }]);
        assert!(ExperimentConfig::from_toml("kind = \"toy-chain\"\nrules = [\"bogus\"]\n").is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ExperimentConfig::default_for(Kind::MsgTrain);
        let o = Overrides { out: Some("x".into()), seed: Some(9), seeds: Some(vec![1, 2]), quick: true };
        cfg.apply(&o).unwrap();
        let ExperimentConfig::MsgTrain(c) = &cfg else { panic!("wrong kind") };
        assert_eq!((c.msg.seed, c.seeds.clone(), c.out.clone()), (9, Some(vec![1, 2]), Some("x".into())));
        assert!(c.msg.train_steps <= 300);
        let mut g = ExperimentConfig::default_for(Kind::GradCheck);
        assert!(g.apply(&Overrides { seeds: Some(vec![1]), ..Default::default() }).is_err());
    }
}
