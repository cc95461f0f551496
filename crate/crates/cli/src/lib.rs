//! Experiment runner for msglab: config handling, subcommand dispatch and
//! run manifests.

// Validation negates comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;

use std::path::{Path, PathBuf};
use std::time::Instant;

use msglab::io::config_hash;
use msglab::par::Exec;

pub use config::{ExperimentConfig, Kind, Overrides};
pub use manifest::RunManifest;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MSGLAB_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("threshold not met: {0}")]
    Threshold(String),

    #[error("{0}")]
    Internal(String),

    #[error("{error} (partial output kept)")]
    Partial { error: Box<CliError>, files: Vec<PathBuf> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Threshold(_) => 1,
            CliError::Config(_) => 2,
            CliError::Internal(_) => 3,
            CliError::Partial { error, .. } => error.exit_code(),
        }
    }
}

impl From<msglab::Error> for CliError {
    fn from(e: msglab::Error) -> Self {
        match e {
            msglab::Error::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(format!("io error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Internal(format!("csv error: {e}"))
    }
}

/// `config.out`, else `$MSGLAB_OUT/<kind>`, else `runs/<kind>`.
pub fn resolve_out(cfg: &ExperimentConfig, env_root: Option<&Path>) -> PathBuf {
    match cfg.out() {
        Some(p) => p.to_path_buf(),
        None => env_root.unwrap_or(Path::new("runs")).join(cfg.kind().name()),
    }
}

/// The config as written to `config.toml` and hashed: without the output
/// directory, so runs that differ only in location share a hash.
pub fn canonical(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    match &mut c {
        ExperimentConfig::ValidateTheorem(x) => x.out = None,
        ExperimentConfig::OracleCheck(x) => x.out = None,
        ExperimentConfig::ToyChain(x) => x.out = None,
        ExperimentConfig::MsgTrain(x) => x.out = None,
        ExperimentConfig::GradCheck(x) => x.out = None,
    }
    c
}

pub struct RunOptions {
    pub out: PathBuf,
    pub exec: Exec,
    /// Test fixture: negate the plain MLP's parameter gradient in grad-check.
    pub inject_sign_bug: bool,
}

pub struct RunResult {
    pub manifest: RunManifest,
    pub lines: Vec<String>,
    pub failure: Option<CliError>,
}

/// Validates `cfg`, runs it, writes `config.toml` and the manifest.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunResult, CliError> {
    cfg.validate()?;
    let out = &opts.out;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", out.display())))?;
    let started = Instant::now();
    let canon = canonical(cfg);
    let hash = config_hash(&canon);
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, canon.to_toml())?;

    let outcome = match cfg {
        ExperimentConfig::ValidateTheorem(c) => commands::validate_theorem(c, out, opts.exec),
        ExperimentConfig::OracleCheck(c) => commands::oracle_check(c, out),
        ExperimentConfig::ToyChain(c) => commands::toy_chain(c, out, &hash, opts.exec),
        ExperimentConfig::MsgTrain(c) => commands::msg_train(c, out, opts.exec),
        ExperimentConfig::GradCheck(c) => commands::grad_check_cmd(c, out, opts.inject_sign_bug),
    };
    let seconds = started.elapsed().as_secs_f64();
    let kind = cfg.kind().name();
    match outcome {
        Ok(rep) => {
            let mut files = rep.files;
            files.push(config_path);
            let manifest = RunManifest::build(kind, &hash, out, &files, seconds)?;
            manifest.write(out)?;
            Ok(RunResult { manifest, lines: rep.lines, failure: rep.failure })
        }
        Err(CliError::Partial { error, mut files }) => {
            files.push(config_path);
            RunManifest::build(kind, &hash, out, &files, seconds)?.write(out)?;
            Err(*error)
        }
        Err(e) => Err(e),
    }
}
