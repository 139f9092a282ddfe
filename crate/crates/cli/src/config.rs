//! Parameter resolution: command-line flags, then a JSON config file, then
//! built-in defaults.

use std::path::Path;

use serde::Deserialize;

use madm_core::{ModelParams, TruncationPolicy};

use crate::CliError;

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_BETA_L: f64 = 0.2;
pub const DEFAULT_BETA_R: f64 = 0.4;
pub const DEFAULT_N_SITES: usize = 2;
pub const DEFAULT_SEED: u64 = 42;

/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub gamma: Option<f64>,
    pub beta_l: Option<f64>,
    pub beta_r: Option<f64>,
    pub beta: Option<f64>,
    pub n_sites: Option<usize>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_terms: Option<usize>,
    pub seed: Option<u64>,
    pub t_burn: Option<f64>,
    pub t_measure: Option<f64>,
    pub replicas: Option<usize>,
    pub batches: Option<usize>,
    pub m_max: Option<u64>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Model flags shared by every subcommand.
#[derive(Debug, Default, Clone, Copy)]
pub struct ModelFlags {
    pub gamma: Option<f64>,
    pub beta_l: Option<f64>,
    pub beta_r: Option<f64>,
    pub n_sites: Option<usize>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_terms: Option<usize>,
}

pub fn model_params(flags: &ModelFlags, file: &FileConfig) -> Result<ModelParams, CliError> {
    Ok(ModelParams::new(
        pick(flags.gamma, file.gamma, DEFAULT_GAMMA),
        pick(flags.beta_l, file.beta_l, DEFAULT_BETA_L),
        pick(flags.beta_r, file.beta_r, DEFAULT_BETA_R),
        pick(flags.n_sites, file.n_sites, DEFAULT_N_SITES),
    )?)
}

pub fn policy(flags: &ModelFlags, file: &FileConfig) -> Result<TruncationPolicy, CliError> {
    let d = TruncationPolicy::default();
    Ok(TruncationPolicy::new(
        pick(flags.rel_tol, file.rel_tol, d.rel_tol),
        pick(flags.abs_tol, file.abs_tol, d.abs_tol),
        pick(flags.max_terms, file.max_terms, d.max_terms),
    )?)
}

/// `MADM_THREADS` wins over `--threads`, which wins over the config file.
/// `None` means machine parallelism.
pub fn threads(flag: Option<usize>, file: &FileConfig) -> Result<Option<usize>, CliError> {
    let env = match std::env::var("MADM_THREADS") {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("MADM_THREADS must be a positive integer, got {v:?}")))?,
        ),
        _ => None,
    };
    let n = env.or(flag).or(file.threads);
    if n == Some(0) {
        return Err(CliError::Usage("thread count must be positive".into()));
    }
    Ok(n)
}
