//! `madm`: exact stationary measure, simulation and verification of the
//! multiparticle asymmetric diffusion model from the command line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical
//! non-convergence, 3 verification failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use madm_core::MadmError;

use config::{FileConfig, ModelFlags};

#[derive(Debug, Parser)]
#[command(name = "madm", version, about = "Stationary measure, simulation and identity checks for the MADM")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Asymmetry parameter γ in (0, 1).
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Left reservoir density β_L in (0, 1).
    #[arg(long, global = true)]
    beta_l: Option<f64>,
    /// Right reservoir density β_R in (0, 1).
    #[arg(long, global = true)]
    beta_r: Option<f64>,
    /// Number of sites.
    #[arg(short = 'N', long = "n-sites", global = true)]
    n_sites: Option<usize>,
    /// Relative tolerance of every truncated series.
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    /// Absolute tolerance of every truncated series.
    #[arg(long, global = true)]
    abs_tol: Option<f64>,
    /// Term cap of every truncated series.
    #[arg(long, global = true)]
    max_terms: Option<usize>,
    /// JSON config file; flags take precedence over its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: machine parallelism). MADM_THREADS overrides this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Output format (default: from the output extension, else json for
    /// verify and csv otherwise).
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate μ(m) on the box m_i <= m_max, with per-site marginals.
    Exact {
        #[arg(long)]
        m_max: Option<u64>,
    },
    /// Gillespie simulation compared against the exact marginals.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        t_burn: Option<f64>,
        #[arg(long)]
        t_measure: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Batches per replica for the standard errors.
        #[arg(long)]
        batches: Option<usize>,
        /// Smallest exact bin probability entering the z-score summary.
        #[arg(long, default_value_t = 1e-3)]
        min_prob: f64,
    },
    /// Run the verification battery, or the named checks only.
    Verify {
        /// stationarity, master, interchange, ibp, appendixB or kernel; repeatable.
        #[arg(long = "check", value_parser = commands::parse_check)]
        checks: Vec<madm_core::verify::CheckKind>,
        /// Seed for the random λ vectors.
        #[arg(long)]
        seed: Option<u64>,
        /// Multiplies μ(0) by 1 + ε in the stationarity check.
        #[arg(long, hide = true, allow_hyphen_values = true)]
        perturb_mu: Option<f64>,
    },
    /// Compare β_L = β_R against the geometric product law.
    Equilibrium {
        /// Common reservoir density.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        m_max: Option<u64>,
        /// Largest accepted relative deviation.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) | CliError::Verification(m) => m,
        }
    }
}

impl From<MadmError> for CliError {
    fn from(e: MadmError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let file = match &g.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(n) = config::threads(g.threads, &file)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    let flags = ModelFlags {
        gamma: g.gamma,
        beta_l: g.beta_l,
        beta_r: g.beta_r,
        n_sites: g.n_sites,
        rel_tol: g.rel_tol,
        abs_tol: g.abs_tol,
        max_terms: g.max_terms,
    };
    let pol = config::policy(&flags, &file)?;
    let from_ext = g
        .output
        .as_ref()
        .and_then(|p| p.extension())
        .and_then(|e| match e.to_str() {
            Some("json") => Some(Format::Json),
            Some("csv") => Some(Format::Csv),
            _ => None,
        });
    let fallback = match cli.command {
        Command::Verify { .. } => Format::Json,
        _ => Format::Csv,
    };
    let out = commands::Output {
        path: g.output.clone(),
        format: g.format.or(from_ext).unwrap_or(fallback),
    };
    match cli.command {
        Command::Exact { m_max } => {
            let p = config::model_params(&flags, &file)?;
            let m_max = config::pick(m_max, file.m_max, 8);
            commands::exact(&p, pol, m_max, &out)
        }
        Command::Simulate {
            seed,
            t_burn,
            t_measure,
            replicas,
            batches,
            min_prob,
        } => {
            let p = config::model_params(&flags, &file)?;
            let mut cfg = madm_core::SimConfig::new(
                p,
                config::pick(seed, file.seed, config::DEFAULT_SEED),
                config::pick(t_burn, file.t_burn, 1e3),
                config::pick(t_measure, file.t_measure, 1e5),
                config::pick(replicas, file.replicas, 8),
            )?;
            cfg.batches = config::pick(batches, file.batches, cfg.batches);
            cfg.pol = pol;
            commands::simulate(&cfg, min_prob, &out)
        }
        Command::Verify {
            checks,
            seed,
            perturb_mu,
        } => {
            let p = config::model_params(&flags, &file)?;
            let mut cfg = madm_core::verify::BatteryConfig::new(p);
            cfg.seed = config::pick(seed, file.seed, config::DEFAULT_SEED);
            cfg.perturb_mu = perturb_mu;
            cfg.pol = pol;
            commands::verify(&cfg, &checks, &out)
        }
        Command::Equilibrium { beta, m_max, tol } => {
            if g.beta_l.is_some() || g.beta_r.is_some() {
                return Err(CliError::Usage(
                    "equilibrium takes --beta, not --beta-l/--beta-r".into(),
                ));
            }
            let p = madm_core::ModelParams::equilibrium(
                config::pick(g.gamma, file.gamma, config::DEFAULT_GAMMA),
                config::pick(beta, file.beta, 0.3),
                config::pick(g.n_sites, file.n_sites, config::DEFAULT_N_SITES),
            )?;
            commands::equilibrium(&p, pol, config::pick(m_max, file.m_max, 6), tol, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("madm: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
