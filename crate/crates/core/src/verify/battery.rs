//! Deterministic verification battery producing one record per check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    degeneracy_gap, ibp_residual, interchange_residual, kernel_check, master_identity_residual,
    n1_coefficient_cancellation, stationarity_residual_with, LambdaVector, Residual,
};
use crate::error::{MadmError, Result};
use crate::model::{Configuration, ModelParams, MAX_TRUNCATED_STATES};
use crate::qcalc::{QParam, TruncationPolicy};
use crate::steady::SteadyStateEvaluator;

/// Families of checks, named as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CheckKind {
    #[serde(rename = "stationarity")]
    Stationarity,
    #[serde(rename = "master")]
    Master,
    #[serde(rename = "interchange")]
    Interchange,
    #[serde(rename = "ibp")]
    Ibp,
    #[serde(rename = "appendixB")]
    AppendixB,
    #[serde(rename = "kernel")]
    Kernel,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [
        CheckKind::Stationarity,
        CheckKind::Master,
        CheckKind::Interchange,
        CheckKind::Ibp,
        CheckKind::AppendixB,
        CheckKind::Kernel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Stationarity => "stationarity",
            CheckKind::Master => "master",
            CheckKind::Interchange => "interchange",
            CheckKind::Ibp => "ibp",
            CheckKind::AppendixB => "appendixB",
            CheckKind::Kernel => "kernel",
        }
    }

    pub fn parse(name: &str) -> Option<CheckKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn tolerance(self) -> f64 {
        match self {
            CheckKind::Stationarity | CheckKind::Master => 1e-8,
            CheckKind::Interchange => 1e-10,
            CheckKind::Ibp => 1e-11,
            CheckKind::AppendixB => 1e-12,
            // Kernel records carry their own leak-derived tolerance.
            CheckKind::Kernel => f64::NAN,
        }
    }
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub check: CheckKind,
    pub label: String,
    pub inputs: serde_json::Value,
    pub value: f64,
    pub scale: f64,
    pub relative: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerificationRecord {
    fn from_residual(check: CheckKind, label: String, inputs: serde_json::Value, r: Residual) -> Self {
        let tolerance = check.tolerance();
        Self {
            check,
            label,
            inputs,
            value: r.value,
            scale: r.scale,
            relative: r.relative,
            tolerance,
            passed: r.passes(tolerance),
        }
    }
}

/// What the battery runs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryConfig {
    /// The user's parameter set: stationarity, master and kernel checks.
    pub params: ModelParams,
    /// Extra parameter cells for the stationarity and master checks.
    pub cells: Vec<ModelParams>,
    pub stationarity_m_max: u64,
    pub lambdas_per_cell: usize,
    pub kernel_caps: Vec<u64>,
    pub appendix_m_max: usize,
    pub appendix_p_max: usize,
    /// Seed for the λ draws.
    pub seed: u64,
    /// Multiplies `μ(0)` by `1 + ε` in the stationarity check (detector test).
    pub perturb_mu: Option<f64>,
    pub pol: TruncationPolicy,
}

impl BatteryConfig {
    /// The standard grid: `γ ∈ {0.3, 0.6, 0.9}`,
    /// `(β_L, β_R) ∈ {(0.2, 0.4), (0.5, 0.5), (0.7, 0.3)}`, `N ∈ {1, 2, 3}`.
    pub fn standard_cells() -> Vec<ModelParams> {
        let mut cells = Vec::new();
        for n in 1..=3 {
            for gamma in [0.3, 0.6, 0.9] {
                for (bl, br) in [(0.2, 0.4), (0.5, 0.5), (0.7, 0.3)] {
                    cells.push(ModelParams::new(gamma, bl, br, n).expect("valid grid cell"));
                }
            }
        }
        cells
    }

    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            cells: Self::standard_cells(),
            stationarity_m_max: 3,
            lambdas_per_cell: 20,
            kernel_caps: vec![2, 4, 6, 8],
            appendix_m_max: 3,
            appendix_p_max: 12,
            seed: 42,
            perturb_mu: None,
            pol: TruncationPolicy::default(),
        }
    }
}

fn params_json(p: &ModelParams) -> serde_json::Value {
    json!({ "gamma": p.gamma(), "beta_l": p.beta_l, "beta_r": p.beta_r, "n_sites": p.n_sites })
}

/// Every configuration with entries `<= m_max`, `m_1` most significant.
pub(crate) fn box_states(n_sites: usize, m_max: u64) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::with_capacity(n_sites)];
    for _ in 0..n_sites {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..=m_max).map(move |m| {
                    let mut v = prefix.clone();
                    v.push(m);
                    v
                })
            })
            .collect();
    }
    out
}

fn dedup_cells(cfg: &BatteryConfig) -> Vec<ModelParams> {
    let mut cells = vec![cfg.params];
    for c in &cfg.cells {
        if !cells.contains(c) {
            cells.push(*c);
        }
    }
    cells
}

fn stationarity_records(cfg: &BatteryConfig) -> Result<Vec<VerificationRecord>> {
    let cells = dedup_cells(cfg);
    let per_cell: Vec<Result<Vec<VerificationRecord>>> = cells
        .par_iter()
        .map(|p| {
            let ev = SteadyStateEvaluator::new(*p, cfg.pol)?;
            let zero = vec![0u64; p.n_sites];
            let eps = cfg.perturb_mu.unwrap_or(0.0);
            let mu = |m: &[u64]| -> Result<f64> {
                let v = ev.probability(m)?;
                Ok(if m == zero.as_slice() { v * (1.0 + eps) } else { v })
            };
            box_states(p.n_sites, cfg.stationarity_m_max)
                .into_iter()
                .map(|m| {
                    let c = Configuration::new(m.clone());
                    let r = stationarity_residual_with(mu, &c, p, cfg.pol)?;
                    let mut inputs = params_json(p);
                    inputs["m"] = json!(m);
                    Ok(VerificationRecord::from_residual(
                        CheckKind::Stationarity,
                        format!("stationarity {c}"),
                        inputs,
                        r,
                    ))
                })
                .collect()
        })
        .collect();
    flatten(per_cell)
}

/// `λ_i` drawn uniformly from `[0.05, 0.95)`; cell `i` uses the stream
/// seeded with `seed + i`.
pub fn draw_lambdas(seed: u64, cell: usize, count: usize, n_sites: usize) -> Vec<LambdaVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(cell as u64));
    (0..count)
        .map(|_| {
            let v = (0..n_sites).map(|_| rng.random_range(0.05..0.95)).collect();
            LambdaVector::new(v).expect("lambdas inside (0, 1)")
        })
        .collect()
}

fn master_records(cfg: &BatteryConfig) -> Result<Vec<VerificationRecord>> {
    // Degenerate limits make every nested integral vanish identically.
    let cells: Vec<ModelParams> = dedup_cells(cfg)
        .into_iter()
        .filter(|p| degeneracy_gap(p) > 1e-6)
        .collect();
    let tasks: Vec<(usize, ModelParams, LambdaVector)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            draw_lambdas(cfg.seed, i, cfg.lambdas_per_cell, p.n_sites)
                .into_iter()
                .map(move |l| (i, *p, l))
        })
        .collect();
    let records: Vec<Result<Vec<VerificationRecord>>> = tasks
        .par_iter()
        .map(|(_, p, l)| {
            let r = master_identity_residual(l, p, cfg.pol)?;
            let mut inputs = params_json(p);
            inputs["lambda"] = json!(l.as_slice());
            Ok(vec![VerificationRecord::from_residual(
                CheckKind::Master,
                format!("master N={} gamma={}", p.n_sites, p.gamma()),
                inputs,
                r,
            )])
        })
        .collect();
    flatten(records)
}

type Integrand2 = fn(f64, f64) -> f64;
type Integrand1 = fn(f64) -> f64;

/// `(label, g, a, b, γ)`.
pub fn interchange_cases() -> Vec<(&'static str, Integrand2, f64, f64, f64)> {
    vec![
        ("1", |_, _| 1.0, 0.1, 0.6, 0.5),
        ("t*s", |t, s| t * s, 0.2, 0.9, 0.5),
        ("t^2+s", |t, s| t * t + s, 0.1, 0.8, 0.3),
        ("1/((1-t)(1-s))", |t, s| 1.0 / ((1.0 - t) * (1.0 - s)), 0.2, 0.9, 0.6),
        ("exp(t-s)", |t, s| (t - s).exp(), 0.05, 0.7, 0.7),
        ("t^3*s^2", |t, s| t.powi(3) * s * s, 0.3, 0.95, 0.8),
        ("sin(t)*cos(s)", |t, s| t.sin() * s.cos(), 0.15, 0.6, 0.4),
        ("1/(1+t+s)", |t, s| 1.0 / (1.0 + t + s), 0.5, 0.9, 0.9),
        ("t/(1-s)", |t, s| t / (1.0 - s), 0.3, 0.5, 0.2),
        ("(t-s)^2", |t, s| (t - s) * (t - s), 0.1, 0.85, 0.75),
    ]
}

/// `(label, G, a, b, γ)`.
pub fn ibp_cases() -> Vec<(&'static str, Integrand1, f64, f64, f64)> {
    vec![
        ("t", |t| t, 0.2, 0.7, 0.5),
        ("1/(1-t)", |t| 1.0 / (1.0 - t), 0.1, 0.5, 0.5),
        ("t^2", |t| t * t, 0.05, 0.9, 0.3),
        ("exp(t)", f64::exp, 0.2, 0.8, 0.6),
        ("sin(t)", f64::sin, 0.1, 0.95, 0.9),
        ("1/(1-t)^2", |t| 1.0 / ((1.0 - t) * (1.0 - t)), 0.3, 0.6, 0.7),
        ("t^5-t", |t| t.powi(5) - t, 0.25, 0.75, 0.4),
        ("ln(1+t)", f64::ln_1p, 0.1, 0.6, 0.8),
        ("t/(1+t^2)", |t| t / (1.0 + t * t), 0.4, 0.9, 0.2),
        ("cosh(t)", f64::cosh, 0.15, 0.55, 0.65),
    ]
}

fn interchange_records(cfg: &BatteryConfig) -> Result<Vec<VerificationRecord>> {
    interchange_cases()
        .into_par_iter()
        .map(|(label, g, a, b, gamma)| {
            let q = QParam::new(gamma)?;
            let r = interchange_residual(g, a, b, q, cfg.pol)?;
            Ok(VerificationRecord::from_residual(
                CheckKind::Interchange,
                format!("interchange g={label}"),
                json!({ "g": label, "a": a, "b": b, "gamma": gamma }),
                r,
            ))
        })
        .collect()
}

fn ibp_records(cfg: &BatteryConfig) -> Result<Vec<VerificationRecord>> {
    ibp_cases()
        .into_par_iter()
        .map(|(label, g, a, b, gamma)| {
            let q = QParam::new(gamma)?;
            let r = ibp_residual(g, a, b, q, cfg.pol)?;
            Ok(VerificationRecord::from_residual(
                CheckKind::Ibp,
                format!("ibp G={label}"),
                json!({ "G": label, "a": a, "b": b, "gamma": gamma }),
                r,
            ))
        })
        .collect()
}

fn appendix_records(cfg: &BatteryConfig) -> Result<Vec<VerificationRecord>> {
    let mut gammas = vec![cfg.params.gamma()];
    for g in [0.3, 0.6, 0.9] {
        if !gammas.contains(&g) {
            gammas.push(g);
        }
    }
    gammas
        .into_iter()
        .map(|gamma| {
            let report = n1_coefficient_cancellation(cfg.appendix_m_max, cfg.appendix_p_max, QParam::new(gamma)?);
            let tol = CheckKind::AppendixB.tolerance();
            let worst = report.max();
            Ok(VerificationRecord {
                check: CheckKind::AppendixB,
                label: format!("appendixB gamma={gamma}"),
                inputs: json!({
                    "gamma": gamma,
                    "m_max": cfg.appendix_m_max,
                    "p_max": cfg.appendix_p_max,
                    "families": report,
                }),
                value: worst,
                scale: 1.0,
                relative: worst,
                tolerance: tol,
                passed: worst < tol,
            })
        })
        .collect()
}

fn kernel_records(cfg: &BatteryConfig) -> Result<Vec<VerificationRecord>> {
    let p = cfg.params;
    let caps: Vec<u64> = cfg
        .kernel_caps
        .iter()
        .copied()
        .filter(|&c| (c as u128 + 1).checked_pow(p.n_sites as u32).is_some_and(|s| s <= MAX_TRUNCATED_STATES))
        .collect();
    let reports = caps
        .par_iter()
        .map(|&c| kernel_check(&p, c, cfg.pol))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(reports.len());
    for (i, r) in reports.iter().enumerate() {
        let decreasing = i == 0 || r.residual.value < reports[i - 1].residual.value;
        let tolerance = if r.residual.scale > 0.0 {
            r.leak_bound / r.residual.scale
        } else {
            0.0
        };
        let mut inputs = params_json(&p);
        inputs["m_cap"] = json!(r.m_cap);
        inputs["leak_bound"] = json!(r.leak_bound);
        inputs["l1"] = json!(r.l1);
        out.push(VerificationRecord {
            check: CheckKind::Kernel,
            label: format!("kernel m_cap={}", r.m_cap),
            inputs,
            value: r.residual.value,
            scale: r.residual.scale,
            relative: r.residual.relative,
            tolerance,
            passed: decreasing && r.explained_by_leak(1e-9),
        });
    }
    Ok(out)
}

fn flatten(parts: Vec<Result<Vec<VerificationRecord>>>) -> Result<Vec<VerificationRecord>> {
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Runs the selected checks in the order given, each internally in
/// parallel; record order is deterministic.
pub fn run_battery(cfg: &BatteryConfig, checks: &[CheckKind]) -> Result<Vec<VerificationRecord>> {
    cfg.params.validate()?;
    cfg.pol.validate()?;
    if let Some(eps) = cfg.perturb_mu {
        if !eps.is_finite() {
            return Err(MadmError::InvalidParameter("perturbation must be finite".into()));
        }
    }
    let mut out = Vec::new();
    for &check in checks {
        out.extend(match check {
            CheckKind::Stationarity => stationarity_records(cfg)?,
            CheckKind::Master => master_records(cfg)?,
            CheckKind::Interchange => interchange_records(cfg)?,
            CheckKind::Ibp => ibp_records(cfg)?,
            CheckKind::AppendixB => appendix_records(cfg)?,
            CheckKind::Kernel => kernel_records(cfg)?,
        });
    }
    Ok(out)
}
