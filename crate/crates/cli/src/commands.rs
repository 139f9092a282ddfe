//! The four workflows.

use std::path::PathBuf;

use rayon::prelude::*;
use serde_json::{json, Value};

use madm_core::model::{EventKind, MAX_TRUNCATED_STATES};
use madm_core::simulate::{self, SimConfig};
use madm_core::steady::{equilibrium_probability, equilibrium_unnormalized};
use madm_core::verify::{run_battery, BatteryConfig, CheckKind};
use madm_core::{ModelParams, SteadyStateEvaluator, TruncationPolicy};

use crate::output::{emit, params_json, real, sibling, to_json_text, Table};
use crate::{CliError, Format};

/// Target of the tail bound behind the recommended `m_max`.
pub const TAIL_TARGET: f64 = 1e-6;
/// The recommendation search gives up past this cutoff.
const MAX_RECOMMENDED: u64 = 100_000;

pub struct Output {
    pub path: Option<PathBuf>,
    pub format: Format,
}

pub fn parse_check(name: &str) -> Result<CheckKind, String> {
    CheckKind::parse(name).ok_or_else(|| {
        let names: Vec<&str> = CheckKind::ALL.iter().map(|c| c.name()).collect();
        format!("unknown check {name:?}; expected one of {}", names.join(", "))
    })
}

fn box_states(n: usize, m_max: u64) -> Result<Vec<Vec<u64>>, CliError> {
    let size = (m_max as u128 + 1).checked_pow(n as u32).unwrap_or(u128::MAX);
    if size > MAX_TRUNCATED_STATES {
        return Err(CliError::Usage(format!(
            "box with m_max={m_max} on {n} sites has {size} states (limit {MAX_TRUNCATED_STATES})"
        )));
    }
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u64>| {
                (0..=m_max).map(move |m| {
                    let mut v = p.clone();
                    v.push(m);
                    v
                })
            })
            .collect();
    }
    Ok(out)
}

/// `Σ_i P(m_i > m)`.
fn tail_bound(ev: &SteadyStateEvaluator, m: u64) -> Result<f64, CliError> {
    let mut s = 0.0;
    for site in 0..ev.params().n_sites {
        s += ev.tail(site, m + 1)?;
    }
    Ok(s)
}

/// Smallest `m_max` whose tail bound is at most [`TAIL_TARGET`].
fn recommended_m_max(ev: &SteadyStateEvaluator) -> Result<Option<u64>, CliError> {
    for m in 0..=MAX_RECOMMENDED {
        if tail_bound(ev, m)? <= TAIL_TARGET {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

pub fn exact(p: &ModelParams, pol: TruncationPolicy, m_max: u64, out: &Output) -> Result<(), CliError> {
    let ev = SteadyStateEvaluator::new(*p, pol)?;
    let states = box_states(p.n_sites, m_max)?;
    let mu = states
        .par_iter()
        .map(|m| ev.probability(m))
        .collect::<madm_core::Result<Vec<f64>>>()?;
    let mut marginals = Vec::new();
    for site in 0..p.n_sites {
        for m in 0..=m_max {
            marginals.push((site, m, ev.marginal(site, m)?));
        }
    }
    let means = (0..p.n_sites)
        .map(|s| ev.mean_occupation(s))
        .collect::<madm_core::Result<Vec<f64>>>()?;
    let coverage: f64 = mu.iter().sum();
    let bound = tail_bound(&ev, m_max)?;
    let recommended = recommended_m_max(&ev)?;

    match out.format {
        Format::Csv => {
            let mut joint = Table::new((1..=p.n_sites).map(|i| format!("m_{i}")).chain(["mu".into()]));
            for (m, v) in states.iter().zip(&mu) {
                joint.push(m.iter().map(u64::to_string).chain([real(*v)]).collect());
            }
            emit(out.path.as_deref(), &joint.to_csv())?;
            if let Some(path) = &out.path {
                let mut table = Table::new(["site", "m", "probability"]);
                for (site, m, v) in &marginals {
                    table.push(vec![(site + 1).to_string(), m.to_string(), real(*v)]);
                }
                emit(Some(&sibling(path, "marginals")), &table.to_csv())?;
            }
        }
        Format::Json => {
            let doc = json!({
                "params": params_json(p),
                "m_max": m_max,
                "joint": states.iter().zip(&mu).map(|(m, v)| json!({ "m": m, "mu": v })).collect::<Vec<_>>(),
                "marginals": marginals
                    .iter()
                    .map(|(site, m, v)| json!({ "site": site + 1, "m": m, "probability": v }))
                    .collect::<Vec<_>>(),
                "means": means,
                "coverage": coverage,
                "tail_bound": bound,
                "recommended_m_max": recommended,
            });
            emit(out.path.as_deref(), &to_json_text(&doc))?;
        }
    }
    eprintln!("coverage {}", real(coverage));
    eprintln!("tail bound {}", real(bound));
    match recommended {
        Some(m) => eprintln!("recommended m_max {m} (tail bound <= {TAIL_TARGET:e})"),
        None => eprintln!("recommended m_max > {MAX_RECOMMENDED}"),
    }
    for (i, m) in means.iter().enumerate() {
        eprintln!("mean m_{} {}", i + 1, real(*m));
    }
    Ok(())
}

pub fn simulate(cfg: &SimConfig, min_prob: f64, out: &Output) -> Result<(), CliError> {
    if !(min_prob > 0.0 && min_prob < 1.0) {
        return Err(CliError::Usage(format!("min-prob must lie in (0, 1), got {min_prob}")));
    }
    cfg.validate()?;
    let ev = SteadyStateEvaluator::new(cfg.params, cfg.pol)?;
    let stats = simulate::run(cfg)?;
    let compared = stats.compare_marginals(|site, m| ev.marginal(site, m), min_prob)?;
    let max_z = compared.iter().map(|c| c.z.abs()).fold(0.0, f64::max);

    let z_of = |site: usize, m: u64| compared.iter().find(|c| c.site == site && c.m == m).map(|c| c.z);
    let mut rows = Vec::new();
    for site in 0..stats.n_sites {
        let top = stats.histograms[site].len().saturating_sub(1) as u64;
        for m in 0..=top {
            rows.push((site, m, stats.marginal(site, m), stats.marginal_stderr(site, m), ev.marginal(site, m)?, z_of(site, m)));
        }
    }
    let events: serde_json::Map<String, Value> = EventKind::ALL
        .iter()
        .map(|k| (k.label().to_string(), json!(stats.event_counts[k.index()])))
        .collect();

    match out.format {
        Format::Csv => {
            let mut table = Table::new(["site", "m", "empirical", "stderr", "exact", "z"]);
            for (site, m, emp, se, ex, z) in &rows {
                table.push(vec![
                    (site + 1).to_string(),
                    m.to_string(),
                    real(*emp),
                    real(*se),
                    real(*ex),
                    z.map(real).unwrap_or_default(),
                ]);
            }
            emit(out.path.as_deref(), &table.to_csv())?;
        }
        Format::Json => {
            let doc = json!({
                "params": params_json(&cfg.params),
                "seed": cfg.seed,
                "t_burn": cfg.t_burn,
                "t_measure": cfg.t_measure,
                "replicas": cfg.replicas,
                "batches": cfg.batches,
                "total_time": stats.total_time,
                "event_counts": events,
                "means": stats.mean_occupation,
                "mean_stderr": stats.mean_stderr,
                "histogram": rows
                    .iter()
                    .map(|(site, m, emp, se, ex, z)| json!({
                        "site": site + 1, "m": m, "empirical": emp, "stderr": se, "exact": ex, "z": z,
                    }))
                    .collect::<Vec<_>>(),
                "min_prob": min_prob,
                "compared_bins": compared.len(),
                "max_abs_z": max_z,
            });
            emit(out.path.as_deref(), &to_json_text(&doc))?;
        }
    }
    eprintln!("replicas {} total time {}", stats.replicas, real(stats.total_time));
    eprintln!("events {}", stats.event_counts.iter().sum::<u64>());
    for site in 0..stats.n_sites {
        eprintln!(
            "mean m_{} {} +- {} (exact {})",
            site + 1,
            real(stats.mean_occupation[site]),
            real(stats.mean_stderr[site]),
            real(ev.mean_occupation(site)?)
        );
    }
    eprintln!("max |z| {} over {} bins with exact probability >= {min_prob:e}", real(max_z), compared.len());
    Ok(())
}

pub fn verify(cfg: &BatteryConfig, checks: &[CheckKind], out: &Output) -> Result<(), CliError> {
    let checks: Vec<CheckKind> = if checks.is_empty() {
        CheckKind::ALL.to_vec()
    } else {
        checks.to_vec()
    };
    let records = run_battery(cfg, &checks)?;
    let failed = records.iter().filter(|r| !r.passed).count();
    match out.format {
        Format::Json => {
            let doc = json!({
                "params": params_json(&cfg.params),
                "seed": cfg.seed,
                "checks": checks.iter().map(|c| c.name()).collect::<Vec<_>>(),
                "records": records,
                "total": records.len(),
                "failed": failed,
                "passed": failed == 0,
            });
            emit(out.path.as_deref(), &to_json_text(&doc))?;
        }
        Format::Csv => {
            let mut table = Table::new(["check", "label", "value", "scale", "relative", "tolerance", "passed"]);
            for r in &records {
                table.push(vec![
                    r.check.name().to_string(),
                    format!("\"{}\"", r.label.replace('"', "\"\"")),
                    real(r.value),
                    real(r.scale),
                    real(r.relative),
                    real(r.tolerance),
                    r.passed.to_string(),
                ]);
            }
            emit(out.path.as_deref(), &table.to_csv())?;
        }
    }
    for c in &checks {
        let of_kind: Vec<_> = records.iter().filter(|r| r.check == *c).collect();
        let bad = of_kind.iter().filter(|r| !r.passed).count();
        let worst = of_kind.iter().map(|r| r.relative).fold(0.0, f64::max);
        eprintln!(
            "{:<13} {:>4} records {:>4} failed  worst relative {}",
            c.name(),
            of_kind.len(),
            bad,
            real(worst)
        );
    }
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} of {} checks failed", records.len())));
    }
    Ok(())
}

pub fn equilibrium(p: &ModelParams, pol: TruncationPolicy, m_max: u64, tol: f64, out: &Output) -> Result<(), CliError> {
    let ev = SteadyStateEvaluator::new(*p, pol)?;
    let (g, b) = (p.gamma(), p.beta_l);
    let states = box_states(p.n_sites, m_max)?;
    let rel = |a: f64, e: f64| if a == e { 0.0 } else { (a - e).abs() / e.abs() };
    let devs = states
        .par_iter()
        .map(|m| -> madm_core::Result<(f64, f64)> {
            Ok((
                rel(ev.probability(m)?, equilibrium_probability(m, b)),
                rel(ev.unnormalized_recursive(m)?, equilibrium_unnormalized(m, g, b)),
            ))
        })
        .collect::<madm_core::Result<Vec<_>>>()?;
    let normalized = devs.iter().map(|d| d.0).fold(0.0, f64::max);
    let unnormalized = devs.iter().map(|d| d.1).fold(0.0, f64::max);
    let passed = normalized <= tol && unnormalized <= tol;
    let text = match out.format {
        Format::Csv => {
            let mut t = Table::new(["quantity", "max_relative_deviation", "tolerance", "passed"]);
            for (name, d) in [("normalized", normalized), ("unnormalized", unnormalized)] {
                t.push(vec![name.into(), real(d), real(tol), (d <= tol).to_string()]);
            }
            t.to_csv()
        }
        Format::Json => to_json_text(&json!({
            "params": params_json(p),
            "m_max": m_max,
            "states": states.len(),
            "normalized": normalized,
            "unnormalized": unnormalized,
            "tolerance": tol,
            "passed": passed,
        })),
    };
    emit(out.path.as_deref(), &text)?;
    eprintln!("max relative deviation {} over {} states", real(normalized.max(unnormalized)), states.len());
    if !passed {
        return Err(CliError::Verification(format!(
            "equilibrium law deviates by {} (tolerance {tol:e})",
            real(normalized.max(unnormalized))
        )));
    }
    Ok(())
}
