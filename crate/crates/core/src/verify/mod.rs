//! Numerical checks of the identities behind the exact stationary measure.
//!
//! Every check returns a [`Residual`]: the raw defect, the magnitude of the
//! largest quantity entering the cancellation, and their ratio.

mod appendix_b;
mod battery;

use serde::{Deserialize, Serialize};

use crate::error::{MadmError, Result};
use crate::model::{build_truncated_generator, total_exit_rate, Configuration, ModelParams};
use crate::qcalc::{phi, q_derivative, q_number, try_jackson_integral, QParam, TruncationPolicy};
use crate::series::Series;
use crate::steady::SteadyStateEvaluator;

pub use appendix_b::{n1_coefficient_cancellation, AppendixBReport};
pub use battery::{draw_lambdas, ibp_cases, interchange_cases, run_battery, BatteryConfig, CheckKind, VerificationRecord};

/// Defect of an exact cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub value: f64,
    pub scale: f64,
    pub relative: f64,
}

impl Residual {
    /// `relative = |value|/scale`; an exact zero against a zero scale is 0.
    pub fn new(value: f64, scale: f64) -> Self {
        let scale = scale.abs();
        let relative = if value == 0.0 {
            0.0
        } else if scale > 0.0 {
            value.abs() / scale
        } else {
            f64::INFINITY
        };
        Self {
            value,
            scale,
            relative,
        }
    }

    /// Passes when the relative defect is below `tol` against a nonzero scale.
    pub fn passes(&self, tol: f64) -> bool {
        self.scale > 0.0 && self.relative.is_finite() && self.relative < tol
    }
}

/// `λ_1, …, λ_N`, each strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaVector(Vec<f64>);

impl LambdaVector {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(MadmError::InvalidParameter("empty lambda vector".into()));
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(MadmError::InvalidParameter(format!(
                "lambda must lie in (0, 1), got {l}"
            )));
        }
        Ok(Self(lambdas))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `f_λ(t) = 1/((1-t)(1-λt))`.
pub fn f_lambda(lambda: f64, t: f64) -> f64 {
    1.0 / ((1.0 - t) * (1.0 - lambda * t))
}

/// `F_λ(t) = C + (1/(1-λ)) Σ_k t^k (1-λ^k)/[k]`, the q-antiderivative of `f_λ`.
pub fn big_f_lambda(
    lambda: f64,
    t: f64,
    constant: f64,
    q: QParam,
    pol: TruncationPolicy,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(constant);
    }
    let series = Series::new("F_lambda", pol, t.abs());
    let (mut tk, mut lk) = (1.0, 1.0);
    let sum = series.sum_from(1, |k| {
        tk *= t;
        lk *= lambda;
        Ok(tk * (1.0 - lk) / q_number(k, q))
    })?;
    Ok(constant + sum / (1.0 - lambda))
}

/// Smallest `|γ^n γβ_R - β_L|/β_L` over `n < N`. Nested integrals with these
/// limits vanish identically when it is 0.
pub fn degeneracy_gap(p: &ModelParams) -> f64 {
    (0..p.n_sites)
        .map(|n| (p.right_injection() * p.gamma().powi(n as i32) - p.beta_l).abs() / p.beta_l)
        .fold(f64::INFINITY, f64::min)
}

/// Stationarity defect at `m` for the exact stationary law.
pub fn stationarity_residual(m: &Configuration, p: &ModelParams, pol: TruncationPolicy) -> Result<Residual> {
    let ev = SteadyStateEvaluator::new(*p, pol)?;
    stationarity_residual_with(|c| ev.probability(c), m, p, pol)
}

/// Stationarity defect at `m` for an arbitrary measure `mu`:
/// exit rate times `μ(m)` minus the total inflow into `m`. The scale is the
/// outflow `total_exit_rate(m) μ(m)`.
pub fn stationarity_residual_with<F>(
    mu: F,
    m: &Configuration,
    p: &ModelParams,
    pol: TruncationPolicy,
) -> Result<Residual>
where
    F: Fn(&[u64]) -> Result<f64>,
{
    m.check(p)?;
    let occ = m.occupations();
    let n = p.n_sites;
    let outflow = total_exit_rate(m, p, pol)? * mu(occ)?;
    let mut shifted = occ.to_vec();
    let mut at = |edit: &dyn Fn(&mut [u64])| -> Result<f64> {
        shifted.copy_from_slice(occ);
        edit(&mut shifted);
        mu(&shifted)
    };

    let mut inflow = 0.0;
    // Extraction into the reservoirs: predecessors hold k more particles.
    for (site, left) in [(0usize, true), (n - 1, false)] {
        let series = Series::new("stationarity extraction inflow", pol, p.decay_ratio());
        inflow += series.sum_from(1, |k| {
            let rate = if left { p.q.pow(k) } else { 1.0 } / q_number(k, p.q);
            Ok(rate * at(&|s: &mut [u64]| s[site] += k)?)
        })?;
    }
    // Injections: predecessors hold k fewer particles.
    for (site, beta) in [(0usize, p.left_injection()), (n - 1, p.right_injection())] {
        for k in 1..=occ[site] {
            let rate = crate::qcalc::pow_u64(beta, k) / q_number(k, p.q);
            inflow += rate * at(&|s: &mut [u64]| s[site] -= k)?;
        }
    }
    // Bulk moves across each bond (j, j+1).
    for j in 0..n.saturating_sub(1) {
        for k in 1..=occ[j] {
            let rate = p.q.pow(k) / q_number(k, p.q);
            inflow += rate * at(&|s: &mut [u64]| {
                s[j] -= k;
                s[j + 1] += k;
            })?;
        }
        for k in 1..=occ[j + 1] {
            let rate = 1.0 / q_number(k, p.q);
            inflow += rate * at(&|s: &mut [u64]| {
                s[j] += k;
                s[j + 1] -= k;
            })?;
        }
    }
    Ok(Residual::new(outflow - inflow, outflow))
}

/// Per-`j` defects of the λ-projected master identity
/// `Σ_j (1-λ_j) ∫ 𝓓_γt^N Π f_{λ_ℓ}(t_ℓ) [F_{λ_j}(t_{j-1}) + F_{λ_j}(γt_{j+1}) - F_{λ_j}(t_j) - F_{λ_j}(γt_j)] = 0`
/// with `t_0 = β_L`, `t_{N+1} = β_R` and integration constant `constant`.
/// Each term splits into product-form nested integrals; the scale of a term
/// is the largest of them times `1-λ_j`.
pub fn master_identity_terms(
    lambda: &LambdaVector,
    p: &ModelParams,
    pol: TruncationPolicy,
    constant: f64,
) -> Result<Vec<Residual>> {
    let n = p.n_sites;
    if lambda.len() != n {
        return Err(MadmError::InvalidParameter(format!(
            "expected {n} lambdas, got {}",
            lambda.len()
        )));
    }
    let ev = SteadyStateEvaluator::new(*p, pol)?;
    let ls = lambda.as_slice();
    let gamma = p.gamma();
    let big_f = |l: f64, t: f64| big_f_lambda(l, t, constant, p.q, pol).unwrap_or(f64::NAN);
    let base: Vec<Box<dyn Fn(f64) -> f64 + '_>> = ls
        .iter()
        .map(|&l| Box::new(move |t| f_lambda(l, t)) as Box<dyn Fn(f64) -> f64>)
        .collect();
    let plain: f64 = {
        let refs: Vec<&dyn Fn(f64) -> f64> = base.iter().map(|b| b.as_ref()).collect();
        ev.nested_integral(&refs)?
    };
    // Nested integral with level `level` multiplied by `extra`.
    let with_factor = |level: usize, extra: &dyn Fn(f64) -> f64| -> Result<f64> {
        let modified = |t: f64| base[level](t) * extra(t);
        let refs: Vec<&dyn Fn(f64) -> f64> = (0..n)
            .map(|i| {
                if i == level {
                    &modified as &dyn Fn(f64) -> f64
                } else {
                    base[i].as_ref()
                }
            })
            .collect();
        ev.nested_integral(&refs)
    };

    let mut terms = Vec::with_capacity(n);
    for (j, &l) in ls.iter().enumerate() {
        let left = if j == 0 {
            big_f_lambda(l, p.beta_l, constant, p.q, pol)? * plain
        } else {
            with_factor(j - 1, &|t| big_f(l, t))?
        };
        let right = if j + 1 == n {
            big_f_lambda(l, gamma * p.beta_r, constant, p.q, pol)? * plain
        } else {
            with_factor(j + 1, &|t| big_f(l, gamma * t))?
        };
        let own = with_factor(j, &|t| big_f(l, t))?;
        let own_shifted = with_factor(j, &|t| big_f(l, gamma * t))?;
        let w = 1.0 - l;
        let value = w * (left + right - own - own_shifted);
        let scale = [left, right, own, own_shifted]
            .iter()
            .map(|v| (w * v).abs())
            .fold(0.0, f64::max);
        terms.push(Residual::new(value, scale));
    }
    Ok(terms)
}

/// The master identity summed over `j`, with `C = 0`.
pub fn master_identity_residual(
    lambda: &LambdaVector,
    p: &ModelParams,
    pol: TruncationPolicy,
) -> Result<Residual> {
    master_identity_residual_shifted(lambda, p, pol, 0.0)
}

/// The master identity summed over `j` with integration constant `constant`.
pub fn master_identity_residual_shifted(
    lambda: &LambdaVector,
    p: &ModelParams,
    pol: TruncationPolicy,
    constant: f64,
) -> Result<Residual> {
    let terms = master_identity_terms(lambda, p, pol, constant)?;
    let value = terms.iter().map(|r| r.value).sum();
    let scale = terms.iter().map(|r| r.scale).fold(0.0, f64::max);
    Ok(Residual::new(value, scale))
}

/// Both sides of the interchange identity for `∫_a^{γb} d_γt ∫_t^{γb} d_γs g(t, s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interchange {
    /// `∫_a^{γb} d_γt ∫_t^{γb} d_γs g(t, s)`.
    pub lhs: f64,
    /// `∫_a^{γb} d_γs ∫_a^s d_γt g(t, s)`.
    pub swapped: f64,
    /// `(1-γ) ∫_a^{γb} g(s, s) s d_γs`.
    pub correction: f64,
}

impl Interchange {
    pub fn residual(&self) -> Residual {
        let scale = self.lhs.abs().max(self.swapped.abs()).max(self.correction.abs());
        Residual::new(self.lhs - (self.swapped - self.correction), scale)
    }
}

/// `(1-γ) ∫_a^{γb} g(s, s) s d_γs`, the term by which swapping the order of
/// a nested Jackson integral differs from the continuum rule.
pub fn interchange_correction<G>(g: G, a: f64, b: f64, q: QParam, pol: TruncationPolicy) -> Result<f64>
where
    G: Fn(f64, f64) -> f64,
{
    let upper = q.gamma() * b;
    Ok((1.0 - q.gamma()) * try_jackson_integral(|s| Ok(g(s, s) * s), a, upper, q, pol)?)
}

/// Evaluates both orders of integration and the correction term.
pub fn interchange_terms<G>(g: G, a: f64, b: f64, q: QParam, pol: TruncationPolicy) -> Result<Interchange>
where
    G: Fn(f64, f64) -> f64,
{
    let upper = q.gamma() * b;
    let lhs = try_jackson_integral(
        |t| try_jackson_integral(|s| Ok(g(t, s)), t, upper, q, pol),
        a,
        upper,
        q,
        pol,
    )?;
    let swapped = try_jackson_integral(
        |s| try_jackson_integral(|t| Ok(g(t, s)), a, s, q, pol),
        a,
        upper,
        q,
        pol,
    )?;
    let correction = interchange_correction(&g, a, b, q, pol)?;
    Ok(Interchange {
        lhs,
        swapped,
        correction,
    })
}

pub fn interchange_residual<G>(g: G, a: f64, b: f64, q: QParam, pol: TruncationPolicy) -> Result<Residual>
where
    G: Fn(f64, f64) -> f64,
{
    Ok(interchange_terms(g, a, b, q, pol)?.residual())
}

/// `∫_a^b (G(t) + G(γt)) D_γG(t) d_γt - (G(b)^2 - G(a)^2)`.
pub fn ibp_residual<G>(g: G, a: f64, b: f64, q: QParam, pol: TruncationPolicy) -> Result<Residual>
where
    G: Fn(f64) -> f64,
{
    if a == b {
        return Ok(Residual::new(0.0, 0.0));
    }
    let gamma = q.gamma();
    let integral = try_jackson_integral(
        |t| Ok((g(t) + g(gamma * t)) * q_derivative(&g, t, q)?),
        a,
        b,
        q,
        pol,
    )?;
    let (gb, ga) = (g(b) * g(b), g(a) * g(a));
    let scale = integral.abs().max(gb.abs()).max(ga.abs());
    Ok(Residual::new(integral - (gb - ga), scale))
}

/// Exact law restricted to the box `m_i <= m_cap` against the truncated
/// master-equation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub m_cap: u64,
    /// `value = ||Q μ||_∞`, `scale = ||diag(Q) μ||_∞`.
    pub residual: Residual,
    /// `||Q μ||_1`.
    pub l1: f64,
    /// `Σ_i lost_i μ_i`: the mass flowing out of the box per unit time.
    pub leak_bound: f64,
}

impl KernelReport {
    /// `||Q μ||_∞ <= leak bound` up to rounding, and the `l1` norm matches
    /// the leak bound to `rel_tol`.
    pub fn explained_by_leak(&self, rel_tol: f64) -> bool {
        let slack = rel_tol * self.leak_bound.max(self.residual.scale);
        self.residual.value <= self.leak_bound + slack && (self.l1 - self.leak_bound).abs() <= slack
    }
}

/// For the exact `μ`, each entry of `Q μ` is minus the inflow from outside
/// the box, so `||Q μ||_∞ <= ||Q μ||_1 = Σ_i lost_i μ_i`.
pub fn kernel_check(p: &ModelParams, m_cap: u64, pol: TruncationPolicy) -> Result<KernelReport> {
    let gen = build_truncated_generator(p, m_cap, pol)?;
    let ev = SteadyStateEvaluator::new(*p, pol)?;
    let mu = (0..gen.n_states())
        .map(|i| ev.probability(&gen.state(i)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(kernel_report(&gen, &mu))
}

fn kernel_report(gen: &crate::model::TruncatedGenerator, mu: &[f64]) -> KernelReport {
    let r = gen.apply(mu);
    let value = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let l1 = r.iter().map(|x| x.abs()).sum();
    let scale = gen
        .diagonal
        .iter()
        .zip(mu)
        .map(|(d, x)| (d * x).abs())
        .fold(0.0, f64::max);
    let leak_bound = gen.lost.iter().zip(mu).map(|(l, x)| l * x).sum();
    KernelReport {
        m_cap: gen.m_cap,
        residual: Residual {
            value,
            scale,
            relative: if scale > 0.0 { value / scale } else { 0.0 },
        },
        l1,
        leak_bound,
    }
}

/// Kernel check for the equilibrium geometric product measure.
pub fn kernel_check_equilibrium(p: &ModelParams, m_cap: u64, pol: TruncationPolicy) -> Result<KernelReport> {
    if !p.is_equilibrium() {
        return Err(MadmError::InvalidParameter(
            "equilibrium kernel check needs beta_l == beta_r".into(),
        ));
    }
    let gen = build_truncated_generator(p, m_cap, pol)?;
    let mu: Vec<f64> = (0..gen.n_states())
        .map(|i| crate::steady::equilibrium_probability(&gen.state(i), p.beta_l))
        .collect();
    Ok(kernel_report(&gen, &mu))
}

/// `φ_0(β_L) + φ_0(γβ_R)`: the only exit rate of the empty lattice.
pub fn injection_rate(p: &ModelParams, pol: TruncationPolicy) -> Result<f64> {
    Ok(phi(0, p.left_injection(), p.q, pol)? + phi(0, p.right_injection(), p.q, pol)?)
}

#[cfg(test)]
mod tests;
