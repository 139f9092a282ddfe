//! q-calculus primitives: q-numbers, the q-derivative and Jackson integrals.
//!
//! All routines work on plain `f64` and take functions as closures. Infinite
//! sums are truncated by a [`TruncationPolicy`].

use serde::{Deserialize, Serialize};

use crate::error::{MadmError, Result};
use crate::series::Series;

/// The asymmetry parameter `γ ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QParam(f64);

impl QParam {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma < 1.0 {
            Ok(Self(gamma))
        } else {
            Err(MadmError::InvalidParameter(format!(
                "gamma must lie strictly inside (0, 1), got {gamma}"
            )))
        }
    }

    #[inline]
    pub fn gamma(self) -> f64 {
        self.0
    }

    /// `γ^k`.
    #[inline]
    pub fn pow(self, k: u64) -> f64 {
        pow_u64(self.0, k)
    }

    /// The q-number `[k]`.
    #[inline]
    pub fn number(self, k: u64) -> f64 {
        q_number(k, self)
    }
}

impl TryFrom<f64> for QParam {
    type Error = MadmError;

    fn try_from(gamma: f64) -> Result<Self> {
        Self::new(gamma)
    }
}

impl From<QParam> for f64 {
    fn from(q: QParam) -> f64 {
        q.0
    }
}

/// Tolerances and caps shared by every truncated series and grid.
///
/// A series stops once `|term| <= rel_tol * |partial_sum| + abs_tol` holds,
/// including for the geometric estimate of the remaining tail, and fails with
/// [`MadmError::NonConvergence`] after `max_terms` terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_terms: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            abs_tol: 1e-300,
            max_terms: 10_000,
        }
    }
}

impl TruncationPolicy {
    pub fn new(rel_tol: f64, abs_tol: f64, max_terms: usize) -> Result<Self> {
        let pol = Self {
            rel_tol,
            abs_tol,
            max_terms,
        };
        pol.validate()?;
        Ok(pol)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(MadmError::InvalidParameter(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol.is_finite() && self.abs_tol >= 0.0) {
            return Err(MadmError::InvalidParameter(format!(
                "abs_tol must be non-negative, got {}",
                self.abs_tol
            )));
        }
        if self.max_terms < 1 {
            return Err(MadmError::InvalidParameter(
                "max_terms must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `x^k` by binary exponentiation, stopping early once the result underflows.
pub(crate) fn pow_u64(x: f64, mut k: u64) -> f64 {
    let mut base = x;
    let mut acc = 1.0;
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
            if acc == 0.0 {
                return 0.0;
            }
        }
        k >>= 1;
        if k > 0 {
            base *= base;
        }
    }
    acc
}

/// The q-number `[k] = (1 - γ^k)/(1 - γ)`; saturates at `1/(1-γ)` once `γ^k`
/// underflows.
pub fn q_number(k: u64, q: QParam) -> f64 {
    let g = q.gamma();
    (1.0 - pow_u64(g, k)) / (1.0 - g)
}

/// The q-derivative `(G(γx) - G(x)) / (γx - x)`.
pub fn q_derivative<G>(g: G, x: f64, q: QParam) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    if x == 0.0 {
        return Err(MadmError::Domain(
            "q-derivative is undefined at x = 0".into(),
        ));
    }
    let gx = q.gamma() * x;
    Ok((g(gx) - g(x)) / (gx - x))
}

/// `∫_0^a g(t) d_γt = a(1-γ) Σ_n g(aγ^n) γ^n`.
pub fn jackson_integral_zero<G>(g: G, a: f64, q: QParam, pol: TruncationPolicy) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    try_jackson_integral_zero(|t| Ok(g(t)), a, q, pol)
}

/// Fallible-integrand form of [`jackson_integral_zero`].
pub fn try_jackson_integral_zero<G>(
    g: G,
    a: f64,
    q: QParam,
    pol: TruncationPolicy,
) -> Result<f64>
where
    G: Fn(f64) -> Result<f64>,
{
    if a == 0.0 {
        return Ok(0.0);
    }
    let gamma = q.gamma();
    let mut series = Series::new("jackson integral", pol, gamma);
    let mut weight = 1.0;
    loop {
        if series.push(g(a * weight)? * weight)? {
            break;
        }
        weight *= gamma;
    }
    Ok(a * (1.0 - gamma) * series.sum())
}

/// `∫_a^b g(t) d_γt = ∫_0^b - ∫_0^a`, summed as a single series over both grids.
pub fn jackson_integral<G>(g: G, a: f64, b: f64, q: QParam, pol: TruncationPolicy) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    try_jackson_integral(|t| Ok(g(t)), a, b, q, pol)
}

/// Fallible-integrand form of [`jackson_integral`].
pub fn try_jackson_integral<G>(
    g: G,
    a: f64,
    b: f64,
    q: QParam,
    pol: TruncationPolicy,
) -> Result<f64>
where
    G: Fn(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    if a == 0.0 {
        return try_jackson_integral_zero(g, b, q, pol);
    }
    if b == 0.0 {
        return Ok(-try_jackson_integral_zero(g, a, q, pol)?);
    }
    let gamma = q.gamma();
    let mut series = Series::new("jackson integral", pol, gamma);
    let mut weight = 1.0;
    loop {
        let (tb, ta) = (b * weight, a * weight);
        let term = b * g(tb)? * weight - a * g(ta)? * weight;
        if series.push(term)? {
            break;
        }
        weight *= gamma;
    }
    Ok((1.0 - gamma) * series.sum())
}

/// `φ_m(β) = Σ_{k>m} β^k/[k]`.
pub fn phi(m: u64, beta: f64, q: QParam, pol: TruncationPolicy) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(MadmError::InvalidParameter(format!(
            "phi requires beta in (0, 1), got {beta}"
        )));
    }
    let mut power = pow_u64(beta, m + 1);
    let mut series = Series::new("phi", pol, beta);
    let mut k = m + 1;
    loop {
        if series.push(power / q_number(k, q))? {
            return Ok(series.sum());
        }
        power *= beta;
        k += 1;
    }
}
