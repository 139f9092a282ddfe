//! Exact stationary measure.
//!
//! Two independent routes evaluate the unnormalized weight
//! `μ̃(m) = ∫ 𝓓_γt^N Π t_i^{m_i}/(1-t_i)`:
//!
//! * [`grid`]: the nested Jackson integral summed directly on its geometric grids;
//! * the site-peeling recursion `μ̃_N(…, m_N) = μ̃_{N-1}(…) φ_{m_N}(γβ_R) - Σ_{k>m_N} μ̃_{N-1}(…, m_{N-1}+k)/[k]`.
//!
//! The recursion is linear in its one-site base sequence `(U^j - L^j)/[j]`
//! (`U = γβ_R`, `L = β_L`), so `μ̃ = F(U) - F(L)` for a power series `F`
//! fixed by the configuration. The nested integral vanishes identically when
//! `L = Uγ^n` with `n < N` (only `n` ordered grid points lie above `L`), so
//! `F(Uγ^n) = F(U)` and `μ̃` carries the factor `P(L) = Π_{n<N} (Uγ^n - L)`.
//! [`SteadyStateEvaluator`] works with the reduced weight `ν = μ̃/P(L)`,
//! an `N`-th divided difference of `F` obtained by running the same recursion
//! on the base `(-1)^{N+1} h_{j-N}(U, Uγ, …, Uγ^{N-1}, L)/[j]`, where `h_r`
//! is the complete homogeneous polynomial (a sum of positive terms). `ν` is
//! finite and smooth through every degenerate point, in particular
//! `β_L = γβ_R`. Normalized probabilities are `ν/Σν`.
//!
//! Normalization and marginals use the same recursion with a per-site weight
//! [`SiteWeight`]: summing `t^m/(1-t)` over `m >= M` gives `t^M/(1-t)^2`.

pub mod grid;

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use crate::error::{MadmError, Result};
use crate::model::ModelParams;
use crate::qcalc::{phi, pow_u64, q_number, TruncationPolicy};
use crate::series::Series;

pub use grid::{nested_integral, DEFAULT_GRID_CAP};

/// Integrand factor attached to one site of the nested integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SiteWeight {
    /// `t^m/(1-t)`: the site holds exactly `m` particles.
    Point(u64),
    /// `t^M/(1-t)^2`: the site holds at least `M` particles.
    Tail(u64),
}

impl SiteWeight {
    /// All occupations of the site.
    pub const ANY: SiteWeight = SiteWeight::Tail(0);

    pub fn eval(self, t: f64) -> f64 {
        match self {
            SiteWeight::Point(m) => pow_u64(t, m) / (1.0 - t),
            SiteWeight::Tail(m) => pow_u64(t, m) / ((1.0 - t) * (1.0 - t)),
        }
    }

    fn index(self) -> u64 {
        match self {
            SiteWeight::Point(m) | SiteWeight::Tail(m) => m,
        }
    }

    /// Multiplies the weight by `t^j`.
    fn shift(self, j: u64) -> SiteWeight {
        match self {
            SiteWeight::Point(m) => SiteWeight::Point(m + j),
            SiteWeight::Tail(m) => SiteWeight::Tail(m + j),
        }
    }

    /// Coefficient `c_j` in `∫_x^U w(t) d_γt = Σ_{j > index} c_j (U^j - x^j)/[j]`.
    fn coefficient(self, j: u64) -> f64 {
        match self {
            SiteWeight::Point(_) => 1.0,
            SiteWeight::Tail(m) => (j - m) as f64,
        }
    }
}

/// Complete homogeneous symmetric polynomials `h_r(x_0, …, x_n)` for
/// `r = 0..=max_degree`, by `h_r(X ∪ {y}) = h_r(X) + y h_{r-1}(X ∪ {y})`.
pub fn complete_homogeneous(vars: &[f64], max_degree: usize) -> Vec<f64> {
    let mut h = vec![0.0; max_degree + 1];
    h[0] = 1.0;
    let mut first = true;
    for &y in vars {
        if first {
            for r in 1..=max_degree {
                h[r] = h[r - 1] * y;
            }
            first = false;
            continue;
        }
        for r in 1..=max_degree {
            h[r] += y * h[r - 1];
        }
    }
    if first {
        h.truncate(1);
        h.resize(max_degree + 1, 0.0);
    }
    h
}

/// Lazily grown table of the reduced base sequence.
#[derive(Debug)]
struct ReducedBase {
    nodes: Vec<f64>,
    sign: f64,
    shift: u64,
    h: RwLock<Vec<f64>>,
}

impl ReducedBase {
    fn new(upper: f64, lower: f64, gamma: f64, n_sites: usize) -> Self {
        let mut nodes: Vec<f64> = (0..n_sites).map(|n| upper * gamma.powi(n as i32)).collect();
        nodes.push(lower);
        Self {
            nodes,
            sign: if n_sites % 2 == 1 { 1.0 } else { -1.0 },
            shift: n_sites as u64,
            h: RwLock::new(Vec::new()),
        }
    }

    /// `(-1)^{N+1} h_{j-N}(U, Uγ, …, Uγ^{N-1}, L)`, zero for `j < N`.
    fn numerator(&self, j: u64) -> f64 {
        if j < self.shift {
            return 0.0;
        }
        let r = (j - self.shift) as usize;
        {
            let h = self.h.read().unwrap_or_else(|e| e.into_inner());
            if r < h.len() {
                return self.sign * h[r];
            }
        }
        let mut h = self.h.write().unwrap_or_else(|e| e.into_inner());
        if r >= h.len() {
            let len = (r + 1).max(2 * h.len()).max(256);
            *h = complete_homogeneous(&self.nodes, len - 1);
        }
        self.sign * h[r]
    }
}

type LevelMemo = HashMap<Vec<SiteWeight>, HashMap<SiteWeight, f64>>;

/// Stationary-measure evaluator for one parameter set.
///
/// Holds a memo of reduced weights keyed by `(prefix, last site weight)`:
/// the recursion only ever shifts the last coordinate of a fixed prefix.
/// The memo is behind a `RwLock`, so one evaluator can be shared across
/// threads.
#[derive(Debug)]
pub struct SteadyStateEvaluator {
    params: ModelParams,
    pol: TruncationPolicy,
    grid_cap: usize,
    base: ReducedBase,
    memo: RwLock<LevelMemo>,
    reduced_norm: OnceLock<f64>,
}

impl SteadyStateEvaluator {
    pub fn new(params: ModelParams, pol: TruncationPolicy) -> Result<Self> {
        params.validate()?;
        pol.validate()?;
        Ok(Self {
            params,
            pol,
            grid_cap: DEFAULT_GRID_CAP,
            base: ReducedBase::new(
                params.right_injection(),
                params.beta_l,
                params.gamma(),
                params.n_sites,
            ),
            memo: RwLock::new(HashMap::new()),
            reduced_norm: OnceLock::new(),
        })
    }

    /// Caps the number of grid points per level in the grid route.
    pub fn with_grid_cap(mut self, cap: usize) -> Self {
        self.grid_cap = cap.max(1);
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn policy(&self) -> TruncationPolicy {
        self.pol
    }

    /// `P(L) = Π_{n<N} (γ^n γβ_R - β_L)`, the factor between `μ̃` and the
    /// reduced weight `ν`.
    pub fn reduction_factor(&self) -> f64 {
        let p = &self.params;
        (0..p.n_sites)
            .map(|n| p.right_injection() * p.gamma().powi(n as i32) - p.beta_l)
            .product()
    }

    fn check(&self, m: &[u64]) -> Result<()> {
        if m.len() != self.params.n_sites {
            return Err(MadmError::InvalidParameter(format!(
                "configuration has {} sites, the lattice has {}",
                m.len(),
                self.params.n_sites
            )));
        }
        Ok(())
    }

    /// `Σ_{k>m} ((γβ_R)^k - β_L^k)/[k]`, the unnormalized one-site weight.
    pub fn n1_sum(&self, m: u64) -> Result<f64> {
        let p = &self.params;
        let (u, l) = (p.right_injection(), p.beta_l);
        let (mut pu, mut pl) = (pow_u64(u, m + 1), pow_u64(l, m + 1));
        let mut series = Series::new("one-site weight", self.pol, p.decay_ratio());
        let mut k = m + 1;
        loop {
            if series.push((pu - pl) / q_number(k, p.q))? {
                return Ok(series.sum());
            }
            pu *= u;
            pl *= l;
            k += 1;
        }
    }

    /// Reduced one-site weight `Σ_{j>idx} c_j b_j` on the reduced base.
    fn reduced_base(&self, w: SiteWeight) -> Result<f64> {
        let p = &self.params;
        // Terms vanish below j = N; start the series where they do not.
        let start = (w.index() + 1).max(p.n_sites as u64);
        let series = Series::new("reduced one-site weight", self.pol, p.decay_ratio());
        series.sum_from(start, |j| {
            Ok(w.coefficient(j) * self.base.numerator(j) / q_number(j, p.q))
        })
    }

    /// `Σ_{j>idx} c_j U^j/[j]`.
    fn upper_antiderivative(&self, w: SiteWeight) -> Result<f64> {
        let p = &self.params;
        let u = p.right_injection();
        match w {
            SiteWeight::Point(m) => phi(m, u, p.q, self.pol),
            SiteWeight::Tail(m) => {
                let mut power = pow_u64(u, m + 1);
                let mut series = Series::new("tail antiderivative", self.pol, u);
                let mut j = m + 1;
                loop {
                    if series.push(w.coefficient(j) * power / q_number(j, p.q))? {
                        return Ok(series.sum());
                    }
                    power *= u;
                    j += 1;
                }
            }
        }
    }

    fn lookup(&self, prefix: &[SiteWeight], last: SiteWeight) -> Option<f64> {
        let memo = self.memo.read().unwrap_or_else(|e| e.into_inner());
        memo.get(prefix).and_then(|m| m.get(&last)).copied()
    }

    fn store(&self, prefix: &[SiteWeight], last: SiteWeight, value: f64) {
        let mut memo = self.memo.write().unwrap_or_else(|e| e.into_inner());
        memo.entry(prefix.to_vec()).or_default().insert(last, value);
    }

    fn reduced_rec(&self, prefix: &[SiteWeight], last: SiteWeight) -> Result<f64> {
        if let Some(v) = self.lookup(prefix, last) {
            return Ok(v);
        }
        let value = match prefix.split_last() {
            None => self.reduced_base(last)?,
            Some((&prev, rest)) => {
                let head = self.reduced_rec(rest, prev)? * self.upper_antiderivative(last)?;
                let p = &self.params;
                let mut series = Series::new("site recursion", self.pol, p.decay_ratio());
                let mut j = last.index() + 1;
                loop {
                    let inner = self.reduced_rec(rest, prev.shift(j))?;
                    if series.push(last.coefficient(j) * inner / q_number(j, p.q))? {
                        break;
                    }
                    j += 1;
                }
                head - series.sum()
            }
        };
        self.store(prefix, last, value);
        Ok(value)
    }

    /// Reduced weight `ν = ∫ 𝓓_γt^N Π w_i(t_i) / P(L)` by the site-peeling
    /// recursion; see [`Self::reduction_factor`].
    pub fn reduced_weight(&self, weights: &[SiteWeight]) -> Result<f64> {
        if weights.len() != self.params.n_sites {
            return Err(MadmError::InvalidParameter(format!(
                "expected {} site weights, got {}",
                self.params.n_sites,
                weights.len()
            )));
        }
        let (last, prefix) = weights.split_last().expect("at least one site");
        self.reduced_rec(prefix, *last)
    }

    fn points(m: &[u64]) -> Vec<SiteWeight> {
        m.iter().map(|&k| SiteWeight::Point(k)).collect()
    }

    /// Unnormalized weight `μ̃(m)` by the site-peeling recursion.
    pub fn unnormalized_recursive(&self, m: &[u64]) -> Result<f64> {
        self.check(m)?;
        Ok(self.reduction_factor() * self.reduced_weight(&Self::points(m))?)
    }

    /// Unnormalized weight `μ̃(m)` by direct nested Jackson summation.
    pub fn unnormalized_grid(&self, m: &[u64]) -> Result<f64> {
        self.check(m)?;
        self.nested(&Self::points(m))
    }

    /// Grid-route nested integral of arbitrary site weights.
    pub fn nested(&self, weights: &[SiteWeight]) -> Result<f64> {
        let closures: Vec<Box<dyn Fn(f64) -> f64>> = weights
            .iter()
            .map(|&w| Box::new(move |t| w.eval(t)) as Box<dyn Fn(f64) -> f64>)
            .collect();
        let refs: Vec<&dyn Fn(f64) -> f64> = closures.iter().map(|b| b.as_ref()).collect();
        self.nested_integral(&refs)
    }

    /// Grid-route nested integral of arbitrary closures, one per site.
    pub fn nested_integral(&self, weights: &[&dyn Fn(f64) -> f64]) -> Result<f64> {
        let p = &self.params;
        nested_integral(weights, p.beta_l, p.right_injection(), p.q, self.pol, self.grid_cap)
    }

    /// `Σ_m ν(m)`, cached.
    pub fn reduced_normalization(&self) -> Result<f64> {
        if let Some(v) = self.reduced_norm.get() {
            return Ok(*v);
        }
        let v = self.reduced_weight(&vec![SiteWeight::ANY; self.params.n_sites])?;
        Ok(*self.reduced_norm.get_or_init(|| v))
    }

    /// `c_N = ∫ 𝓓_γt^N Π 1/(1-t_i)^2`.
    ///
    /// For `N >= 2` this is the grid route. For `N = 1` it is the equivalent
    /// series `Σ_k k((γβ_R)^k - β_L^k)/[k]`, which converges at rate
    /// `max(γβ_R, β_L)` instead of `γ`.
    pub fn normalization(&self) -> Result<f64> {
        if self.params.n_sites == 1 {
            let p = &self.params;
            let (u, l) = (p.right_injection(), p.beta_l);
            let mut series = Series::new("one-site normalization", self.pol, p.decay_ratio());
            let (mut pu, mut pl) = (u, l);
            let mut k = 1u64;
            loop {
                if series.push(k as f64 * (pu - pl) / q_number(k, p.q))? {
                    return Ok(series.sum());
                }
                pu *= u;
                pl *= l;
                k += 1;
            }
        }
        self.nested(&vec![SiteWeight::ANY; self.params.n_sites])
    }

    /// Normalized stationary probability `μ(m)`.
    pub fn probability(&self, m: &[u64]) -> Result<f64> {
        self.check(m)?;
        Ok(self.reduced_weight(&Self::points(m))? / self.reduced_normalization()?)
    }

    fn site_weights(&self, site: usize, w: SiteWeight) -> Result<Vec<SiteWeight>> {
        if site >= self.params.n_sites {
            return Err(MadmError::InvalidParameter(format!(
                "site {site} out of range for {} sites",
                self.params.n_sites
            )));
        }
        let mut weights = vec![SiteWeight::ANY; self.params.n_sites];
        weights[site] = w;
        Ok(weights)
    }

    /// `P(m_site = m)` (sites indexed from 0).
    pub fn marginal(&self, site: usize, m: u64) -> Result<f64> {
        let weights = self.site_weights(site, SiteWeight::Point(m))?;
        Ok(self.reduced_weight(&weights)? / self.reduced_normalization()?)
    }

    /// `P(m_site >= m)`.
    pub fn tail(&self, site: usize, m: u64) -> Result<f64> {
        let weights = self.site_weights(site, SiteWeight::Tail(m))?;
        Ok(self.reduced_weight(&weights)? / self.reduced_normalization()?)
    }

    /// `E[m_site] = Σ_{M>=1} P(m_site >= M)`.
    pub fn mean_occupation(&self, site: usize) -> Result<f64> {
        let series = Series::new("mean occupation", self.pol, self.params.decay_ratio());
        series.sum_from(1, |big_m| self.tail(site, big_m))
    }

    /// `P(m_site = m)` from the grid route, `∫ (t^m/(1-t)) Π_{i≠site} 1/(1-t_i)^2 / c_N`.
    /// Undefined where `β_L = γ^n γβ_R` with `n < N`: both integrals vanish.
    pub fn marginal_grid(&self, site: usize, m: u64) -> Result<f64> {
        let weights = self.site_weights(site, SiteWeight::Point(m))?;
        Ok(self.nested(&weights)? / self.normalization()?)
    }
}

/// `Σ_{k>m} ((γβ_R)^k - β_L^k)/[k]` for a one-site lattice.
pub fn steady_n1_sum(m: u64, p: &ModelParams, pol: TruncationPolicy) -> Result<f64> {
    if p.n_sites != 1 {
        return Err(MadmError::InvalidParameter(
            "steady_n1_sum needs a one-site lattice".into(),
        ));
    }
    SteadyStateEvaluator::new(*p, pol)?.n1_sum(m)
}

pub fn steady_unnormalized_grid(m: &[u64], p: &ModelParams, pol: TruncationPolicy) -> Result<f64> {
    SteadyStateEvaluator::new(*p, pol)?.unnormalized_grid(m)
}

pub fn steady_recursive(m: &[u64], p: &ModelParams, pol: TruncationPolicy) -> Result<f64> {
    SteadyStateEvaluator::new(*p, pol)?.unnormalized_recursive(m)
}

pub fn normalization(p: &ModelParams, pol: TruncationPolicy) -> Result<f64> {
    SteadyStateEvaluator::new(*p, pol)?.normalization()
}

pub fn probability(m: &[u64], p: &ModelParams, pol: TruncationPolicy) -> Result<f64> {
    SteadyStateEvaluator::new(*p, pol)?.probability(m)
}

pub fn marginal(site: usize, m: u64, p: &ModelParams, pol: TruncationPolicy) -> Result<f64> {
    SteadyStateEvaluator::new(*p, pol)?.marginal(site, m)
}

/// `Π β^{m_i}(1-β)`.
pub fn equilibrium_probability(m: &[u64], beta: f64) -> f64 {
    m.iter().map(|&k| pow_u64(beta, k) * (1.0 - beta)).product()
}

/// `(γ-1)^N Π β^{m_i+1}/(1-β)`.
pub fn equilibrium_unnormalized(m: &[u64], gamma: f64, beta: f64) -> f64 {
    m.iter()
        .map(|&k| (gamma - 1.0) * pow_u64(beta, k + 1) / (1.0 - beta))
        .product()
}

/// `(γ-1)^N β^N/(1-β)^{2N}`.
pub fn equilibrium_normalization(n_sites: usize, gamma: f64, beta: f64) -> f64 {
    ((gamma - 1.0) * beta / ((1.0 - beta) * (1.0 - beta))).powi(n_sites as i32)
}

/// The `γ -> 1` one-site law
/// `(1-β_L)(1-β_R)/(β_R-β_L) Σ_{k>m} (β_R^k - β_L^k)/k`, evaluated through
/// `h_k(β_R, β_L)` so that `β_L = β_R` is allowed.
pub fn rational_limit_n1(m: u64, beta_l: f64, beta_r: f64, pol: TruncationPolicy) -> Result<f64> {
    for b in [beta_l, beta_r] {
        if !(b > 0.0 && b < 1.0) {
            return Err(MadmError::InvalidParameter(format!(
                "boundary densities must lie in (0, 1), got {b}"
            )));
        }
    }
    // h_{k-1}(β_R, β_L) = (β_R^k - β_L^k)/(β_R - β_L), extended as needed.
    let mut h = complete_homogeneous(&[beta_r, beta_l], 256.max(m as usize + 64));
    let series = Series::new("rational limit", pol, beta_l.max(beta_r));
    let sum = series.sum_from(m + 1, |k| {
        let r = (k - 1) as usize;
        if r >= h.len() {
            h = complete_homogeneous(&[beta_r, beta_l], 2 * r);
        }
        Ok(h[r] / k as f64)
    })?;
    Ok((1.0 - beta_l) * (1.0 - beta_r) * sum)
}
