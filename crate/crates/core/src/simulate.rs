//! Continuous-time Monte Carlo of the MADM.
//!
//! Each step draws an exponential holding time from the total exit rate and
//! then one event in proportion to its rate. Every site has one rightward
//! move (bulk-right or extract-right, rates `1/[k]`) and one leftward move
//! (bulk-left or extract-left, rates `γ^k/[k]`), so the finite events are
//! selected from per-site cumulative tables. Injection sizes are drawn by
//! inverse CDF over `β^k/[k]`. Occupations are unbounded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MadmError, Result};
use crate::model::{Configuration, Event, EventKind, ModelParams};
use crate::qcalc::{q_number, QParam, TruncationPolicy};
use crate::series::Series;

/// Simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub seed: u64,
    pub t_burn: f64,
    pub t_measure: f64,
    pub replicas: usize,
    /// Measurement batches per replica, for batch-means error bars.
    pub batches: usize,
    pub pol: TruncationPolicy,
}

impl SimConfig {
    pub fn new(params: ModelParams, seed: u64, t_burn: f64, t_measure: f64, replicas: usize) -> Result<Self> {
        let cfg = Self {
            params,
            seed,
            t_burn,
            t_measure,
            replicas,
            batches: 10,
            pol: TruncationPolicy::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.pol.validate()?;
        if !(self.t_burn >= 0.0 && self.t_burn.is_finite()) {
            return Err(MadmError::InvalidParameter(format!(
                "t_burn must be finite and >= 0, got {}",
                self.t_burn
            )));
        }
        if !(self.t_measure > 0.0 && self.t_measure.is_finite()) {
            return Err(MadmError::InvalidParameter(format!(
                "t_measure must be finite and > 0, got {}",
                self.t_measure
            )));
        }
        if self.replicas == 0 {
            return Err(MadmError::InvalidParameter("replicas must be >= 1".into()));
        }
        if self.batches == 0 {
            return Err(MadmError::InvalidParameter("batches must be >= 1".into()));
        }
        Ok(())
    }
}

/// The SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `i`: `seed XOR splitmix64((i+1) * 0x9E3779B97F4A7C15)`.
pub fn replica_seed(seed: u64, replica: usize) -> u64 {
    seed ^ splitmix64((replica as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Smallest `k` with `Σ_{j<=k} β^j/[j] >= u φ_0(β)`, by forward summation.
pub fn sample_injection_size(beta_eff: f64, q: QParam, u: f64, pol: TruncationPolicy) -> Result<u64> {
    InjectionSampler::new(beta_eff, q, pol)?.sample(u)
}

/// Cached partial sums of `β^k/[k]` for inverse-CDF sampling.
#[derive(Debug, Clone)]
pub struct InjectionSampler {
    /// `cdf[k-1] = Σ_{j<=k} β^j/[j]`; the last entry is `φ_0(β)`.
    cdf: Vec<f64>,
}

impl InjectionSampler {
    pub fn new(beta: f64, q: QParam, pol: TruncationPolicy) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(MadmError::InvalidParameter(format!(
                "injection parameter must lie in (0, 1), got {beta}"
            )));
        }
        // Same summation order as `phi`, so the last entry equals φ_0(β).
        let mut cdf = Vec::new();
        let mut series = Series::new("injection size", pol, beta);
        let mut power = beta;
        let mut k = 1u64;
        loop {
            let done = series.push(power / q_number(k, q))?;
            cdf.push(series.sum());
            if done {
                break;
            }
            power *= beta;
            k += 1;
        }
        Ok(Self { cdf })
    }

    /// `φ_0(β)`, the reservoir's total rate.
    pub fn total(&self) -> f64 {
        *self.cdf.last().expect("non-empty table")
    }

    /// Inverse CDF at `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> Result<u64> {
        if !(0.0..1.0).contains(&u) {
            return Err(MadmError::Domain(format!("uniform variate must lie in [0, 1), got {u}")));
        }
        let target = u * self.total();
        let idx = self.cdf.partition_point(|&c| c < target);
        Ok(idx as u64 + 1)
    }

    /// `P(k) = β^k/([k] φ_0(β))` for `k = 1..=len`.
    pub fn probabilities(&self, len: usize) -> Vec<f64> {
        let total = self.total();
        (0..len.min(self.cdf.len()))
            .map(|i| {
                let prev = if i == 0 { 0.0 } else { self.cdf[i - 1] };
                (self.cdf[i] - prev) / total
            })
            .collect()
    }
}

/// Stepping engine for one parameter set.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: ModelParams,
    /// `right[m] = Σ_{k<=m} 1/[k]`.
    right: Vec<f64>,
    /// `left[m] = Σ_{k<=m} γ^k/[k]`.
    left: Vec<f64>,
    inject_left: InjectionSampler,
    inject_right: InjectionSampler,
}

impl Simulator {
    pub fn new(params: ModelParams, pol: TruncationPolicy) -> Result<Self> {
        params.validate()?;
        let inject_left = InjectionSampler::new(params.left_injection(), params.q, pol)?;
        let inject_right = InjectionSampler::new(params.right_injection(), params.q, pol)?;
        Ok(Self {
            params,
            right: vec![0.0],
            left: vec![0.0],
            inject_left,
            inject_right,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    fn ensure(&mut self, m: u64) {
        let m = m as usize;
        while self.right.len() <= m {
            let k = self.right.len() as u64;
            let w = 1.0 / q_number(k, self.params.q);
            let r = self.right[k as usize - 1] + w;
            let l = self.left[k as usize - 1] + self.params.q.pow(k) * w;
            self.right.push(r);
            self.left.push(l);
        }
    }

    /// Total exit rate of `c`.
    pub fn exit_rate(&mut self, c: &Configuration) -> f64 {
        let mut total = self.inject_left.total() + self.inject_right.total();
        for &m in c.occupations() {
            self.ensure(m);
            total += self.right[m as usize] + self.left[m as usize];
        }
        total
    }

    /// Advances `state` by one event; returns the event and the holding time.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut Configuration, rng: &mut R) -> Result<(Event, f64)> {
        let total = self.exit_rate(state);
        let wait = -(1.0 - rng.random::<f64>()).ln() / total;
        let mut target = rng.random::<f64>() * total;
        let n = self.params.n_sites;

        let mut chosen = None;
        for (site, &m) in state.occupations().iter().enumerate() {
            let (r, l) = (self.right[m as usize], self.left[m as usize]);
            if target < r {
                let kind = if site + 1 < n {
                    EventKind::BulkRight
                } else {
                    EventKind::ExtractRight
                };
                chosen = Some((kind, site, pick(&self.right, m, target)));
                break;
            }
            target -= r;
            if target < l {
                let kind = if site > 0 {
                    EventKind::BulkLeft
                } else {
                    EventKind::ExtractLeft
                };
                chosen = Some((kind, site, pick(&self.left, m, target)));
                break;
            }
            target -= l;
        }
        let (kind, site, k) = match chosen {
            Some(c) => c,
            None => {
                let u = rng.random::<f64>();
                if target < self.inject_left.total() {
                    (EventKind::InjectLeft, 0, self.inject_left.sample(u)?)
                } else {
                    (EventKind::InjectRight, n - 1, self.inject_right.sample(u)?)
                }
            }
        };
        let event = Event {
            kind,
            site,
            k: Some(k),
            rate: kind.rate(k, &self.params),
        };
        event.apply(state)?;
        Ok((event, wait))
    }
}

/// Smallest `k in 1..=m` with `table[k] > target` (falls back to `m` under rounding).
fn pick(table: &[f64], m: u64, target: f64) -> u64 {
    let slice = &table[1..=m as usize];
    let idx = slice.partition_point(|&c| c <= target);
    (idx as u64 + 1).min(m)
}

/// One step from `state` with a fresh [`Simulator`]; convenient for single
/// steps, slow in loops.
pub fn step<R: Rng + ?Sized>(
    state: &Configuration,
    rng: &mut R,
    p: &ModelParams,
    pol: TruncationPolicy,
) -> Result<(Event, f64, Configuration)> {
    state.check(p)?;
    let mut sim = Simulator::new(*p, pol)?;
    let mut next = state.clone();
    let (event, wait) = sim.step(&mut next, rng)?;
    Ok((event, wait, next))
}

/// Sojourn-weighted statistics of one or more trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStats {
    pub n_sites: usize,
    pub replicas: usize,
    /// Measured time summed over replicas.
    pub total_time: f64,
    /// `histograms[site][m]`: time spent with `m` particles on `site`.
    pub histograms: Vec<Vec<f64>>,
    /// Per-batch histograms, `batch_histograms[batch][site][m]`, batches of
    /// all replicas in replica order.
    pub batch_histograms: Vec<Vec<Vec<f64>>>,
    pub batch_time: f64,
    /// Events during measurement, indexed by [`EventKind::index`].
    pub event_counts: [u64; 6],
    pub mean_occupation: Vec<f64>,
    pub mean_stderr: Vec<f64>,
}

/// One exact-vs-empirical marginal comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalComparison {
    /// 0-based site.
    pub site: usize,
    pub m: u64,
    pub exact: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub z: f64,
}

impl EmpiricalStats {
    fn empty(n_sites: usize, batches: usize, batch_time: f64) -> Self {
        Self {
            n_sites,
            replicas: 1,
            total_time: 0.0,
            histograms: vec![Vec::new(); n_sites],
            batch_histograms: vec![vec![Vec::new(); n_sites]; batches],
            batch_time,
            event_counts: [0; 6],
            mean_occupation: vec![0.0; n_sites],
            mean_stderr: vec![0.0; n_sites],
        }
    }

    /// Time fraction with `m` particles on `site`.
    pub fn marginal(&self, site: usize, m: u64) -> f64 {
        self.histograms[site].get(m as usize).copied().unwrap_or(0.0) / self.total_time
    }

    fn batch_fractions(&self, site: usize, m: u64) -> Vec<f64> {
        self.batch_histograms
            .iter()
            .map(|b| b[site].get(m as usize).copied().unwrap_or(0.0) / self.batch_time)
            .collect()
    }

    /// Standard error of [`Self::marginal`] from batch means.
    pub fn marginal_stderr(&self, site: usize, m: u64) -> f64 {
        standard_error(&self.batch_fractions(site, m))
    }

    /// Largest occupation seen on any site.
    pub fn max_occupation(&self) -> u64 {
        self.histograms
            .iter()
            .map(|h| h.len().saturating_sub(1) as u64)
            .max()
            .unwrap_or(0)
    }

    fn finish(&mut self) {
        for site in 0..self.n_sites {
            let mean = |h: &[f64], t: f64| h.iter().enumerate().map(|(m, w)| m as f64 * w).sum::<f64>() / t;
            self.mean_occupation[site] = mean(&self.histograms[site], self.total_time);
            let per_batch: Vec<f64> = self
                .batch_histograms
                .iter()
                .map(|b| mean(&b[site], self.batch_time))
                .collect();
            self.mean_stderr[site] = standard_error(&per_batch);
        }
    }

    fn merge(parts: Vec<EmpiricalStats>) -> EmpiricalStats {
        let mut it = parts.into_iter();
        let mut out = it.next().expect("at least one replica");
        for part in it {
            out.replicas += part.replicas;
            out.total_time += part.total_time;
            for (acc, h) in out.histograms.iter_mut().zip(&part.histograms) {
                add_into(acc, h);
            }
            out.batch_histograms.extend(part.batch_histograms);
            for (a, b) in out.event_counts.iter_mut().zip(part.event_counts) {
                *a += b;
            }
        }
        out.finish();
        out
    }

    /// z-scores of the empirical marginals against `exact(site, m)` on every
    /// bin with exact probability at least `min_prob`.
    pub fn compare_marginals<F>(&self, mut exact: F, min_prob: f64) -> Result<Vec<MarginalComparison>>
    where
        F: FnMut(usize, u64) -> Result<f64>,
    {
        let mut out = Vec::new();
        for site in 0..self.n_sites {
            let mut m = 0u64;
            let mut seen = 0.0;
            // Walk bins until the exact mass left is below `min_prob`.
            while 1.0 - seen >= min_prob {
                let e = exact(site, m)?;
                seen += e;
                if e >= min_prob {
                    let empirical = self.marginal(site, m);
                    let stderr = self.marginal_stderr(site, m);
                    let z = if stderr > 0.0 {
                        (empirical - e) / stderr
                    } else if empirical == e {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    out.push(MarginalComparison {
                        site,
                        m,
                        exact: e,
                        empirical,
                        stderr,
                        z,
                    });
                }
                m += 1;
                if m > 100_000 {
                    break;
                }
            }
        }
        Ok(out)
    }
}

fn add_into(acc: &mut Vec<f64>, h: &[f64]) {
    if acc.len() < h.len() {
        acc.resize(h.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(h) {
        *a += b;
    }
}

fn add_at(h: &mut Vec<f64>, m: u64, dt: f64) {
    let m = m as usize;
    if h.len() <= m {
        h.resize(m + 1, 0.0);
    }
    h[m] += dt;
}

/// Standard error of the mean of `xs`.
fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Runs one trajectory from the empty lattice.
pub fn run_replica(cfg: &SimConfig, replica: usize) -> Result<EmpiricalStats> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(replica_seed(cfg.seed, replica));
    let mut sim = Simulator::new(cfg.params, cfg.pol)?;
    let n = cfg.params.n_sites;
    let batch_time = cfg.t_measure / cfg.batches as f64;
    let mut stats = EmpiricalStats::empty(n, cfg.batches, batch_time);
    let start = cfg.t_burn;
    let end = cfg.t_burn + cfg.t_measure;
    let mut state = Configuration::empty(n);
    let mut t = 0.0;
    while t < end {
        let before = state.clone();
        let (event, wait) = sim.step(&mut state, &mut rng)?;
        let t_next = t + wait;
        // Credit the sojourn in `before` over [t, t_next) ∩ [start, end).
        let (mut lo, hi) = (t.max(start), t_next.min(end));
        while lo < hi {
            let batch = (((lo - start) / batch_time) as usize).min(cfg.batches - 1);
            let batch_end = if batch + 1 == cfg.batches {
                end
            } else {
                start + (batch + 1) as f64 * batch_time
            };
            let upto = hi.min(batch_end);
            let dt = upto - lo;
            for (site, &m) in before.occupations().iter().enumerate() {
                add_at(&mut stats.histograms[site], m, dt);
                add_at(&mut stats.batch_histograms[batch][site], m, dt);
            }
            stats.total_time += dt;
            lo = upto;
        }
        if t_next > start && t_next <= end {
            stats.event_counts[event.kind.index()] += 1;
        }
        t = t_next;
    }
    stats.finish();
    Ok(stats)
}

/// Runs all replicas in parallel and merges them in replica order.
pub fn run(cfg: &SimConfig) -> Result<EmpiricalStats> {
    cfg.validate()?;
    let parts = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| run_replica(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(EmpiricalStats::merge(parts))
}

#[cfg(test)]
mod tests;
