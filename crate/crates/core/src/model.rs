//! The boundary-driven MADM: parameters, configurations, transition rates,
//! the generator acting on functions and a truncated generator matrix.
//!
//! Sites are indexed from 0 internally; site `0` touches the left reservoir
//! and site `N-1` the right one.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MadmError, Result};
use crate::qcalc::{phi, pow_u64, q_number, QParam, TruncationPolicy};
use crate::series::Series;

/// Physical parameters of the process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub q: QParam,
    pub beta_l: f64,
    pub beta_r: f64,
    pub n_sites: usize,
}

impl ModelParams {
    pub fn new(gamma: f64, beta_l: f64, beta_r: f64, n_sites: usize) -> Result<Self> {
        let p = Self {
            q: QParam::new(gamma)?,
            beta_l,
            beta_r,
            n_sites,
        };
        p.validate()?;
        Ok(p)
    }

    /// Equilibrium parameters `β_L = β_R = β`.
    pub fn equilibrium(gamma: f64, beta: f64, n_sites: usize) -> Result<Self> {
        Self::new(gamma, beta, beta, n_sites)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta_l", self.beta_l), ("beta_r", self.beta_r)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(MadmError::InvalidParameter(format!(
                    "{name} must lie strictly inside (0, 1), got {b}"
                )));
            }
        }
        if self.n_sites < 1 {
            return Err(MadmError::InvalidParameter(
                "the lattice needs at least one site".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.q.gamma()
    }

    /// Effective injection parameter of the left reservoir, `β_L`.
    #[inline]
    pub fn left_injection(&self) -> f64 {
        self.beta_l
    }

    /// Effective injection parameter of the right reservoir, `γβ_R`; also
    /// the upper limit of every nested integral.
    #[inline]
    pub fn right_injection(&self) -> f64 {
        self.q.gamma() * self.beta_r
    }

    /// Geometric decay ratio `max(γβ_R, β_L)` of the stationary weights in
    /// each occupation number.
    #[inline]
    pub fn decay_ratio(&self) -> f64 {
        self.right_injection().max(self.beta_l)
    }

    pub fn is_equilibrium(&self) -> bool {
        self.beta_l == self.beta_r
    }
}

/// Occupation numbers `(m_1, ..., m_N)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration(Vec<u64>);

impl Configuration {
    pub fn new(occupations: Vec<u64>) -> Self {
        Self(occupations)
    }

    pub fn empty(n_sites: usize) -> Self {
        Self(vec![0; n_sites])
    }

    pub fn occupations(&self) -> &[u64] {
        &self.0
    }

    pub fn occupations_mut(&mut self) -> &mut [u64] {
        &mut self.0
    }

    pub fn n_sites(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn check(&self, p: &ModelParams) -> Result<()> {
        if self.0.len() != p.n_sites {
            return Err(MadmError::InvalidParameter(format!(
                "configuration has {} sites, the lattice has {}",
                self.0.len(),
                p.n_sites
            )));
        }
        Ok(())
    }

    pub fn into_inner(self) -> Vec<u64> {
        self.0
    }
}

impl From<Vec<u64>> for Configuration {
    fn from(v: Vec<u64>) -> Self {
        Self(v)
    }
}

impl std::ops::Index<usize> for Configuration {
    type Output = u64;

    fn index(&self, i: usize) -> &u64 {
        &self.0[i]
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, m) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// `k` particles hop from site `i` to `i+1`, rate `1/[k]`.
    BulkRight,
    /// `k` particles hop from site `i` to `i-1`, rate `γ^k/[k]`.
    BulkLeft,
    /// `k` particles enter site 0, rate `β_L^k/[k]`.
    InjectLeft,
    /// `k` particles leave site 0, rate `γ^k/[k]`.
    ExtractLeft,
    /// `k` particles enter site `N-1`, rate `(γβ_R)^k/[k]`.
    InjectRight,
    /// `k` particles leave site `N-1`, rate `1/[k]`.
    ExtractRight,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::BulkRight,
        EventKind::BulkLeft,
        EventKind::InjectLeft,
        EventKind::ExtractLeft,
        EventKind::InjectRight,
        EventKind::ExtractRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            EventKind::BulkRight => "bulk-right",
            EventKind::BulkLeft => "bulk-left",
            EventKind::InjectLeft => "inject-left",
            EventKind::ExtractLeft => "extract-left",
            EventKind::InjectRight => "inject-right",
            EventKind::ExtractRight => "extract-right",
        }
    }

    pub fn is_injection(self) -> bool {
        matches!(self, EventKind::InjectLeft | EventKind::InjectRight)
    }

    /// Rate of moving `k >= 1` particles.
    pub fn rate(self, k: u64, p: &ModelParams) -> f64 {
        let base = match self {
            EventKind::BulkRight | EventKind::ExtractRight => 1.0,
            EventKind::BulkLeft | EventKind::ExtractLeft => p.q.pow(k),
            EventKind::InjectLeft => pow_u64(p.left_injection(), k),
            EventKind::InjectRight => pow_u64(p.right_injection(), k),
        };
        base / q_number(k, p.q)
    }
}

/// One transition of the chain.
///
/// `k = None` marks a reservoir aggregate: all injection sizes at once, with
/// `rate` the total `φ_0(β_eff)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    /// Source site for bulk moves and extractions, target site for injections.
    pub site: usize,
    pub k: Option<u64>,
    pub rate: f64,
}

impl Event {
    /// Applies a sized event to `c` in place.
    pub fn apply(&self, c: &mut Configuration) -> Result<()> {
        let k = self.k.ok_or_else(|| {
            MadmError::Domain("cannot apply an aggregate injection event".into())
        })?;
        let occ = c.occupations_mut();
        let take = |occ: &mut [u64], i: usize| -> Result<()> {
            occ[i] = occ[i].checked_sub(k).ok_or_else(|| {
                MadmError::Domain(format!("site {i} holds fewer than {k} particles"))
            })?;
            Ok(())
        };
        match self.kind {
            EventKind::BulkRight => {
                take(occ, self.site)?;
                occ[self.site + 1] += k;
            }
            EventKind::BulkLeft => {
                take(occ, self.site)?;
                occ[self.site - 1] += k;
            }
            EventKind::ExtractLeft | EventKind::ExtractRight => take(occ, self.site)?,
            EventKind::InjectLeft | EventKind::InjectRight => occ[self.site] += k,
        }
        Ok(())
    }

    /// The configuration reached from `c`.
    pub fn target(&self, c: &Configuration) -> Result<Configuration> {
        let mut next = c.clone();
        self.apply(&mut next)?;
        Ok(next)
    }
}

/// Kinds of finite-size moves that leave `site`.
fn outgoing_kinds(site: usize, n_sites: usize) -> impl Iterator<Item = EventKind> {
    let last = n_sites - 1;
    [
        (site < last).then_some(EventKind::BulkRight),
        (site > 0).then_some(EventKind::BulkLeft),
        (site == 0).then_some(EventKind::ExtractLeft),
        (site == last).then_some(EventKind::ExtractRight),
    ]
    .into_iter()
    .flatten()
}

/// Every finite move (`k <= m` at the source) plus one aggregate event per
/// reservoir.
pub fn enabled_events(
    c: &Configuration,
    p: &ModelParams,
    pol: TruncationPolicy,
) -> Result<Vec<Event>> {
    c.check(p)?;
    let mut events = Vec::new();
    for (site, &m) in c.occupations().iter().enumerate() {
        for kind in outgoing_kinds(site, p.n_sites) {
            for k in 1..=m {
                events.push(Event {
                    kind,
                    site,
                    k: Some(k),
                    rate: kind.rate(k, p),
                });
            }
        }
    }
    events.push(Event {
        kind: EventKind::InjectLeft,
        site: 0,
        k: None,
        rate: phi(0, p.left_injection(), p.q, pol)?,
    });
    events.push(Event {
        kind: EventKind::InjectRight,
        site: p.n_sites - 1,
        k: None,
        rate: phi(0, p.right_injection(), p.q, pol)?,
    });
    Ok(events)
}

/// `Σ_i Σ_{k<=m_i} (1+γ^k)/[k] + φ_0(β_L) + φ_0(γβ_R)`.
pub fn total_exit_rate(c: &Configuration, p: &ModelParams, pol: TruncationPolicy) -> Result<f64> {
    c.check(p)?;
    let mut total = phi(0, p.left_injection(), p.q, pol)? + phi(0, p.right_injection(), p.q, pol)?;
    for &m in c.occupations() {
        for k in 1..=m {
            total += (1.0 + p.q.pow(k)) / q_number(k, p.q);
        }
    }
    Ok(total)
}

/// `(𝓛f)(c)`. The two injection sums are truncated once both the series
/// criterion holds and the remaining reservoir rate is negligible.
pub fn apply_generator<F>(
    f: F,
    c: &Configuration,
    p: &ModelParams,
    pol: TruncationPolicy,
) -> Result<f64>
where
    F: Fn(&Configuration) -> f64,
{
    c.check(p)?;
    let here = f(c);
    let mut total = 0.0;
    let mut target = c.clone();
    for (site, &m) in c.occupations().iter().enumerate() {
        for kind in outgoing_kinds(site, p.n_sites) {
            for k in 1..=m {
                let ev = Event {
                    kind,
                    site,
                    k: Some(k),
                    rate: kind.rate(k, p),
                };
                target.clone_from(c);
                ev.apply(&mut target)?;
                total += ev.rate * (f(&target) - here);
            }
        }
    }
    for (site, beta) in [(0, p.left_injection()), (p.n_sites - 1, p.right_injection())] {
        let reservoir = phi(0, beta, p.q, pol)?;
        let mut series = Series::new("generator injection", pol, beta);
        let mut power = 1.0;
        let mut k = 0u64;
        loop {
            k += 1;
            power *= beta;
            let w = power / q_number(k, p.q);
            target.clone_from(c);
            target.occupations_mut()[site] += k;
            let converged = series.push(w * (f(&target) - here))?;
            let remaining = w * beta / (1.0 - beta);
            if converged && remaining <= pol.rel_tol * reservoir {
                break;
            }
        }
        total += series.sum();
    }
    Ok(total)
}

/// Largest truncated state space [`build_truncated_generator`] will build.
pub const MAX_TRUNCATED_STATES: u128 = 10_000_000;

/// The master-equation rate matrix on `{m : m_i <= m_cap}`.
///
/// Column `j` holds the rates out of state `j`: off-diagonal entries are the
/// in-box transition rates, the diagonal is minus the full exit rate. Moves
/// that leave the box are dropped and their rate is recorded in `lost`, so
/// column sums equal `-lost`.
#[derive(Debug, Clone)]
pub struct TruncatedGenerator {
    pub n_sites: usize,
    pub m_cap: u64,
    /// Off-diagonal `(row, rate)` pairs per column.
    pub columns: Vec<Vec<(usize, f64)>>,
    pub diagonal: Vec<f64>,
    pub lost: Vec<f64>,
}

impl TruncatedGenerator {
    pub fn n_states(&self) -> usize {
        self.diagonal.len()
    }

    /// Mixed-radix index with `m_1` most significant.
    pub fn index_of(&self, occ: &[u64]) -> Option<usize> {
        if occ.len() != self.n_sites {
            return None;
        }
        let radix = self.m_cap + 1;
        let mut idx = 0u64;
        for &m in occ {
            if m > self.m_cap {
                return None;
            }
            idx = idx * radix + m;
        }
        Some(idx as usize)
    }

    pub fn state(&self, index: usize) -> Vec<u64> {
        state_of(index, self.n_sites, self.m_cap)
    }

    /// Matrix entry `(row, col)`: the rate `col -> row` off the diagonal.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        if row == col {
            return self.diagonal[col];
        }
        self.columns[col]
            .iter()
            .filter(|(r, _)| *r == row)
            .map(|(_, v)| v)
            .sum()
    }

    /// `Q v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_states());
        let mut out: Vec<f64> = self.diagonal.iter().zip(v).map(|(d, x)| d * x).collect();
        for (col, entries) in self.columns.iter().enumerate() {
            for &(row, rate) in entries {
                out[row] += rate * v[col];
            }
        }
        out
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.columns
            .iter()
            .zip(&self.diagonal)
            .map(|(c, d)| d + c.iter().map(|(_, v)| v).sum::<f64>())
            .collect()
    }
}

fn state_of(mut index: usize, n_sites: usize, m_cap: u64) -> Vec<u64> {
    let radix = (m_cap + 1) as usize;
    let mut occ = vec![0u64; n_sites];
    for slot in occ.iter_mut().rev() {
        *slot = (index % radix) as u64;
        index /= radix;
    }
    occ
}

pub fn build_truncated_generator(
    p: &ModelParams,
    m_cap: u64,
    pol: TruncationPolicy,
) -> Result<TruncatedGenerator> {
    p.validate()?;
    let states = (m_cap as u128 + 1).checked_pow(p.n_sites as u32).unwrap_or(u128::MAX);
    if states > MAX_TRUNCATED_STATES {
        return Err(MadmError::StateSpaceTooLarge {
            states,
            limit: MAX_TRUNCATED_STATES,
        });
    }
    let n = states as usize;
    let mut gen = TruncatedGenerator {
        n_sites: p.n_sites,
        m_cap,
        columns: vec![Vec::new(); n],
        diagonal: vec![0.0; n],
        lost: vec![0.0; n],
    };
    for col in 0..n {
        let c = Configuration::new(state_of(col, p.n_sites, m_cap));
        gen.diagonal[col] = -total_exit_rate(&c, p, pol)?;
        let mut entries = Vec::new();
        let mut lost = 0.0;
        for ev in enabled_events(&c, p, pol)? {
            if ev.k.is_none() {
                let (kind, site) = (ev.kind, ev.site);
                let room = m_cap - c[site];
                for k in 1..=room {
                    let mut t = c.clone();
                    t.occupations_mut()[site] += k;
                    entries.push((gen.index_of(t.occupations()).unwrap(), kind.rate(k, p)));
                }
                let beta = if kind == EventKind::InjectLeft {
                    p.left_injection()
                } else {
                    p.right_injection()
                };
                lost += phi(room, beta, p.q, pol)?;
                continue;
            }
            let t = ev.target(&c)?;
            match gen.index_of(t.occupations()) {
                Some(row) => entries.push((row, ev.rate)),
                None => lost += ev.rate,
            }
        }
        gen.columns[col] = entries;
        gen.lost[col] = lost;
    }
    Ok(gen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pol() -> TruncationPolicy {
        TruncationPolicy::default()
    }

    fn params(g: f64, bl: f64, br: f64, n: usize) -> ModelParams {
        ModelParams::new(g, bl, br, n).unwrap()
    }

    fn phi0(beta: f64, g: f64) -> f64 {
        let q = QParam::new(g).unwrap();
        (1..400).map(|k| beta.powi(k) / q_number(k as u64, q)).sum()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ModelParams::new(0.5, 0.0, 0.4, 2).is_err());
        assert!(ModelParams::new(0.5, 0.2, 1.0, 2).is_err());
        assert!(ModelParams::new(1.0, 0.2, 0.4, 2).is_err());
        assert!(ModelParams::new(0.5, 0.2, 0.4, 0).is_err());
    }

    #[test]
    fn empty_single_site_has_only_reservoir_events() {
        let p = params(0.5, 0.3, 0.6, 1);
        let ev = enabled_events(&Configuration::empty(1), &p, pol()).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].kind, EventKind::InjectLeft);
        assert_eq!(ev[0].k, None);
        assert_relative_eq!(ev[0].rate, phi0(0.3, 0.5), max_relative = 1e-13);
        assert_eq!(ev[1].kind, EventKind::InjectRight);
        assert_relative_eq!(ev[1].rate, phi0(0.3, 0.5), max_relative = 1e-13);
    }

    #[test]
    fn two_site_single_particle_events() {
        let p = params(0.5, 0.2, 0.4, 2);
        let ev = enabled_events(&Configuration::new(vec![1, 0]), &p, pol()).unwrap();
        let finite: Vec<_> = ev.iter().filter(|e| e.k.is_some()).collect();
        assert_eq!(finite.len(), 2);
        assert_eq!((finite[0].kind, finite[0].site, finite[0].k), (EventKind::BulkRight, 0, Some(1)));
        assert_eq!(finite[0].rate, 1.0);
        assert_eq!((finite[1].kind, finite[1].k), (EventKind::ExtractLeft, Some(1)));
        assert_eq!(finite[1].rate, 0.5);
        assert_eq!(ev.len(), 4);
    }

    #[test]
    fn single_site_extraction_rates() {
        let g = 0.5;
        let p = params(g, 0.2, 0.4, 1);
        let ev = enabled_events(&Configuration::new(vec![3]), &p, pol()).unwrap();
        let q = QParam::new(g).unwrap();
        let mut oracle = 0.0;
        for k in 1..=3u64 {
            let left = ev
                .iter()
                .find(|e| e.kind == EventKind::ExtractLeft && e.k == Some(k))
                .unwrap();
            let right = ev
                .iter()
                .find(|e| e.kind == EventKind::ExtractRight && e.k == Some(k))
                .unwrap();
            assert_relative_eq!(left.rate, g.powi(k as i32) / q_number(k, q));
            assert_relative_eq!(right.rate, 1.0 / q_number(k, q));
            oracle += (1.0 + g.powi(k as i32)) / q_number(k, q);
        }
        let extraction: f64 = ev.iter().filter(|e| e.k.is_some()).map(|e| e.rate).sum();
        assert_relative_eq!(extraction, oracle, max_relative = 1e-15);
        // 1 + 1/2 + (1 + 1/4)/1.5 + (1 + 1/8)/1.75
        assert_relative_eq!(extraction, 1.5 + 1.25 / 1.5 + 1.125 / 1.75, max_relative = 1e-15);
    }

    #[test]
    fn total_exit_rate_examples() {
        let p = params(0.5, 0.5, 0.5, 1);
        let empty = total_exit_rate(&Configuration::empty(1), &p, pol()).unwrap();
        assert_relative_eq!(empty, phi0(0.5, 0.5) + phi0(0.25, 0.5), max_relative = 1e-13);
        let one = total_exit_rate(&Configuration::new(vec![1]), &p, pol()).unwrap();
        // φ_0(0.5) and φ_0(0.25) at γ = 0.5, frozen from a 40-digit evaluation.
        assert_relative_eq!(
            one,
            1.5 + 0.803_347_576_207_645_9 + 0.303_347_576_207_645_9,
            max_relative = 1e-14
        );
    }

    #[test]
    fn generator_annihilates_constants_and_has_exit_rate_diagonal() {
        let p = params(0.6, 0.3, 0.7, 3);
        let c = Configuration::new(vec![2, 0, 3]);
        let v = apply_generator(|_| 4.2, &c, &p, pol()).unwrap();
        assert!(v.abs() < 1e-14);
        let diag = apply_generator(|x| f64::from(u8::from(x == &c)), &c, &p, pol()).unwrap();
        assert_relative_eq!(diag, -total_exit_rate(&c, &p, pol()).unwrap(), max_relative = 1e-13);
    }

    #[test]
    fn injection_flux_from_empty_site() {
        let (g, bl, br) = (0.5, 0.2, 0.4);
        let p = params(g, bl, br, 1);
        let got = apply_generator(|c| c.total() as f64, &Configuration::empty(1), &p, pol()).unwrap();
        let q = QParam::new(g).unwrap();
        let oracle: f64 = (1..300)
            .map(|k| k as f64 * (bl.powi(k) + (g * br).powi(k)) / q_number(k as u64, q))
            .sum();
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
        assert_relative_eq!(got, 0.543_080_408_870_865_99, max_relative = 1e-12);
    }

    #[test]
    fn generator_on_indicator_of_distant_state() {
        // f is nonzero only three injections away; the series must not stop early.
        let p = params(0.5, 0.6, 0.3, 1);
        let target = Configuration::new(vec![3]);
        let v = apply_generator(|x| f64::from(u8::from(x == &target)), &Configuration::empty(1), &p, pol()).unwrap();
        let expected = EventKind::InjectLeft.rate(3, &p) + EventKind::InjectRight.rate(3, &p);
        assert_relative_eq!(v, expected, max_relative = 1e-14);
    }

    #[test]
    fn truncated_generator_small_cases() {
        let p = params(0.5, 0.2, 0.4, 1);
        let g0 = build_truncated_generator(&p, 0, pol()).unwrap();
        assert_eq!(g0.n_states(), 1);
        let inj = phi0(0.2, 0.5) + phi0(0.2, 0.5);
        assert_relative_eq!(g0.diagonal[0], -inj, max_relative = 1e-13);
        assert_relative_eq!(g0.lost[0], inj, max_relative = 1e-13);

        let g2 = build_truncated_generator(&p, 2, pol()).unwrap();
        assert_relative_eq!(g2.entry(1, 0), 0.4, max_relative = 1e-15);
        for (s, l) in g2.column_sums().iter().zip(&g2.lost) {
            assert_relative_eq!(*s, -l, epsilon = 1e-13);
        }
    }

    #[test]
    fn truncated_generator_guards_size() {
        let p = params(0.5, 0.2, 0.4, 8);
        assert!(matches!(
            build_truncated_generator(&p, 9, pol()),
            Err(MadmError::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn mixed_radix_order() {
        let p = params(0.5, 0.2, 0.4, 2);
        let g = build_truncated_generator(&p, 2, pol()).unwrap();
        assert_eq!(g.state(0), vec![0, 0]);
        assert_eq!(g.state(1), vec![0, 1]);
        assert_eq!(g.state(3), vec![1, 0]);
        assert_eq!(g.index_of(&[2, 1]), Some(7));
        assert_eq!(g.index_of(&[3, 0]), None);
    }

    #[test]
    fn matrix_entries_match_event_rates() {
        let p = params(0.6, 0.3, 0.5, 2);
        let cap = 3;
        let gen = build_truncated_generator(&p, cap, pol()).unwrap();
        for col in 0..gen.n_states() {
            let c = Configuration::new(gen.state(col));
            let mut expected = vec![0.0; gen.n_states()];
            for ev in enabled_events(&c, &p, pol()).unwrap() {
                match ev.k {
                    Some(_) => {
                        if let Some(row) = gen.index_of(ev.target(&c).unwrap().occupations()) {
                            expected[row] += ev.rate;
                        }
                    }
                    None => {
                        for k in 1..=cap - c[ev.site] {
                            let mut t = c.clone();
                            t.occupations_mut()[ev.site] += k;
                            expected[gen.index_of(t.occupations()).unwrap()] += ev.kind.rate(k, &p);
                        }
                    }
                }
            }
            for (row, e) in expected.iter().enumerate() {
                if row != col {
                    assert_relative_eq!(gen.entry(row, col), *e, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn equilibrium_single_site_balance() {
        let (g, beta) = (0.6, 0.35);
        let p = ModelParams::equilibrium(g, beta, 1).unwrap();
        let mu = |m: u64| beta.powi(m as i32) * (1.0 - beta);
        for m in 0..=5u64 {
            // Inflow from every m' != m, including arbitrarily large m'.
            let mut inflow = 0.0;
            for from in 0..m {
                let k = m - from;
                inflow += mu(from) * (EventKind::InjectLeft.rate(k, &p) + EventKind::InjectRight.rate(k, &p));
            }
            for k in 1..200u64 {
                inflow += mu(m + k) * (EventKind::ExtractLeft.rate(k, &p) + EventKind::ExtractRight.rate(k, &p));
            }
            let outflow = mu(m) * total_exit_rate(&Configuration::new(vec![m]), &p, pol()).unwrap();
            assert_relative_eq!(inflow, outflow, max_relative = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rates_positive_and_consistent(
            occ in prop::collection::vec(0u64..5, 1..4),
            g in 0.05f64..0.95, bl in 0.05f64..0.95, br in 0.05f64..0.95,
        ) {
            let p = params(g, bl, br, occ.len());
            let c = Configuration::new(occ);
            let ev = enabled_events(&c, &p, pol()).unwrap();
            prop_assert!(ev.iter().all(|e| e.rate > 0.0));
            let sum: f64 = ev.iter().map(|e| e.rate).sum();
            let total = total_exit_rate(&c, &p, pol()).unwrap();
            prop_assert!((sum - total).abs() <= 1e-12 * total);
        }

        #[test]
        fn generator_matches_event_sum(
            occ in prop::collection::vec(0u64..4, 1..4),
            g in 0.05f64..0.95, bl in 0.05f64..0.9, br in 0.05f64..0.9,
        ) {
            let p = params(g, bl, br, occ.len());
            let c = Configuration::new(occ);
            // A bounded test function.
            let f = |x: &Configuration| {
                x.occupations().iter().enumerate()
                    .map(|(i, &m)| ((i + 1) as f64 * m as f64).sin())
                    .sum::<f64>()
            };
            let lhs = apply_generator(f, &c, &p, pol()).unwrap();
            let mut rhs = 0.0;
            for e in enabled_events(&c, &p, pol()).unwrap() {
                match e.k {
                    Some(_) => rhs += e.rate * (f(&e.target(&c).unwrap()) - f(&c)),
                    None => {
                        for k in 1..400u64 {
                            let sized = Event { k: Some(k), rate: e.kind.rate(k, &p), ..e };
                            rhs += sized.rate * (f(&sized.target(&c).unwrap()) - f(&c));
                        }
                    }
                }
            }
            let scale = total_exit_rate(&c, &p, pol()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }
    }
}
