//! Coefficient-by-coefficient cancellation of the one-site stationarity
//! equation.
//!
//! With `U = γβ_R` and `L = β_L`, the one-site weight
//! `μ̃(n) = Σ_{k>n} (U^k - L^k)/[k]` turns both sides of the stationarity
//! equation into power series in `(L, U)`. Every coefficient of
//! `L^p U^r` of their difference must vanish. The check extracts these
//! coefficients directly and also evaluates the closed case formulas for
//! the pure powers and the antisymmetric double sums for the mixed ones.

use serde::{Deserialize, Serialize};

use crate::qcalc::{q_number, QParam};

/// Largest relative defect in each family of coefficients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AppendixBReport {
    /// Every coefficient of the stationarity equation, extracted directly.
    pub direct: f64,
    /// Pure-power coefficients re-derived from the reshuffled four-sum form.
    pub reshuffle: f64,
    /// `p = m+1`.
    pub case_first: f64,
    /// `m+2 <= p <= 2m`.
    pub case_middle: f64,
    /// `p = 2m+1`.
    pub case_split: f64,
    /// `p >= 2m+2`.
    pub case_high: f64,
    /// Mixed `L^p U^r` coefficients from the antisymmetric double sums.
    pub mixed: f64,
}

impl AppendixBReport {
    pub fn max(&self) -> f64 {
        [
            self.direct,
            self.reshuffle,
            self.case_first,
            self.case_middle,
            self.case_split,
            self.case_high,
            self.mixed,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn merge(&mut self, other: &AppendixBReport) {
        self.direct = self.direct.max(other.direct);
        self.reshuffle = self.reshuffle.max(other.reshuffle);
        self.case_first = self.case_first.max(other.case_first);
        self.case_middle = self.case_middle.max(other.case_middle);
        self.case_split = self.case_split.max(other.case_split);
        self.case_high = self.case_high.max(other.case_high);
        self.mixed = self.mixed.max(other.mixed);
    }
}

/// Coefficient table of a polynomial in `(L, U)` of total degree `<= max`,
/// with the largest single contribution kept per coefficient.
struct Coefficients {
    max: usize,
    value: Vec<f64>,
    scale: Vec<f64>,
}

impl Coefficients {
    fn new(max: usize) -> Self {
        let n = (max + 1) * (max + 1);
        Self {
            max,
            value: vec![0.0; n],
            scale: vec![0.0; n],
        }
    }

    fn add(&mut self, p: usize, r: usize, c: f64) {
        if p + r > self.max {
            return;
        }
        let i = p * (self.max + 1) + r;
        self.value[i] += c;
        self.scale[i] = self.scale[i].max(c.abs());
    }

    fn get(&self, p: usize, r: usize) -> (f64, f64) {
        let i = p * (self.max + 1) + r;
        (self.value[i], self.scale[i])
    }
}

fn relative(value: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        value.abs() / scale
    } else {
        0.0
    }
}

/// Terms `(p, r, c)` of `μ̃(n)` up to total degree `max`.
fn weight_terms(n: usize, max: usize, q: QParam) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for k in n + 1..=max {
        let c = 1.0 / q_number(k as u64, q);
        out.push((0, k, c));
        out.push((k, 0, -c));
    }
    out
}

/// `(exit rate) μ̃(m) - inflow` as a coefficient table.
fn stationarity_coefficients(m: usize, max: usize, q: QParam) -> Coefficients {
    let qn = |k: usize| q_number(k as u64, q);
    let mut acc = Coefficients::new(max);
    let here = weight_terms(m, max, q);
    let bulk: f64 = (1..=m).map(|k| (1.0 + q.pow(k as u64)) / qn(k)).sum();
    for &(p, r, c) in &here {
        acc.add(p, r, bulk * c);
        for a in 1..=max {
            acc.add(p, r + a, c / qn(a));
            acc.add(p + a, r, c / qn(a));
        }
    }
    for k in 1..=max {
        let rate = (1.0 + q.pow(k as u64)) / qn(k);
        for (p, r, c) in weight_terms(m + k, max, q) {
            acc.add(p, r, -rate * c);
        }
    }
    for k in 1..=m {
        let rate = 1.0 / qn(k);
        for (p, r, c) in weight_terms(m - k, max, q) {
            acc.add(p, r + k, -rate * c);
            acc.add(p + k, r, -rate * c);
        }
    }
    acc
}

/// The four reshuffled sums for the coefficient of `β^p`, returned as
/// `(T1 + T3, T2 + T4, largest single term)`.
fn reshuffled(m: usize, p: usize, q: QParam) -> (f64, f64, f64) {
    let qn = |k: usize| q_number(k as u64, q);
    let (mut first, mut second, mut scale) = (0.0, 0.0, 0.0f64);
    let mut note = |acc: &mut f64, c: f64| {
        *acc += c;
        scale = scale.max(c.abs());
    };
    if p > m {
        for k in 1..=m {
            note(&mut first, (1.0 + q.pow(k as u64)) / (qn(k) * qn(p)));
            note(&mut second, -1.0 / (qn(k) * qn(p - k)));
        }
    }
    if p >= m + 2 {
        for k in 1..=p - m - 1 {
            note(&mut second, 1.0 / (qn(k) * qn(p - k)));
            note(&mut first, -(1.0 + q.pow(k as u64)) / (qn(k) * qn(p)));
        }
    }
    (first, second, scale)
}

/// `(1/[p]) Σ_{k=lo}^{hi} (1/[k] - 1/[p-k])` and its largest term.
fn symmetric_sum(p: usize, lo: usize, hi: usize, q: QParam) -> (f64, f64) {
    let qn = |k: usize| q_number(k as u64, q);
    let (mut sum, mut scale) = (0.0, 0.0f64);
    for k in lo..=hi {
        let (a, b) = (1.0 / (qn(k) * qn(p)), 1.0 / (qn(p - k) * qn(p)));
        sum += a - b;
        scale = scale.max(a).max(b);
    }
    (sum, scale)
}

fn single(m: usize, max: usize, q: QParam) -> AppendixBReport {
    let mut report = AppendixBReport::default();
    let acc = stationarity_coefficients(m, max, q);
    for p in 0..=max {
        for r in 0..=max - p {
            let (v, s) = acc.get(p, r);
            report.direct = report.direct.max(relative(v, s));
        }
    }

    for p in m + 1..=max {
        let (a, b, scale) = reshuffled(m, p, q);
        let total = a + b;
        // The pure-U coefficient is the reshuffled sum; the pure-L one is its negative.
        let (u, su) = acc.get(0, p);
        let (l, sl) = acc.get(p, 0);
        let s = scale.max(su).max(sl);
        report.reshuffle = report
            .reshuffle
            .max(relative(u - total, s))
            .max(relative(l + total, s));

        let (case, case_scale) = if p == m + 1 {
            symmetric_sum(p, 1, m, q)
        } else if p <= 2 * m {
            symmetric_sum(p, p - m, m, q)
        } else if p == 2 * m + 1 {
            // Both halves cancel on their own.
            report.case_split = report
                .case_split
                .max(relative(a, scale))
                .max(relative(b, scale));
            continue;
        } else {
            let (v, s) = symmetric_sum(p, m + 1, p - m - 1, q);
            (-v, s)
        };
        let s = case_scale.max(scale);
        let defect = relative(case, s).max(relative(case - total, s));
        let slot = if p == m + 1 {
            &mut report.case_first
        } else if p <= 2 * m {
            &mut report.case_middle
        } else {
            &mut report.case_high
        };
        *slot = slot.max(defect);
    }

    // Mixed terms: full antisymmetric double sum minus its triangle k + l <= m.
    let qn = |k: usize| q_number(k as u64, q);
    for p in 1..=max {
        for r in 1..=max - p {
            let full = 1.0 / (qn(r) * qn(p)) - 1.0 / (qn(p) * qn(r));
            let triangle = if p + r <= m { full } else { 0.0 };
            let folded = full - triangle;
            let (v, s) = acc.get(p, r);
            let s = s.max(1.0 / (qn(r) * qn(p)));
            report.mixed = report.mixed.max(relative(folded, s)).max(relative(v + folded, s));
        }
    }
    report
}

/// Runs the cancellation check for every `m <= m_max` and total power
/// `<= p_max`.
pub fn n1_coefficient_cancellation(m_max: usize, p_max: usize, q: QParam) -> AppendixBReport {
    let mut report = AppendixBReport::default();
    for m in 0..=m_max {
        report.merge(&single(m, p_max, q));
    }
    report
}
