//! Truncated summation of geometrically decaying series.

use crate::error::{MadmError, Result};
use crate::qcalc::TruncationPolicy;

/// The estimated remaining tail must sit this far below the term threshold,
/// so returned sums are accurate well inside `rel_tol`.
const TAIL_FRACTION: f64 = 1e-2;

/// Running sum of a series with the shared stopping rule.
///
/// A term is "small" when both `|term|` and the geometric tail estimate
/// `|term| r/(1-r)` are below `rel_tol |sum| + abs_tol` (the latter with a
/// further factor [`TAIL_FRACTION`]), where `r` is the
/// larger of the caller's ratio bound and the observed ratio of the last two
/// terms. The series stops after two consecutive small terms.
#[derive(Debug, Clone)]
pub(crate) struct Series {
    pol: TruncationPolicy,
    ratio_bound: f64,
    name: &'static str,
    sum: f64,
    prev_abs: Option<f64>,
    streak: u8,
    terms: usize,
}

impl Series {
    pub(crate) fn new(name: &'static str, pol: TruncationPolicy, ratio_bound: f64) -> Self {
        Self {
            pol,
            ratio_bound: ratio_bound.clamp(0.0, 1.0),
            name,
            sum: 0.0,
            prev_abs: None,
            streak: 0,
            terms: 0,
        }
    }

    pub(crate) fn sum(&self) -> f64 {
        self.sum
    }

    /// Adds a term. Returns `Ok(true)` once the series has converged and
    /// errors when `max_terms` is reached first.
    pub(crate) fn push(&mut self, term: f64) -> Result<bool> {
        if !term.is_finite() {
            return Err(MadmError::Domain(format!(
                "non-finite term in series `{}`",
                self.name
            )));
        }
        self.sum += term;
        self.terms += 1;
        let abs = term.abs();
        let observed = match self.prev_abs {
            Some(p) if p > 0.0 => abs / p,
            Some(_) => 0.0,
            None => self.ratio_bound,
        };
        self.prev_abs = Some(abs);
        let r = self.ratio_bound.max(observed);
        let threshold = self.pol.rel_tol * self.sum.abs() + self.pol.abs_tol;
        let small = r < 1.0 && abs <= threshold && abs * r / (1.0 - r) <= TAIL_FRACTION * threshold;
        self.streak = if small { self.streak + 1 } else { 0 };
        if self.streak >= 2 {
            return Ok(true);
        }
        if self.terms >= self.pol.max_terms {
            return Err(MadmError::NonConvergence {
                series: self.name,
                terms: self.terms,
            });
        }
        Ok(false)
    }

    /// Sums `term(n)` for `n = start, start+1, ...` until convergence.
    pub(crate) fn sum_from<F>(mut self, start: u64, mut term: F) -> Result<f64>
    where
        F: FnMut(u64) -> Result<f64>,
    {
        let mut n = start;
        while !self.push(term(n)?)? {
            n += 1;
        }
        Ok(self.sum)
    }
}
