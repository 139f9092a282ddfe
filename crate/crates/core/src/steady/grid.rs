//! Nested Jackson integrals of product integrands on the two geometric grids.
//!
//! For `∫_L^U d_γt_1 ∫_{t_1}^U d_γt_2 ⋯ ∫_{t_{N-1}}^U d_γt_N Π w_ℓ(t_ℓ)` every
//! level is only ever evaluated on the grids `Uγ^n` and `Lγ^n`. Writing
//! `I_ℓ(x) = ∫_x^U w_ℓ(t) I_{ℓ+1}(t) d_γt` (with `I_N ≡ 1`), the values on the
//! upper grid are prefix sums `I_ℓ(Uγ^n) = Σ_{j<n} u_j` and the values on the
//! lower grid are `I_ℓ(Lγ^n) = Σ_j u_j - Σ_{i>=n} a_i`, where `u` and `a` are
//! the Jackson terms of level `ℓ` on each grid. Levels are filled from the
//! innermost outwards, so a grid of `K` points costs `O(N K)`.

use crate::error::{MadmError, Result};
use crate::qcalc::{QParam, TruncationPolicy};
use crate::series::Series;

pub const DEFAULT_GRID_CAP: usize = 10_000;

const INITIAL_POINTS: usize = 64;

/// `∫ 𝓓_γt^N Π_ℓ weights[ℓ](t_ℓ)` with limits `lower` and `upper`.
pub fn nested_integral(
    weights: &[&dyn Fn(f64) -> f64],
    lower: f64,
    upper: f64,
    q: QParam,
    pol: TruncationPolicy,
    grid_cap: usize,
) -> Result<f64> {
    if weights.is_empty() {
        return Ok(1.0);
    }
    let mut points = INITIAL_POINTS.min(grid_cap.max(1));
    loop {
        if let Some(v) = attempt(weights, lower, upper, q, pol, points)? {
            return Ok(v);
        }
        if points >= grid_cap {
            return Err(MadmError::DepthCap { cap: grid_cap });
        }
        points = (points * 2).min(grid_cap);
    }
}

/// One pass with a fixed number of grid points; `None` if some level's
/// series has not converged within them.
fn attempt(
    weights: &[&dyn Fn(f64) -> f64],
    lower: f64,
    upper: f64,
    q: QParam,
    pol: TruncationPolicy,
    points: usize,
) -> Result<Option<f64>> {
    let gamma = q.gamma();
    let mut scale = Vec::with_capacity(points);
    let mut w = 1.0;
    for _ in 0..points {
        scale.push(w);
        w *= gamma;
    }
    let mut inner_u = vec![1.0; points];
    let mut inner_l = vec![1.0; points];
    let mut next_u = vec![0.0; points];
    let mut next_l = vec![0.0; points];
    let mut result = 0.0;

    for (level, weight) in weights.iter().enumerate().rev() {
        let mut su = Series::new("nested grid (upper)", pol, gamma);
        let mut sl = Series::new("nested grid (lower)", pol, gamma);
        let (mut conv_u, mut conv_l) = (false, false);
        let mut prefix_u = 0.0;
        let mut prefix_l = 0.0;
        // next_u[n] = Σ_{j<n} u_j; next_l holds prefix sums of a for now.
        for n in 0..points {
            let tu = upper * scale[n];
            let tl = lower * scale[n];
            let u = (1.0 - gamma) * tu * weight(tu) * inner_u[n];
            let a = (1.0 - gamma) * tl * weight(tl) * inner_l[n];
            next_u[n] = prefix_u;
            next_l[n] = prefix_l;
            prefix_u += u;
            prefix_l += a;
            if !conv_u {
                conv_u = push(&mut su, u)?;
            }
            if !conv_l {
                conv_l = push(&mut sl, a)?;
            }
        }
        if !(conv_u && conv_l) {
            return Ok(None);
        }
        let (total_u, total_l) = (prefix_u, prefix_l);
        if level == 0 {
            result = total_u - total_l;
            break;
        }
        for v in next_l.iter_mut() {
            *v += total_u - total_l;
        }
        std::mem::swap(&mut inner_u, &mut next_u);
        std::mem::swap(&mut inner_l, &mut next_l);
    }
    Ok(Some(result))
}

/// Series push that treats hitting `max_terms` as "not yet converged" so the
/// caller can enlarge the grid instead.
fn push(series: &mut Series, term: f64) -> Result<bool> {
    match series.push(term) {
        Ok(done) => Ok(done),
        Err(MadmError::NonConvergence { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}
