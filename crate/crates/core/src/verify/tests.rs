use approx::assert_relative_eq;

use super::*;
use crate::qcalc::q_derivative;
use crate::steady::equilibrium_probability;

fn pol() -> TruncationPolicy {
    TruncationPolicy::default()
}

fn q(g: f64) -> QParam {
    QParam::new(g).unwrap()
}

fn params(g: f64, bl: f64, br: f64, n: usize) -> ModelParams {
    ModelParams::new(g, bl, br, n).unwrap()
}

#[test]
fn residual_relative_and_pass_rule() {
    let r = Residual::new(-2e-10, 4.0);
    assert_eq!(r.relative, 5e-11);
    assert!(r.passes(1e-10));
    assert!(!r.passes(1e-11));
    let zero = Residual::new(0.0, 0.0);
    assert_eq!(zero.relative, 0.0);
    assert!(!zero.passes(1.0), "a zero scale never passes");
    assert_eq!(Residual::new(1.0, 0.0).relative, f64::INFINITY);
}

#[test]
fn lambda_vector_validation() {
    assert!(LambdaVector::new(vec![0.3, 0.7]).is_ok());
    assert!(LambdaVector::new(vec![]).is_err());
    assert!(LambdaVector::new(vec![0.3, 1.0]).is_err());
    assert!(LambdaVector::new(vec![0.0]).is_err());
}

#[test]
fn big_f_is_the_q_antiderivative_of_f() {
    for (g, l) in [(0.5, 0.3), (0.9, 0.8), (0.3, 0.05)] {
        for t in [0.1, 0.35, 0.6] {
            let d = q_derivative(|x| big_f_lambda(l, x, 0.0, q(g), pol()).unwrap(), t, q(g)).unwrap();
            assert_relative_eq!(d, f_lambda(l, t), max_relative = 1e-12);
        }
    }
    assert_eq!(big_f_lambda(0.4, 0.0, 2.5, q(0.5), pol()).unwrap(), 2.5);
}

#[test]
fn stationarity_examples() {
    let p = params(0.5, 0.2, 0.8, 1);
    let r = stationarity_residual(&Configuration::new(vec![3]), &p, pol()).unwrap();
    assert!(r.passes(1e-8), "{r:?}");

    let ev = SteadyStateEvaluator::new(p, pol()).unwrap();
    let perturbed = |m: &[u64]| -> Result<f64> {
        let v = ev.probability(m)?;
        Ok(if m == [0] { v * 1.01 } else { v })
    };
    let r = stationarity_residual_with(perturbed, &Configuration::new(vec![0]), &p, pol()).unwrap();
    assert!(r.relative > 1e-4, "{r:?}");

    let eq = ModelParams::equilibrium(0.6, 0.3, 2).unwrap();
    for m in [[0, 0], [2, 1], [3, 3]] {
        let r = stationarity_residual_with(
            |c| Ok(equilibrium_probability(c, 0.3)),
            &Configuration::new(m.to_vec()),
            &eq,
            pol(),
        )
        .unwrap();
        assert!(r.passes(1e-10), "{r:?}");
    }
}

#[test]
fn stationarity_rejects_wrong_lattice() {
    let p = params(0.5, 0.2, 0.8, 2);
    assert!(stationarity_residual(&Configuration::new(vec![0]), &p, pol()).is_err());
}

#[test]
fn master_identity_one_site() {
    let p = params(0.5, 0.3, 0.8, 1);
    for l in [0.1, 0.5, 0.9] {
        let r = master_identity_residual(&LambdaVector::new(vec![l]).unwrap(), &p, pol()).unwrap();
        assert!(r.passes(1e-9), "{r:?}");
    }
}

#[test]
fn master_identity_two_sites() {
    let lambda = LambdaVector::new(vec![0.3, 0.7]).unwrap();
    // Default cell: every nested integral vanishes, so the check is 0 = 0.
    let r = master_identity_residual(&lambda, &params(0.5, 0.2, 0.4, 2), pol()).unwrap();
    assert_eq!((r.value, r.scale), (0.0, 0.0));
    let p = params(0.5, 0.2, 0.45, 2);
    let r = master_identity_residual(&lambda, &p, pol()).unwrap();
    assert!(r.passes(1e-8), "{r:?}");
    assert!(r.scale > 1e-6);
    // Each j-term cancels on its own.
    for t in master_identity_terms(&lambda, &p, pol(), 0.0).unwrap() {
        assert!(t.passes(1e-8), "{t:?}");
    }
}

#[test]
fn master_identity_ignores_integration_constant() {
    let lambda = LambdaVector::new(vec![0.2, 0.6, 0.9]).unwrap();
    let p = params(0.6, 0.5, 0.5, 3);
    let base = master_identity_residual(&lambda, &p, pol()).unwrap();
    let shifted = master_identity_residual_shifted(&lambda, &p, pol(), 3.7).unwrap();
    assert!(base.passes(1e-8) && shifted.passes(1e-8));
    assert!((base.value - shifted.value).abs() < 1e-8 * base.scale.max(shifted.scale));
}

#[test]
fn master_identity_pieces_scale_with_one_minus_lambda() {
    let p = params(0.5, 0.3, 0.8, 2);
    let at = |l: f64| master_identity_residual(&LambdaVector::new(vec![l, l]).unwrap(), &p, pol()).unwrap();
    let (a, b) = (at(1.0 - 1e-2), at(1.0 - 1e-3));
    let ratio = a.scale / b.scale;
    assert!((9.0..11.0).contains(&ratio), "{ratio}");
    assert!(b.value.abs() <= a.value.abs().max(1e-15 * a.scale));
}

#[test]
fn master_identity_rejects_wrong_length() {
    let lambda = LambdaVector::new(vec![0.3]).unwrap();
    assert!(master_identity_residual(&lambda, &params(0.5, 0.3, 0.8, 2), pol()).is_err());
}

/// Direct double sum over both grids with a fixed number of points.
fn brute_nested(g: impl Fn(f64, f64) -> f64, a: f64, b: f64, gamma: f64, swapped: bool) -> f64 {
    let n = 400;
    let upper = gamma * b;
    let jackson = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> f64 {
        let grid = |x: f64| (0..n).map(|k| x * gamma.powi(k) * f(x * gamma.powi(k))).sum::<f64>();
        (1.0 - gamma) * (grid(hi) - grid(lo))
    };
    if swapped {
        jackson(&|s| jackson(&|t| g(t, s), a, s), a, upper)
    } else {
        jackson(&|t| jackson(&|s| g(t, s), t, upper), a, upper)
    }
}

#[test]
fn interchange_examples() {
    let (a, b, g) = (0.1, 0.6, 0.5);
    let terms = interchange_terms(|_, _| 1.0, a, b, q(g), pol()).unwrap();
    let u = g * b;
    // ∫_a^U (U - t) d_γt in closed form.
    let exact = u * (u - a) - (u * u - a * a) / (1.0 + g);
    assert_relative_eq!(terms.lhs, exact, max_relative = 1e-13);
    assert!(terms.residual().passes(1e-12));

    let ts = |t: f64, s: f64| t * s;
    // γb = a: every term vanishes.
    let r = interchange_residual(ts, 0.2, 0.4, q(0.5), pol()).unwrap();
    assert_eq!((r.value, r.scale), (0.0, 0.0));
    let terms = interchange_terms(ts, 0.2, 0.9, q(0.5), pol()).unwrap();
    assert_relative_eq!(terms.lhs, brute_nested(ts, 0.2, 0.9, 0.5, false), max_relative = 1e-12);
    assert_relative_eq!(terms.swapped, brute_nested(ts, 0.2, 0.9, 0.5, true), max_relative = 1e-12);
    assert!(terms.residual().passes(1e-11));
}

#[test]
fn interchange_correction_vanishes_near_one() {
    let wide = TruncationPolicy {
        max_terms: 200_000,
        ..pol()
    };
    let g = |t: f64, s: f64| 1.0 / ((1.0 - t) * (1.0 - s));
    let (a, b) = (0.2, 0.6);
    // |g(s, s) s| <= 0.6/0.16 on [a, b], over an interval shorter than 1.
    let bound = 0.6 / 0.16;
    let mut prev = None;
    for gamma in [0.9, 0.99, 0.999] {
        let c = interchange_correction(g, a, b, q(gamma), wide).unwrap();
        assert!(c.abs() <= (1.0 - gamma) * bound);
        if let Some(p) = prev {
            let ratio = p / c;
            assert!((5.0..=20.0).contains(&ratio), "{ratio}");
        }
        prev = Some(c);
    }
}

#[test]
fn ibp_examples() {
    let r = ibp_residual(|t| t, 0.2, 0.7, q(0.5), pol()).unwrap();
    assert!(r.passes(1e-13), "{r:?}");
    let r = ibp_residual(|t| 1.0 / (1.0 - t), 0.1, 0.5, q(0.5), pol()).unwrap();
    assert!(r.passes(1e-11), "{r:?}");
    let r = ibp_residual(f64::exp, 0.3, 0.3, q(0.5), pol()).unwrap();
    assert_eq!(r.value, 0.0);
    // A wrong antiderivative is detected.
    let r = ibp_residual(|t| t * t, 0.1, 0.9, q(0.5), pol()).unwrap();
    let off = r.value + 0.01;
    assert!(Residual::new(off, r.scale).relative > 1e-3);
}

#[test]
fn appendix_b_cancellation() {
    for g in [0.3, 0.5, 0.9] {
        let report = n1_coefficient_cancellation(3, 12, q(g));
        assert!(report.max() < 1e-12, "{report:?}");
    }
    // First case by hand: Σ_{k=1}^m (1/[k] - 1/[m+1-k]) is a sum of opposite pairs.
    let m = 3u64;
    let s: f64 = (1..=m)
        .map(|k| 1.0 / q_number(k, q(0.7)) - 1.0 / q_number(m + 1 - k, q(0.7)))
        .sum();
    assert!(s.abs() < 1e-15);
}

#[test]
fn kernel_residual_shrinks_with_box_and_is_explained_by_leak() {
    let p = params(0.5, 0.2, 0.4, 2);
    let mut prev = f64::INFINITY;
    for cap in [2, 4, 6, 8] {
        let r = kernel_check(&p, cap, pol()).unwrap();
        assert!(r.explained_by_leak(1e-9), "{r:?}");
        assert!(r.residual.value < prev);
        prev = r.residual.value;
    }
}

#[test]
fn kernel_equilibrium_and_single_state() {
    let eq = ModelParams::equilibrium(0.5, 0.3, 2).unwrap();
    for cap in [2, 3, 5] {
        let r = kernel_check_equilibrium(&eq, cap, pol()).unwrap();
        assert!(r.explained_by_leak(1e-9), "{r:?}");
        let exact = kernel_check(&eq, cap, pol()).unwrap();
        assert!(exact.explained_by_leak(1e-9));
    }
    let p = params(0.5, 0.2, 0.8, 1);
    let r = kernel_check(&p, 0, pol()).unwrap();
    let mu0 = SteadyStateEvaluator::new(p, pol()).unwrap().probability(&[0]).unwrap();
    assert_relative_eq!(r.residual.value, injection_rate(&p, pol()).unwrap() * mu0, max_relative = 1e-14);
    assert_relative_eq!(r.residual.value, r.leak_bound, max_relative = 1e-14);
    assert!(kernel_check_equilibrium(&p, 2, pol()).is_err());
}

#[test]
fn degeneracy_gap_detects_grid_coincidences() {
    assert_eq!(degeneracy_gap(&params(0.5, 0.2, 0.4, 1)), 0.0);
    assert_eq!(degeneracy_gap(&params(0.5, 0.2, 0.8, 2)), 0.0);
    assert!(degeneracy_gap(&params(0.5, 0.2, 0.8, 1)) > 0.5);
}

#[test]
fn battery_subsets_and_records() {
    let p = params(0.5, 0.2, 0.4, 2);
    let mut cfg = BatteryConfig::new(p);
    cfg.cells.clear();
    let recs = run_battery(&cfg, &[CheckKind::Ibp]).unwrap();
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().all(|r| r.check == CheckKind::Ibp && r.passed));

    let recs = run_battery(&cfg, &[CheckKind::Stationarity, CheckKind::Kernel]).unwrap();
    assert_eq!(recs.len(), 16 + 4);
    assert!(recs.iter().all(|r| r.passed), "{recs:#?}");

    // The degenerate user cell is skipped by the master check.
    let recs = run_battery(&cfg, &[CheckKind::Master]).unwrap();
    assert!(recs.is_empty());

    let json = serde_json::to_string(&recs).unwrap();
    let back: Vec<VerificationRecord> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, recs);
}

#[test]
fn battery_detects_perturbed_measure() {
    let mut cfg = BatteryConfig::new(params(0.5, 0.2, 0.4, 2));
    cfg.cells.clear();
    cfg.perturb_mu = Some(1e-2);
    let recs = run_battery(&cfg, &[CheckKind::Stationarity]).unwrap();
    let failed: Vec<_> = recs.iter().filter(|r| !r.passed).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().any(|r| r.inputs["m"] == serde_json::json!([0, 0])));
}

#[test]
fn lambda_draws_are_reproducible() {
    let a = draw_lambdas(42, 3, 5, 2);
    assert_eq!(a, draw_lambdas(42, 3, 5, 2));
    assert_ne!(a, draw_lambdas(42, 4, 5, 2));
    assert!(a.iter().flat_map(|l| l.as_slice()).all(|&x| (0.05..0.95).contains(&x)));
}

#[test]
fn check_names_round_trip() {
    for k in CheckKind::ALL {
        assert_eq!(CheckKind::parse(k.name()), Some(k));
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(json, format!("\"{}\"", k.name()));
    }
    assert_eq!(CheckKind::parse("bogus"), None);
}
