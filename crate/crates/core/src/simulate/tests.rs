use std::collections::HashMap;

use super::*;
use crate::model::{enabled_events, total_exit_rate};
use crate::qcalc::phi;
use crate::steady::{equilibrium_probability, SteadyStateEvaluator};

fn pol() -> TruncationPolicy {
    TruncationPolicy::default()
}

fn q(g: f64) -> QParam {
    QParam::new(g).unwrap()
}

#[test]
fn replica_seeds_are_distinct_and_stable() {
    let seeds: Vec<u64> = (0..64).map(|i| replica_seed(42, i)).collect();
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), seeds.len());
    assert_eq!(replica_seed(42, 3), replica_seed(42, 3));
    assert_ne!(replica_seed(42, 0), replica_seed(43, 0));
}

#[test]
fn injection_size_small_u_and_small_beta() {
    assert_eq!(sample_injection_size(0.5, q(0.5), 0.0, pol()).unwrap(), 1);
    assert_eq!(sample_injection_size(0.5, q(0.5), 1e-12, pol()).unwrap(), 1);
    // p(1) = 1 - O(β) as β -> 0.
    assert_eq!(sample_injection_size(1e-6, q(0.5), 0.999, pol()).unwrap(), 1);
    assert!(sample_injection_size(0.5, q(0.5), 1.0, pol()).is_err());
    assert!(sample_injection_size(1.0, q(0.5), 0.5, pol()).is_err());
}

#[test]
fn injection_size_matches_hand_inverted_table() {
    // p(k) = 0.5^k/[k] / Σ_j 0.5^j/[j] at γ = 0.5, tabulated to 100 terms.
    let num: Vec<f64> = (1..=100)
        .map(|k| 0.5f64.powi(k) * 0.5 / (1.0 - 0.5f64.powi(k)))
        .collect();
    let z: f64 = num.iter().sum();
    let p: Vec<f64> = num.iter().map(|x| x / z).collect();
    let expected = [0.62240, 0.20747, 0.08891, 0.04149, 0.02008];
    for (a, b) in p.iter().zip(expected) {
        assert!((a - b).abs() < 5e-5, "{a} vs {b}");
    }
    // Cumulative 0.6224, 0.8299, 0.9188: u = 0.9 falls in the third atom.
    assert_eq!(sample_injection_size(0.5, q(0.5), 0.9, pol()).unwrap(), 3);
    let sampler = InjectionSampler::new(0.5, q(0.5), pol()).unwrap();
    for (a, b) in sampler.probabilities(5).iter().zip(&p) {
        assert!((a - b).abs() < 1e-13);
    }
    assert_eq!(sampler.total(), phi(0, 0.5, q(0.5), pol()).unwrap());
}

#[test]
fn empty_lattice_steps_are_injections() {
    let p = ModelParams::new(0.5, 0.2, 0.4, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let (ev, wait, next) = step(&Configuration::empty(3), &mut rng, &p, pol()).unwrap();
        assert!(ev.kind.is_injection());
        assert!(wait > 0.0);
        assert_eq!(next.total(), ev.k.unwrap());
    }
}

#[test]
fn particle_number_changes_only_at_boundaries() {
    let p = ModelParams::new(0.6, 0.5, 0.7, 4).unwrap();
    let mut sim = Simulator::new(p, pol()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut c = Configuration::empty(4);
    for _ in 0..20_000 {
        let before = c.total();
        let (ev, _) = sim.step(&mut c, &mut rng).unwrap();
        let k = ev.k.unwrap();
        match ev.kind {
            EventKind::BulkLeft | EventKind::BulkRight => assert_eq!(c.total(), before),
            EventKind::InjectLeft | EventKind::InjectRight => assert_eq!(c.total(), before + k),
            EventKind::ExtractLeft | EventKind::ExtractRight => assert_eq!(c.total(), before - k),
        }
        assert_eq!(ev.rate, ev.kind.rate(k, &p));
    }
}

#[test]
fn single_particle_left_injection_frequency() {
    let p = ModelParams::new(0.5, 0.6, 0.4, 2).unwrap();
    let mut sim = Simulator::new(p, pol()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut c = Configuration::empty(2);
    let (mut ones, mut total) = (0u64, 0u64);
    for _ in 0..100_000 {
        let (ev, _) = sim.step(&mut c, &mut rng).unwrap();
        if ev.kind == EventKind::InjectLeft {
            total += 1;
            ones += (ev.k == Some(1)) as u64;
        }
    }
    let p1 = 0.6 / phi(0, 0.6, p.q, pol()).unwrap();
    let n = total as f64;
    let z = (ones as f64 - n * p1) / (n * p1 * (1.0 - p1)).sqrt();
    assert!(total > 10_000);
    assert!(z.abs() < 3.0, "z = {z}");
}

#[test]
fn event_frequencies_match_rates_in_visited_states() {
    let p = ModelParams::new(0.5, 0.3, 0.6, 2).unwrap();
    let mut sim = Simulator::new(p, pol()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut c = Configuration::empty(2);
    let mut counts: HashMap<Vec<u64>, HashMap<(EventKind, usize, u64), u64>> = HashMap::new();
    for _ in 0..300_000 {
        let from = c.occupations().to_vec();
        let (ev, _) = sim.step(&mut c, &mut rng).unwrap();
        *counts.entry(from).or_default().entry((ev.kind, ev.site, ev.k.unwrap())).or_default() += 1;
    }
    let mut states: Vec<_> = counts.iter().map(|(s, e)| (e.values().sum::<u64>(), s.clone())).collect();
    states.sort_unstable_by(|a, b| b.cmp(a));
    for (n, state) in states.into_iter().take(5) {
        let cfg = Configuration::new(state.clone());
        let exit = total_exit_rate(&cfg, &p, pol()).unwrap();
        let observed = &counts[&state];
        let n = n as f64;
        for ev in enabled_events(&cfg, &p, pol()).unwrap() {
            let (prob, seen) = match ev.k {
                Some(k) => (ev.rate / exit, observed.get(&(ev.kind, ev.site, k)).copied().unwrap_or(0)),
                None => {
                    let all: u64 = observed
                        .iter()
                        .filter(|((kind, _, _), _)| *kind == ev.kind)
                        .map(|(_, v)| v)
                        .sum();
                    (ev.rate / exit, all)
                }
            };
            let z = (seen as f64 - n * prob) / (n * prob * (1.0 - prob)).sqrt();
            assert!(z.abs() < 4.0, "state {state:?} {ev:?}: z = {z}");
        }
    }
}

fn short_config(p: ModelParams, t_measure: f64, replicas: usize) -> SimConfig {
    SimConfig::new(p, 42, 100.0, t_measure, replicas).unwrap()
}

#[test]
fn fixed_seed_is_bit_identical() {
    let cfg = short_config(ModelParams::new(0.5, 0.2, 0.4, 2).unwrap(), 500.0, 3);
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a, b);
    let other = run(&SimConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn sojourn_time_accounting() {
    let cfg = short_config(ModelParams::new(0.6, 0.5, 0.3, 3).unwrap(), 1_000.0, 2);
    let s = run(&cfg).unwrap();
    assert_eq!(s.replicas, 2);
    assert!((s.total_time - 2_000.0).abs() < 1e-8);
    for site in 0..3 {
        let sum: f64 = s.histograms[site].iter().sum();
        assert!((sum - s.total_time).abs() < 1e-8 * s.total_time);
    }
    assert_eq!(s.batch_histograms.len(), 2 * cfg.batches);
    for b in &s.batch_histograms {
        let sum: f64 = b[0].iter().sum();
        assert!((sum - s.batch_time).abs() < 1e-8 * s.batch_time);
    }
    assert!(s.event_counts.iter().all(|&c| c > 0));
}

#[test]
fn invalid_configs_are_rejected() {
    let p = ModelParams::new(0.5, 0.2, 0.4, 2).unwrap();
    assert!(SimConfig::new(p, 1, 0.0, 0.0, 1).is_err());
    assert!(SimConfig::new(p, 1, -1.0, 10.0, 1).is_err());
    assert!(SimConfig::new(p, 1, 0.0, 10.0, 0).is_err());
    assert!(SimConfig::new(p, 1, 0.0, f64::INFINITY, 1).is_err());
}

#[test]
fn occupations_are_not_clamped() {
    let p = ModelParams::new(0.99, 0.05, 0.9, 1).unwrap();
    let cfg = SimConfig::new(p, 9, 0.0, 2_000.0, 1).unwrap();
    let s = run(&cfg).unwrap();
    let ev = SteadyStateEvaluator::new(p, pol()).unwrap();
    let mean = ev.mean_occupation(0).unwrap();
    assert!(mean > 3.0, "exact mean {mean}");
    assert!(s.max_occupation() as f64 > 3.0 * mean, "max {}", s.max_occupation());
}

#[test]
fn short_equilibrium_run_matches_geometric_law() {
    let p = ModelParams::equilibrium(0.5, 0.3, 1).unwrap();
    let s = run(&short_config(p, 20_000.0, 2)).unwrap();
    let cmp = s
        .compare_marginals(|_, m| Ok(equilibrium_probability(&[m], 0.3)), 1e-3)
        .unwrap();
    assert!(cmp.len() >= 4);
    for c in cmp {
        assert!(c.z.abs() < 5.0, "{c:?}");
    }
    let exact_mean = 0.3 / 0.7;
    assert!((s.mean_occupation[0] - exact_mean).abs() < 5.0 * s.mean_stderr[0]);
}
