//! Independent oracles for the two-strand scenario.

use std::f64::consts::PI;

use tglab_core::convergence::{search_translators, SearchOutcome};
use tglab_core::dynamics::{accumulation_functional, builtin_scenario, Region};
use tglab_core::Element;

/// Lebesgue measure of `{t : t . x in V}` by brute-force sampling of the orbit.
fn brute_force_mass(sc: &tglab_core::dynamics::Scenario, v: &Region, n: usize) -> f64 {
    let action = sc.action();
    let x = sc.point(n);
    let reach = v.reach() + 2.0;
    let lo = -reach;
    let hi = 2.0 * n as f64 + PI + reach;
    let h = 1e-4;
    let steps = ((hi - lo) / h) as usize;
    let hits = (0..steps)
        .filter(|&i| {
            let t = Element::from_real(vec![lo + (i as f64 + 0.5) * h]);
            v.contains(&action.act(&t, &x).unwrap())
        })
        .count();
    hits as f64 * h
}

#[test]
fn preimage_mass_matches_orbit_sampling() {
    let sc = builtin_scenario("green").unwrap();
    for v in [&sc.neighborhoods[0], &sc.neighborhoods[2]] {
        for n in [6usize, 12, 25] {
            let oracle = brute_force_mass(&sc, v, n);
            let est = accumulation_functional(&sc, v, Some(n)).unwrap();
            assert!(
                (est.value - oracle).abs() <= est.error_bound + 1e-3,
                "n = {n}: {} vs {oracle}",
                est.value
            );
        }
    }
}

#[test]
fn mass_ratio_tends_to_two() {
    let sc = builtin_scenario("green").unwrap();
    for v in &sc.neighborhoods {
        let z = accumulation_functional(&sc, v, None).unwrap().value;
        for n in 10..=30 {
            let x = accumulation_functional(&sc, v, Some(n)).unwrap().value;
            assert!((x / z - 2.0).abs() <= 0.1, "n = {n}: ratio {}", x / z);
        }
    }
}

#[test]
fn second_translator_tracks_the_far_strand() {
    let sc = builtin_scenario("green").unwrap();
    let SearchOutcome::Found(cert) = search_translators(&sc, 2).unwrap() else {
        panic!("no translators for k = 2");
    };
    for &n in cert.indices.iter().filter(|&&n| n >= 10) {
        let t: Vec<f64> = (0..2)
            .map(|i| cert.translator(i, n).unwrap().real[0])
            .collect();
        let gap = (t[1] - t[0]).abs();
        let expected = 2.0 * n as f64 + PI;
        assert!(
            (gap - expected).abs() <= 0.01 * expected,
            "n = {n}: gap {gap}"
        );
    }
}
