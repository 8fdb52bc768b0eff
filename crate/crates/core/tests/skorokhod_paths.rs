use std::sync::Arc;

use proptest::prelude::*;
use weakkam::geometry::{ImplicitDomain, ObliqueField};
use weakkam::point;
use weakkam::skorokhod::{
    solve_reflected, validate_triple, InputSignal, ReflectedOptions, TripleTolerances,
};

fn disk() -> ImplicitDomain<f64> {
    ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap()
}

#[test]
fn tangent_plus_normal_push_follows_circle() {
    let d = disk();
    let f = ObliqueField::normal(&d).unwrap();
    let v = InputSignal::from_fn(1.0, 256, |t: f64| [t.cos() - t.sin(), t.sin() + t.cos()]);
    let sol = solve_reflected(&d, &f, [1.0, 0.0], &v, 1e-3, &ReflectedOptions::default()).unwrap();
    let tr = &sol.triple;
    let mut worst = 0.0f64;
    for (t, eta) in tr.t_grid.iter().zip(&tr.eta) {
        worst = worst.max(point::dist(*eta, [t.cos(), t.sin()]));
    }
    assert!(worst < 1e-2, "path error {worst}");
    let eps = *sol.epsilons.last().unwrap();
    for (t, l) in tr.t_grid.iter().zip(&tr.l) {
        if *t >= 5.0 * eps {
            assert!((l - 1.0).abs() < 0.05, "l({t}) = {l}");
        }
    }
    let rep = validate_triple(&d, &f, tr, &sol.tolerances);
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn constant_tangential_input_matches_gudermannian() {
    // theta' = cos(theta) on the unit circle: theta = atan(sinh t), l = tanh t
    let d = disk();
    let f = ObliqueField::normal(&d).unwrap();
    let v = InputSignal::constant([0.0, 1.0], 1.0, 256);
    let sol = solve_reflected(&d, &f, [1.0, 0.0], &v, 1e-3, &ReflectedOptions::default()).unwrap();
    let tr = &sol.triple;
    let eps = *sol.epsilons.last().unwrap();
    for i in 0..tr.len() {
        let t = tr.t_grid[i];
        let th = t.sinh().atan();
        assert!(point::dist(tr.eta[i], [th.cos(), th.sin()]) < 1e-2);
        if t >= 5.0 * eps {
            assert!((tr.l[i] - t.tanh()).abs() < 0.05, "l({t}) = {}", tr.l[i]);
        }
    }
}

#[test]
fn interior_motion_is_free() {
    let d = disk();
    let f = ObliqueField::normal(&d).unwrap();
    let v = InputSignal::constant([0.3, -0.2], 1.0, 64);
    let sol = solve_reflected(&d, &f, [0.0, 0.0], &v, 1e-4, &ReflectedOptions::default()).unwrap();
    for (t, eta) in sol.triple.t_grid.iter().zip(&sol.triple.eta) {
        assert!(point::dist(*eta, [0.3 * t, -0.2 * t]) < 1e-12);
    }
    assert!(sol.triple.l.iter().all(|&l| l == 0.0));
}

#[test]
fn outward_push_in_one_dimension_pins_endpoint() {
    let d = ImplicitDomain::<f64>::interval(-1.0, 1.0).unwrap();
    let f = ObliqueField::normal(&d).unwrap();
    let v = InputSignal::constant([2.0, 0.0], 1.0, 128);
    let sol = solve_reflected(&d, &f, [0.0, 0.0], &v, 1e-3, &ReflectedOptions::default()).unwrap();
    let tr = &sol.triple;
    for (t, (eta, l)) in tr.t_grid.iter().zip(tr.eta.iter().zip(&tr.l)) {
        let exact = (2.0 * t).min(1.0);
        assert!((eta[0] - exact).abs() < 1e-2, "eta({t}) = {}", eta[0]);
        if *t > 0.6 {
            assert!((l - 2.0).abs() < 0.1, "l({t}) = {l}");
        }
    }
}

#[test]
fn concatenation_restarts_consistently() {
    let d = disk();
    let f = ObliqueField::rotated_normal(&d, 0.5, Arc::new(|_| 0.0)).unwrap();
    let v = InputSignal::from_fn(2.0, 256, |t: f64| [1.0, (3.0 * t).sin()]);
    let opts = ReflectedOptions { h_ode: Some(2.0 / 8192.0), ..ReflectedOptions::default() };
    let whole = solve_reflected(&d, &f, [0.0, 0.0], &v, 1e-3, &opts).unwrap();
    let mid = whole.triple.eta[128];
    let second = solve_reflected(&d, &f, mid, &v.tail(128), 1e-3, &opts).unwrap();
    let gap = (0..=128)
        .map(|i| point::dist(whole.triple.eta[128 + i], second.triple.eta[i]))
        .fold(0.0, f64::max);
    assert!(gap < 1e-2, "restart gap {gap}");
}

#[test]
fn stability_in_the_input() {
    let d = disk();
    let f = ObliqueField::rotated_normal(&d, -0.4, Arc::new(|_| 0.0)).unwrap();
    let v1 = InputSignal::from_fn(1.0, 128, |t: f64| [1.5, t.cos()]);
    let v2 = InputSignal::from_fn(1.0, 128, |t: f64| [1.5 + 0.05 * (7.0 * t).sin(), t.cos()]);
    let opts = ReflectedOptions::default();
    let a = solve_reflected(&d, &f, [0.2, 0.0], &v1, 1e-3, &opts).unwrap();
    let b = solve_reflected(&d, &f, [0.2, 0.0], &v2, 1e-3, &opts).unwrap();
    let sup = a.triple.eta.iter().zip(&b.triple.eta).map(|(&p, &q)| point::dist(p, q)).fold(0.0, f64::max);
    let l1 = v1.l1_distance(&v2);
    assert!(sup <= 10.0 * l1 + 1e-3, "sup {sup} vs l1 {l1}");
}

#[test]
fn zero_horizon_like_input_rejects_outside_start() {
    let d = disk();
    let f = ObliqueField::normal(&d).unwrap();
    let v = InputSignal::constant([0.0, 0.0], 1.0, 4);
    assert!(solve_reflected(&d, &f, [2.0, 0.0], &v, 1e-3, &ReflectedOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reflected_paths_satisfy_all_clauses(
        theta in -1.0f64..1.0,
        vx in -2.0f64..2.0,
        vy in -2.0f64..2.0,
        w in 0.0f64..4.0,
        r0 in 0.0f64..0.9,
    ) {
        let d = disk();
        let f = ObliqueField::rotated_normal(&d, theta, Arc::new(|_| 0.0)).unwrap();
        let v = InputSignal::from_fn(1.0, 64, |t: f64| [vx + (w * t).cos(), vy]);
        let sol = solve_reflected(&d, &f, [r0, 0.0], &v, 2e-3, &ReflectedOptions::default()).unwrap();
        let tol = TripleTolerances { speed_factor: Some(1.1), ..sol.tolerances };
        let rep = validate_triple(&d, &f, &sol.triple, &tol);
        prop_assert!(rep.passed(), "{:?}", rep);
        prop_assert!(sol.triple.l.iter().all(|&l| l >= 0.0));
    }
}
