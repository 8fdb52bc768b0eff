use std::sync::Arc;

use weakkam::geometry::{ImplicitDomain, ObliqueField};
use weakkam::hamiltonian::HamiltonianModel;
use weakkam::lax_oleinik::{Grid, GridField, SchemeConfig};
use weakkam::point;
use weakkam::weak_kam::*;

struct Setup {
    model: HamiltonianModel<f64>,
    field: ObliqueField<f64>,
    grid: Arc<Grid<f64>>,
}

fn disk(model: HamiltonianModel<f64>, h: f64) -> Setup {
    let d = ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap();
    let field = ObliqueField::normal(&d).unwrap();
    let grid = Arc::new(Grid::new(&d, h).unwrap());
    Setup { model, field, grid }
}

fn mechanical() -> HamiltonianModel<f64> {
    HamiltonianModel::mechanical(2, Arc::new(|x: [f64; 2]| x[0] * x[0] + x[1] * x[1])).unwrap()
}

fn graph(s: &Setup, a: f64) -> ActionGraph<f64> {
    build_action_graph(&s.model, &s.field, s.grid.clone(), a, &GraphConfig::default())
}

fn critical_graph(s: &Setup) -> (CriticalValue<f64>, ActionGraph<f64>) {
    let g = graph(s, 0.0);
    let cv = critical_value_cycle(&g, &CycleOptions::default()).unwrap();
    let gc = g.relevel(cv.c);
    (cv, gc)
}

/// Least action of reaching the origin from radius r when V = |x|^2:
/// int_0^r sqrt(2 V) = r^2 / sqrt(2).
fn maupertuis(r: f64) -> f64 {
    let n = 2000;
    let ds = r / n as f64;
    (0..n).map(|k| ((k as f64 + 0.5) * ds) * 2f64.sqrt() * ds).sum()
}

#[test]
fn kinetic_edge_weights_match_time_minimization() {
    let s = disk(HamiltonianModel::kinetic(2).unwrap(), 0.2);
    let g = graph(&s, 1.0);
    for e in 0..g.edge_count() {
        let len = point::dist(s.grid.node(g.source(e)), s.grid.node(g.target(e)));
        // min over tau of len^2 / (2 tau) + tau
        let (mut lo, mut hi) = (1e-6f64, 1e3f64);
        let f = |t: f64| len * len / (2.0 * t) + t;
        for _ in 0..300 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let oracle = f(0.5 * (lo + hi));
        assert!((g.weight(e) - oracle).abs() <= 1e-3 * oracle, "edge {e}: {} vs {oracle}", g.weight(e));
    }
}

#[test]
fn weights_are_affine_in_the_level() {
    let s = disk(mechanical(), 0.2);
    let g0 = graph(&s, 0.0);
    let g1 = g0.at_level(1.0);
    for e in 0..g0.edge_count() {
        assert!((g1.weight(e) - g0.weight(e) - g0.tau(e)).abs() <= 1e-12 * (1.0 + g1.weight(e).abs()));
        assert!(g0.tau(e) > 0.0);
    }
}

#[test]
fn reflected_edges_cost_their_tangential_motion_without_data() {
    let s = disk(HamiltonianModel::kinetic(2).unwrap(), 0.2);
    let g = graph(&s, 1.0);
    let mut compared = 0;
    for e in (0..g.edge_count()).filter(|&e| g.is_reflected(e)) {
        let (i, j) = (g.source(e), g.target(e));
        if let Some(p) = g.out_edges(i).find(|&p| !g.is_reflected(p) && g.target(p) == j) {
            assert!((g.weight(e) - g.weight(p)).abs() <= 1e-6 * g.weight(p));
            compared += 1;
        }
    }
    assert!(compared > 0);
}

#[test]
fn critical_values_of_kinetic_family() {
    let s = disk(HamiltonianModel::kinetic(2).unwrap(), 0.1);
    let g = graph(&s, 0.0);
    let c = critical_value_cycle(&g, &CycleOptions::default()).unwrap();
    assert!(c.c.abs() <= 1e-3, "{}", c.c);
    assert!(c.bracket.1 - c.bracket.0 <= 1e-4);

    let shifted = disk(HamiltonianModel::kinetic(2).unwrap().with_shift(1.0), 0.1);
    let gs = graph(&shifted, 0.0);
    let cs = critical_value_cycle(&gs, &CycleOptions::default()).unwrap();
    assert!((cs.c + 1.0).abs() <= 1e-2, "{}", cs.c);
    // H - delta moves the threshold by exactly -delta, up to the bracket width
    let width = (c.bracket.1 - c.bracket.0).max(cs.bracket.1 - cs.bracket.0);
    assert!((cs.c - (c.c - 1.0)).abs() <= 2.0 * width + 1e-12);
}

#[test]
fn mechanical_critical_value_and_potential_subsolution() {
    let s = disk(mechanical(), 0.1);
    let g = graph(&s, 0.0);
    let cv = critical_value_cycle(&g, &CycleOptions::default()).unwrap();
    assert!(cv.c.abs() <= 0.05);
    // the returned potential satisfies u(x) - u(y) <= w(x -> y)
    let gc = g.relevel(cv.c);
    for e in 0..gc.edge_count() {
        let (x, y) = (gc.source(e), gc.target(e));
        assert!(cv.potential[x] - cv.potential[y] <= gc.weight(e) + 1e-12);
    }
}

#[test]
fn slope_estimates() {
    let cfg = SchemeConfig::default();
    let s = disk(HamiltonianModel::kinetic(2).unwrap().with_shift(1.0), 0.1);
    let est = critical_value_slope(&s.model, &s.field, s.grid.clone(), 2.0, &cfg, 1e-3).unwrap();
    assert!((est.c + 1.0).abs() <= 0.02, "{}", est.c);
    let s = disk(HamiltonianModel::kinetic(2).unwrap(), 0.1);
    let est = critical_value_slope(&s.model, &s.field, s.grid.clone(), 2.0, &cfg, 1e-3).unwrap();
    assert!(est.c.abs() <= 1e-3, "{}", est.c);
}

#[test]
fn mechanical_cycle_and_slope_agree() {
    let s = disk(mechanical(), 0.05);
    let g = graph(&s, 0.0);
    let cfg = SchemeConfig { dt: Some(0.01), store_stride: usize::MAX, ..SchemeConfig::default() };
    let cv = critical_value(&s.model, &s.field, &g, 3.0, &cfg, 0.05).unwrap();
    assert!(cv.c.abs() <= 0.05);
    assert!(cv.gap.unwrap() <= 0.05, "{cv:?}");
}

#[test]
fn kinetic_potential_vanishes() {
    let s = disk(HamiltonianModel::kinetic(2).unwrap(), 0.1);
    let (_, gc) = critical_graph(&s);
    let d = mane_potential(&gc).unwrap();
    for i in 0..s.grid.len() {
        for &v in d.row(i).unwrap() {
            assert!(v.abs() <= 1e-3);
        }
    }
    let a = aubry_detect(&gc, &d, &AubryOptions::default()).unwrap();
    assert_eq!(a.set.len(), s.grid.len());
    assert!(!a.fallback);
    let u = representation(&d, &a.set, &vec![0.0; a.set.len()], 1e-9).unwrap();
    assert!(u.values.iter().all(|v| v.abs() <= 1e-3));
}

#[test]
fn mechanical_potential_matches_maupertuis() {
    let s = disk(mechanical(), 0.05);
    let (_, gc) = critical_graph(&s);
    let d = mane_potential(&gc).unwrap();
    let o = s.grid.nearest_node([0.0, 0.0]);
    let col = d.column(o).unwrap();
    for angle in [0.0f64, 0.3, 0.785_398_163_397_448_3, 2.0] {
        for k in 1..=10 {
            let r = 0.0999 * k as f64;
            let i = s.grid.nearest_node([r * angle.cos(), r * angle.sin()]);
            let oracle = maupertuis(point::norm(s.grid.node(i)));
            assert!((col[i] - oracle).abs() <= 0.05 * oracle, "angle {angle} r {r}: {} vs {oracle}", col[i]);
        }
    }
    assert!(d.triangle_defect().unwrap() <= 1e-9);
    assert!(d.diagonal_min().unwrap() >= 0.0);

    let a = aubry_detect(&gc, &d, &AubryOptions::default()).unwrap();
    assert!(!a.set.is_empty());
    for &y in &a.set {
        assert!(point::norm(s.grid.node(y)) <= s.grid.h() * 2f64.sqrt() + 1e-12, "{:?}", s.grid.node(y));
    }
    assert!(a.residual.iter().all(|&r| r >= -1e-9));

    // representation from the well reproduces the same oracle
    let vals: Vec<f64> = a.set.iter().map(|&y| col[y]).collect();
    let u = representation(&d, &a.set, &vals, 1e-9).unwrap();
    for i in 0..s.grid.len() {
        let r = point::norm(s.grid.node(i));
        if r >= 0.1 {
            assert!((u.values[i] - maupertuis(r)).abs() <= 0.05 * maupertuis(r));
        }
    }
    // round trip through the Aubry trace
    let again: Vec<f64> = a.set.iter().map(|&y| u.values[y]).collect();
    let u2 = representation(&d, &a.set, &again, 1e-9).unwrap();
    assert!(u.sup_distance(&u2) <= 1e-12);
}

#[test]
fn incompatible_trace_is_rejected() {
    let s = disk(HamiltonianModel::kinetic(2).unwrap(), 0.2);
    let (_, gc) = critical_graph(&s);
    let d = mane_potential(&gc).unwrap();
    let err = representation(&d, &[0, 5], &[0.0, 1.0], 1e-6).unwrap_err();
    assert!(matches!(err, WeakKamError::IncompatibleTrace { .. }), "{err:?}");
}

#[test]
fn two_wells_are_both_detected() {
    let wells = [[-0.5, 0.0], [0.5, 0.0]];
    let v = move |x: [f64; 2]| point::dist(x, wells[0]).powi(2) * point::dist(x, wells[1]).powi(2);
    let s = disk(HamiltonianModel::mechanical(2, Arc::new(v)).unwrap(), 0.1);
    let (_, gc) = critical_graph(&s);
    let d = mane_potential(&gc).unwrap();
    let a = aubry_detect(&gc, &d, &AubryOptions::default()).unwrap();
    let cell = s.grid.h() * 2f64.sqrt() + 1e-12;
    for w in wells {
        assert!(a.set.iter().any(|&y| point::dist(s.grid.node(y), w) <= cell), "well {w:?} missed");
    }
    for &y in &a.set {
        let near = wells.iter().map(|&w| point::dist(s.grid.node(y), w)).fold(f64::INFINITY, f64::min);
        assert!(near <= cell, "spurious node {:?}", s.grid.node(y));
    }
}

#[test]
fn aubry_set_is_never_empty() {
    let ellipse = ImplicitDomain::ellipse([0.0, 0.0], 1.0, 0.6).unwrap();
    let rounded = ImplicitDomain::rounded_box([0.1, 0.0], 0.8, 0.6).unwrap();
    let models = [
        HamiltonianModel::kinetic(2).unwrap(),
        mechanical(),
        HamiltonianModel::eikonal(2, Arc::new(|x: [f64; 2]| 1.0 + 0.5 * x[0])).unwrap(),
        HamiltonianModel::anisotropic(2, Arc::new(|x: [f64; 2]| [[2.0 + x[0], 0.3], [0.3, 1.0]])).unwrap(),
    ];
    for domain in [&ellipse, &rounded] {
        for theta in [0.0, 0.4] {
            let field =
                ObliqueField::rotated_normal(domain, theta, Arc::new(|x: [f64; 2]| 0.2 * x[1])).unwrap();
            let grid = Arc::new(Grid::new(domain, 0.15).unwrap());
            for model in &models {
                let g = build_action_graph(model, &field, grid.clone(), 0.0, &GraphConfig::default());
                let cv = critical_value_cycle(&g, &CycleOptions::default()).unwrap();
                let gc = g.relevel(cv.c);
                let d = mane_potential(&gc).unwrap();
                let a = aubry_detect(&gc, &d, &AubryOptions::default()).unwrap();
                assert!(!a.set.is_empty());
                assert!(d.triangle_defect().unwrap() <= 1e-9);
            }
        }
    }
}

#[test]
fn sourced_mode_matches_full_matrix() {
    let s = disk(mechanical(), 0.1);
    let (_, gc) = critical_graph(&s);
    let full = mane_potential(&gc).unwrap();
    let targets = [0usize, 17, 100];
    let sparse = mane_potential_to(&gc, &targets).unwrap();
    for &y in &targets {
        let a = full.column(y).unwrap();
        let b = sparse.column(y).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
    let fa = aubry_detect(&gc, &full, &AubryOptions::default()).unwrap();
    let sa = aubry_detect(&gc, &sparse, &AubryOptions::default()).unwrap();
    assert_eq!(fa.set, sa.set);
}

#[test]
fn u_minus_of_constants_and_shifts() {
    let s = disk(HamiltonianModel::kinetic(2).unwrap(), 0.1);
    let cfg = SchemeConfig::default();
    let u0 = GridField::constant(s.grid.clone(), 0.3);
    let um = u_minus(&s.model, &s.field, &u0, 0.0, 1.0, &cfg, 1e-9).unwrap();
    assert!(um.field.values.iter().all(|&v| v == 0.3));

    let s = disk(mechanical(), 0.1);
    let cfg = SchemeConfig { control_bound: Some(6.0), ..SchemeConfig::default() };
    let u0 = GridField::from_fn(s.grid.clone(), |x| 0.2 * x[0]);
    let a = u_minus(&s.model, &s.field, &u0, 0.0, 2.0, &cfg, 1.0).unwrap();
    let b = u_minus(&s.model, &s.field, &u0.map(|v| v + 1.25), 0.0, 2.0, &cfg, 1.0).unwrap();
    for (x, y) in a.field.values.iter().zip(&b.field.values) {
        assert!((y - x - 1.25).abs() <= 1e-12);
    }
}

#[test]
fn u_minus_reports_unrelaxed_runs() {
    let s = disk(mechanical(), 0.1);
    let u0 = GridField::constant(s.grid.clone(), 0.0);
    let err = u_minus(&s.model, &s.field, &u0, 0.0, 0.1, &SchemeConfig::default(), 1e-9).unwrap_err();
    assert!(matches!(err, WeakKamError::NotRelaxed { .. }), "{err:?}");
}

#[test]
fn u_minus_from_zero_on_mechanical_disk() {
    let h = 1.0 / 32.0;
    let s = disk(mechanical(), h);
    let u0 = GridField::constant(s.grid.clone(), 0.0);
    let cfg = SchemeConfig { dt: Some(0.2 * h), store_stride: usize::MAX, ..SchemeConfig::default() };
    let um = u_minus(&s.model, &s.field, &u0, 0.0, 3.0, &cfg, 0.02).unwrap();
    let scale = maupertuis(1.0);
    let mut worst = 0.0f64;
    for i in 0..s.grid.len() {
        let oracle = maupertuis(point::norm(s.grid.node(i)));
        worst = worst.max((um.field.values[i] - oracle).abs());
    }
    assert!(worst <= 0.05 * scale, "relative sup error {}", worst / scale);
}
