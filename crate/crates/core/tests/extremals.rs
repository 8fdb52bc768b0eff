use std::sync::Arc;

use weakkam::extremals::*;
use weakkam::geometry::{ImplicitDomain, ObliqueField};
use weakkam::hamiltonian::HamiltonianModel;
use weakkam::lax_oleinik::{solve_cauchy, Grid, GridField, SchemeConfig};
use weakkam::point;
use weakkam::weak_kam::*;

fn disk(h: f64) -> (ObliqueField<f64>, Arc<Grid<f64>>) {
    let d = ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap();
    (ObliqueField::normal(&d).unwrap(), Arc::new(Grid::new(&d, h).unwrap()))
}

fn mechanical() -> HamiltonianModel<f64> {
    HamiltonianModel::mechanical(2, Arc::new(|x: [f64; 2]| x[0] * x[0] + x[1] * x[1])).unwrap()
}

fn traced() -> SchemeConfig<f64> {
    SchemeConfig { retain_policy: true, store_stride: 1, ..SchemeConfig::default() }
}

#[test]
fn tracing_needs_the_policy() {
    let (f, g) = disk(0.2);
    let m = HamiltonianModel::kinetic(2).unwrap();
    let tf = solve_cauchy(&m, &f, &GridField::constant(g, 0.0), 0.2, &SchemeConfig::default()).unwrap();
    assert!(matches!(attained_minimizer(&tf, [0.0, 0.0], 0.2), Err(ExtremalError::MissingPolicy)));
}

#[test]
fn resting_is_optimal_when_motion_only_costs() {
    let (f, g) = disk(0.1);
    let m = HamiltonianModel::kinetic(2).unwrap().with_shift(1.0);
    let tf = solve_cauchy(&m, &f, &GridField::constant(g, 0.0), 0.5, &traced()).unwrap();
    let x = [0.23, -0.11];
    let mz = attained_minimizer(&tf, x, 0.5).unwrap();
    assert!(mz.path.iter().all(|&p| p == x));
    assert!(mz.controls.iter().all(|&v| v == [0.0, 0.0]));
    assert!((mz.action - 0.5).abs() <= 1e-9, "{}", mz.action);
    assert!(mz.defect <= 1e-9);
    assert!(mz.validation.passed(), "{:?}", mz.validation);
}

#[test]
fn hopf_lax_minimizer_is_the_straight_segment() {
    let (f, g) = disk(0.025);
    let m = HamiltonianModel::kinetic(2).unwrap();
    let z = [0.2, -0.1];
    let t = 0.1;
    let u0 = GridField::from_fn(g.clone(), |y| point::dist(y, z).powi(2));
    let tf = solve_cauchy(&m, &f, &u0, t, &traced()).unwrap();
    for x in [[-0.3, 0.2], [0.5, 0.4], [-0.2, -0.5]] {
        let mz = attained_minimizer(&tf, x, t).unwrap();
        // min over y of |x - y|^2 / (2t) + |y - z|^2 is attained at y = x + (z - x) 2t / (1 + 2t)
        let s = 2.0 * t / (1.0 + 2.0 * t);
        let y = point::axpy(x, s, point::sub(z, x));
        let oracle = point::dist(x, y).powi(2) / (2.0 * t) + point::dist(y, z).powi(2);
        let end = *mz.path.last().unwrap();
        assert!(point::dist(end, y) <= 0.2 * point::dist(x, y), "end {end:?} vs {y:?}");
        let total = mz.action + mz.terminal;
        assert!((total - oracle).abs() <= 0.03 * oracle, "{total} vs {oracle}");
        for w in mz.path.windows(2) {
            let step = point::sub(w[1], w[0]);
            let toward = point::sub(z, w[0]);
            assert!(point::dot(step, toward) >= 0.0);
        }
        assert!(mz.defect <= mz.bound);
        assert!(mz.validation.passed(), "{:?}", mz.validation);
    }
}

#[test]
fn traced_value_matches_the_solve() {
    let d = ImplicitDomain::ellipse([0.0, 0.0], 1.0, 0.7).unwrap();
    let f = ObliqueField::rotated_normal(&d, 0.4, Arc::new(|x: [f64; 2]| 0.3 * x[0])).unwrap();
    let g = Arc::new(Grid::new(&d, 0.1).unwrap());
    let u0 = GridField::from_fn(g.clone(), |x| (2.0 * x[0]).sin() + 0.5 * x[1]);
    for m in [mechanical(), HamiltonianModel::kinetic(2).unwrap()] {
        let tf = solve_cauchy(&m, &f, &u0, 0.5, &traced()).unwrap();
        for x in [[0.0, 0.0], [0.9, 0.1], [-0.5, -0.6], [0.3, 0.69]] {
            if !d.in_closure(x) {
                continue;
            }
            let mz = attained_minimizer(&tf, x, 0.5).unwrap();
            assert!(mz.defect <= mz.bound, "{} > {}", mz.defect, mz.bound);
            assert!(mz.validation.passed(), "{:?}", mz.validation);
            // the continuous realization is an admissible path
            assert!(mz.triple_action + u0.at(*mz.triple.eta.last().unwrap()) >= mz.value - 3.0 * (g.h() + tf.dt));
        }
    }
}

#[test]
fn calibrated_rest_for_kinetic() {
    let (f, g) = disk(0.1);
    let m = HamiltonianModel::kinetic(2).unwrap();
    let phi = GridField::constant(g, 0.0);
    let cv = calibrated_extremal(&m, &f, &phi, 0.0, [0.3, 0.4], 2.0, &CalibrationOptions::default()).unwrap();
    assert!(cv.path.iter().all(|&p| p == [0.3, 0.4]));
    assert!(cv.actions.iter().all(|&a| a == 0.0));
    assert_eq!(cv.worst_defect(), 0.0);
}

#[test]
fn calibrated_extremal_flows_into_the_well() {
    let h = 0.05;
    let (f, g) = disk(h);
    let m = mechanical();
    let graph = build_action_graph(&m, &f, g.clone(), 0.0, &GraphConfig::default());
    let crit = critical_value_cycle(&graph, &CycleOptions::default()).unwrap();
    let gc = graph.relevel(crit.c);
    let pot = mane_potential(&gc).unwrap();
    let aubry = aubry_detect(&gc, &pot, &AubryOptions::default()).unwrap();
    let phi = representation(&pot, &aubry.set, &vec![0.0; aubry.set.len()], 1e-9).unwrap();

    let x = [0.8 * 0.6f64.cos(), 0.8 * 0.6f64.sin()];
    let curve = calibrated_extremal(&m, &f, &phi, crit.c, x, 10.0, &CalibrationOptions::default()).unwrap();
    let tol = 5.0 * (h + curve.dt);
    assert!(curve.worst_defect() <= tol, "{} > {tol}", curve.worst_defect());
    let sum: f64 = curve.defects.iter().sum();
    assert!((sum - curve.total_defect).abs() <= 1e-12);
    // window actions never beat the drop of phi by more than the tolerance
    for (k, a) in curve.actions.iter().enumerate() {
        assert!(*a >= curve.phi_at[k] - curve.phi_at[k + 1] - tol);
    }
    assert!(curve.max_speed <= 1.2 * curve.speed_bound, "{} vs {}", curve.max_speed, curve.speed_bound);
    assert!(curve.validation.passed(), "{:?}", curve.validation);

    let conv = aubry_convergence(&curve, &aubry, &g);
    assert!(conv.passed, "{} {}", conv.tail, conv.previous);
    assert!(conv.tail <= 2.0 * h, "tail {}", conv.tail);
    // radial contraction: the distance to the well at the end of each window shrinks until grid scale
    let r: Vec<f64> = (0..=curve.defects.len()).map(|k| point::norm(curve.path[k * curve.window_steps])).collect();
    for w in r.windows(2) {
        assert!(w[1] <= w[0] + h, "{r:?}");
    }
}

#[test]
fn aubry_orbits() {
    let (f, g) = disk(0.1);
    let kin = HamiltonianModel::kinetic(2).unwrap();
    let graph = build_action_graph(&kin, &f, g.clone(), 0.0, &GraphConfig::default());
    let crit = critical_value_cycle(&graph, &CycleOptions::default()).unwrap();
    let gc = graph.relevel(crit.c);
    let pot = mane_potential(&gc).unwrap();
    let aubry = aubry_detect(&gc, &pot, &AubryOptions::default()).unwrap();
    let y = g.nearest_node([0.3, -0.2]);
    let orbit = two_sided_extremal(&gc, &aubry, y, 3.0).unwrap();
    assert!(orbit.nodes.iter().all(|&i| i == y));
    assert!(*orbit.times.first().unwrap() <= -3.0 && *orbit.times.last().unwrap() >= 3.0);

    let m = mechanical();
    let graph = build_action_graph(&m, &f, g.clone(), 0.0, &GraphConfig::default());
    let crit = critical_value_cycle(&graph, &CycleOptions::default()).unwrap();
    let gc = graph.relevel(crit.c);
    let pot = mane_potential(&gc).unwrap();
    let aubry = aubry_detect(&gc, &pot, &AubryOptions::default()).unwrap();
    let y0 = g.nearest_node([0.0, 0.0]);
    let orbit = two_sided_extremal(&gc, &aubry, y0, 5.0).unwrap();
    assert!(orbit.points.iter().all(|&p| point::norm(p) <= g.h()));
    assert!(orbit.consistency_excess <= 0.0, "{orbit:?}");
    assert!(orbit.max_aubry_distance <= 2.0 * g.h());

    let far = g.nearest_node([0.5, 0.0]);
    let err = two_sided_extremal(&gc, &aubry, far, 1.0).unwrap_err();
    assert!(matches!(err, ExtremalError::NoCheapLoop { .. }), "{err:?}");
}
