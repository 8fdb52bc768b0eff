use std::sync::Arc;

use proptest::prelude::*;
use weakkam::geometry::{ImplicitDomain, ObliqueField};
use weakkam::hamiltonian::HamiltonianModel;
use weakkam::lax_oleinik::{check_dpp, solve_cauchy, Grid, GridField, SchemeConfig};
use weakkam::point;

fn disk_grid(h: f64) -> (ImplicitDomain<f64>, ObliqueField<f64>, Arc<Grid<f64>>) {
    let d = ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap();
    let f = ObliqueField::normal(&d).unwrap();
    let g = Arc::new(Grid::new(&d, h).unwrap());
    (d, f, g)
}

fn mechanical() -> HamiltonianModel<f64> {
    HamiltonianModel::mechanical(2, Arc::new(|x: [f64; 2]| x[0] * x[0] + x[1] * x[1])).unwrap()
}

/// min over the segment from x toward z of u0(y) + |x - y|^2 / (2t), for
/// u0(y) = |y - z|^2 the minimizer lies on that segment.
fn hopf_lax_oracle(x: [f64; 2], z: [f64; 2], t: f64) -> f64 {
    let f = |s: f64| {
        let y = [x[0] + s * (z[0] - x[0]), x[1] + s * (z[1] - x[1])];
        point::dist(y, z).powi(2) + point::dist(x, y).powi(2) / (2.0 * t)
    };
    let (mut a, mut b) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) < f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    f(0.5 * (a + b))
}

#[test]
fn shifted_kinetic_grows_linearly() {
    let (_, f, g) = disk_grid(0.1);
    let m = HamiltonianModel::kinetic(2).unwrap().with_shift(1.0);
    let u0 = GridField::constant(g, 0.0);
    let tf = solve_cauchy(&m, &f, &u0, 1.0, &SchemeConfig::default()).unwrap();
    for &w in tf.last() {
        assert!((w - 1.0).abs() <= 0.02, "w(x, 1) = {w}");
    }
}

#[test]
fn constants_commute_exactly() {
    let (_, f, g) = disk_grid(0.1);
    let m = mechanical();
    let u0 = GridField::from_fn(g.clone(), |x| (3.0 * x[0]).sin() + x[1]);
    let u1 = u0.map(|v| v + 2.5);
    let cfg = SchemeConfig::default();
    let a = solve_cauchy(&m, &f, &u0, 0.3, &cfg).unwrap();
    let b = solve_cauchy(&m, &f, &u1, 0.3, &cfg).unwrap();
    for (x, y) in a.last().iter().zip(b.last()) {
        assert!((y - x - 2.5).abs() <= 1e-12);
    }
}

#[test]
fn constants_are_steady() {
    let (_, f, g) = disk_grid(0.1);
    let m = HamiltonianModel::kinetic(2).unwrap();
    let u0 = GridField::constant(g, -0.75);
    let tf = solve_cauchy(&m, &f, &u0, 0.5, &SchemeConfig::default()).unwrap();
    assert!(tf.last().iter().all(|&w| w == -0.75));
    let rep = check_dpp(&tf, 0.1, 0.2, 1e-12).unwrap();
    assert!(rep.passed && rep.defect <= 1e-12);
}

#[test]
fn interior_hopf_lax_short_time() {
    let (_, f, g) = disk_grid(0.025);
    let m = HamiltonianModel::kinetic(2).unwrap();
    let z = [0.2, -0.1];
    let t = 0.1;
    let u0 = GridField::from_fn(g.clone(), |y| point::dist(y, z).powi(2));
    let tf = solve_cauchy(&m, &f, &u0, t, &SchemeConfig::default()).unwrap();
    let w = tf.last();
    let mut checked = 0;
    for i in 0..g.len() {
        let x = g.node(i);
        let r = point::norm(x);
        if r > 0.6 || point::dist(x, z) < 0.25 {
            continue;
        }
        let oracle = hopf_lax_oracle(x, z, t);
        assert!((w[i] - oracle).abs() <= 0.03 * oracle, "x={x:?} w={} oracle={oracle}", w[i]);
        checked += 1;
    }
    assert!(checked > 100);
}

#[test]
fn barrier_bounds_hold() {
    let (_, f, g) = disk_grid(0.1);
    let m = mechanical();
    let u0 = GridField::from_fn(g.clone(), |x| 0.5 * (2.0 * x[0] - x[1]).cos());
    let tf = solve_cauchy(&m, &f, &u0, 0.5, &SchemeConfig::default()).unwrap();
    let d = &tf.diagnostics;
    // staying put is an admissible control and interpolation is exact at a node
    assert!(d.upper_defect <= 1e-12, "{d:?}");
    let slack = g.h() * (1.0 + u0.lipschitz_ratio());
    assert!(d.lower_defect <= slack, "{d:?}");
    assert_eq!(d.control_bound_violations, 0);
}

#[test]
fn dpp_on_mechanical_disk() {
    let (_, f, g) = disk_grid(0.1);
    let m = mechanical();
    let u0 = GridField::from_fn(g.clone(), |x| x[0] - 0.5 * x[1]);
    let tf = solve_cauchy(&m, &f, &u0, 1.0, &SchemeConfig::default()).unwrap();
    let tol = 3.0 * (g.h() + tf.dt);
    let half = tf.time(tf.steps / 2);
    let at_zero = check_dpp(&tf, 0.0, half, tol).unwrap();
    assert_eq!(at_zero.defect, 0.0);
    let rep = check_dpp(&tf, half, half, tol).unwrap();
    assert!(rep.passed, "{rep:?}");
    assert!(rep.one_shot_gap <= tol, "{rep:?}");
}

#[test]
fn refinement_differences_shrink() {
    let m = mechanical();
    let probes = [[0.3, 0.2], [-0.5, 0.1], [0.0, -0.7], [0.6, 0.6]];
    let mut values = Vec::new();
    for h in [0.1, 0.05, 0.025] {
        let (_, f, g) = disk_grid(h);
        let u0 = GridField::from_fn(g.clone(), |x| 0.5 * x[0] + x[1] * x[1]);
        let cfg = SchemeConfig { dt: Some(0.2 * h), store_stride: usize::MAX, ..SchemeConfig::default() };
        let tf = solve_cauchy(&m, &f, &u0, 0.6, &cfg).unwrap();
        let w = tf.final_field();
        values.push(probes.iter().map(|&p| w.at(p)).collect::<Vec<f64>>());
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d1 = diff(&values[0], &values[1]);
    let d2 = diff(&values[1], &values[2]);
    assert!(d2 <= 0.7 * d1, "refinement differences {d1} then {d2}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ordered_data_stay_ordered(
        a in -1.0f64..1.0, b in -1.0f64..1.0, k in 0.5f64..3.0, lift in 0.0f64..0.3, bump in 0.0f64..0.5,
    ) {
        let (_, f, g) = disk_grid(0.125);
        let m = mechanical();
        let lower = GridField::from_fn(g.clone(), |x| a * x[0] + b * (k * x[1]).sin());
        let upper = GridField::from_fn(g.clone(), |x| {
            a * x[0] + b * (k * x[1]).sin() + lift + bump * (-(x[0] * x[0] + x[1] * x[1]) * 4.0).exp()
        });
        // one operator for both runs: the default bound depends on the data
        let cfg = SchemeConfig { store_stride: 4, control_bound: Some(6.0), ..SchemeConfig::default() };
        let wl = solve_cauchy(&m, &f, &lower, 0.4, &cfg).unwrap();
        let wu = solve_cauchy(&m, &f, &upper, 0.4, &cfg).unwrap();
        for (sl, su) in wl.slices.iter().zip(&wu.slices) {
            for (x, y) in sl.iter().zip(su) {
                prop_assert!(x <= y);
            }
        }
    }
}
