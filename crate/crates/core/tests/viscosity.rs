use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use weakkam::geometry::{ImplicitDomain, ObliqueField};
use weakkam::hamiltonian::HamiltonianModel;
use weakkam::lax_oleinik::*;
use weakkam::point;
use weakkam::weak_kam::*;

const H: f64 = 0.05;

struct Setup {
    model: HamiltonianModel<f64>,
    field: ObliqueField<f64>,
    grid: Arc<Grid<f64>>,
    graph: ActionGraph<f64>,
    c: f64,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let d = ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap();
        let field = ObliqueField::rotated_normal(&d, 0.5, Arc::new(|x: [f64; 2]| 0.3 * x[1])).unwrap();
        let grid = Arc::new(Grid::new(&d, H).unwrap());
        let model = HamiltonianModel::mechanical(2, Arc::new(|x: [f64; 2]| x[0] * x[0] + x[1] * x[1])).unwrap();
        let g = build_action_graph(&model, &field, grid.clone(), 0.0, &GraphConfig::default());
        let cv = critical_value_cycle(&g, &CycleOptions::default()).unwrap();
        Setup { graph: g.relevel(cv.c), model, field, grid, c: cv.c }
    })
}

fn column(s: &Setup, y: usize) -> GridField<f64> {
    let pot = mane_potential_to(&s.graph, &[y]).unwrap();
    GridField::new(s.grid.clone(), pot.column(y).unwrap().to_vec()).unwrap()
}

#[test]
fn potential_columns_are_sub_and_super_away_from_the_source() {
    let s = setup();
    for y in [[0.0, 0.0], [0.5, 0.3], [-0.3, 0.6]] {
        let yi = s.grid.nearest_node(y);
        let u = column(s, yi);
        let tol = default_tolerance(&u);
        let away: Vec<bool> = (0..s.grid.len()).map(|i| point::dist(s.grid.node(i), s.grid.node(yi)) > 3.0 * H).collect();
        let opts = ViscosityOptions::default();
        let sub = check_subsolution_with(&s.model, &s.field, &u, s.c, tol, &opts, Some(&away));
        assert!(sub.passed, "sub at y = {y:?}: {} > {tol}", sub.worst);
        let sup = check_supersolution_with(&s.model, &s.field, &u, s.c, tol, &opts, Some(&away));
        assert!(sup.passed, "super at y = {y:?}: {} > {tol}", sup.worst);
        // the value at y itself is the global minimum, so no test function touches from below there
        assert_eq!(u.values[yi], u.min());
    }
}

#[test]
fn a_strict_bump_is_not_a_subsolution() {
    let s = setup();
    let u = GridField::from_fn(s.grid.clone(), |x| 2.0 * (-(point::norm(x).powi(2)) / 0.05).exp());
    let r = check_subsolution(&s.model, &s.field, &u, s.c, default_tolerance(&u));
    assert!(!r.passed);
}

#[test]
fn comparison_flags_a_broken_supersolution() {
    let d = ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap();
    let field = ObliqueField::normal(&d).unwrap();
    let grid = Arc::new(Grid::new(&d, 0.1).unwrap());
    let kin = HamiltonianModel::kinetic(2).unwrap();
    let y = grid.nearest_node([-0.5, 0.0]);
    let yp = grid.node(y);
    // H = 0 and H = 1/2 away from the frozen node
    let u = GridField::constant(grid.clone(), 0.0);
    let v = GridField::from_fn(grid.clone(), |x| point::dist(x, yp));
    let tol = 0.05;
    let ok = comparison_suite(&kin, &field, &u, &v, 0.0, 0.4, &[y], tol).unwrap();
    assert!(!ok.violation, "{ok:?}");
    assert_eq!(ok.argmax, y);

    let bad = GridField::from_fn(grid.clone(), |x: [f64; 2]| {
        point::dist(x, yp) - 1.5 * (-point::dist(x, [0.5, 0.0]).powi(2) / 0.04).exp()
    });
    let r = comparison_suite(&kin, &field, &u, &bad, 0.0, 0.4, &[y], tol).unwrap();
    assert!(r.violation, "{r:?}");
    assert!(r.local_defect > tol, "{r:?}");
    assert!(point::dist(grid.node(r.argmax), [0.5, 0.0]) <= 0.15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn min_and_mixtures_of_subsolutions(
        r1 in 0.0f64..0.6, a1 in 0.0f64..6.3, r2 in 0.0f64..0.6, a2 in 0.0f64..6.3,
        shift in -0.5f64..0.5, lambda in 0.0f64..1.0,
    ) {
        let s = setup();
        let y1 = s.grid.nearest_node([r1 * a1.cos(), r1 * a1.sin()]);
        let y2 = s.grid.nearest_node([r2 * a2.cos(), r2 * a2.sin()]);
        let u1 = column(s, y1);
        let u2 = column(s, y2).map(|v| v + shift);
        let tol = default_tolerance(&u1).max(default_tolerance(&u2));
        let rep = stability_suite(&s.model, &s.field, &u1, &u2, s.c, lambda, tol, H).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
    }
}
