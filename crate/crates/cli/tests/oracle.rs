use weakkam_cli::oracle::{oracle_value_iteration, OracleError};
use weakkam_cli::spec::parse_spec;

fn spec(domain: &str, hamiltonian: &str, h: f64) -> weakkam_cli::spec::ProblemSpec {
    parse_spec(&format!("[domain]\n{domain}\n[hamiltonian]\n{hamiltonian}\n[grid]\nh = {h}\n")).unwrap()
}

const DISK: &str = "family = \"disk\"\nradius = 1.0";

#[test]
fn kinetic_fixed_point_is_constant() {
    let s = spec(DISK, "family = \"kinetic\"", 0.2);
    let o = oracle_value_iteration(&s, 2).unwrap();
    assert!(o.c.abs() < 1e-9, "{}", o.c);
    assert!(o.field.max() < 1e-9);
}

#[test]
fn shift_moves_the_rate() {
    let s = spec(DISK, "family = \"kinetic\"\nshift = 1.0", 0.2);
    let o = oracle_value_iteration(&s, 2).unwrap();
    assert!((o.c + 1.0).abs() < 1e-9, "{}", o.c);
}

#[test]
fn interval_well_matches_maupertuis_action() {
    // d(x, 0) = int_0^|x| sqrt(2) s ds = x^2 / sqrt(2)
    let s = spec("family = \"interval\"\nlo = -1.0\nhi = 1.0", "family = \"mechanical\"\npotential = \"x^2\"", 0.05);
    let o = oracle_value_iteration(&s, 4).unwrap();
    assert!(o.c.abs() < 1e-6, "{}", o.c);
    for (i, &v) in o.field.values.iter().enumerate() {
        let x = o.field.grid.node(i)[0];
        let exact = x * x / 2f64.sqrt();
        assert!((v - exact).abs() <= 0.05 * 2f64.sqrt().recip() + 1e-12, "x = {x}: {v} vs {exact}");
    }
}

#[test]
fn refine_below_two_is_rejected() {
    let s = spec(DISK, "family = \"kinetic\"", 0.2);
    assert!(matches!(oracle_value_iteration(&s, 1), Err(OracleError::Refine(1))));
}
