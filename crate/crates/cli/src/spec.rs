//! Problem files.
//!
//! A problem file is TOML (or the same schema as JSON) with six blocks:
//! `domain`, `hamiltonian`, `oblique`, `grid`, `run` and `output`. Only
//! `domain` and `hamiltonian` are required; every other key has a default
//! that is filled in at parse time, so `emit` always writes a complete file.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("{0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> SpecError {
    SpecError::Invalid { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub domain: DomainSpec,
    pub hamiltonian: HamiltonianSpec,
    #[serde(default)]
    pub oblique: ObliqueSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// `psi = sum c x^i y^j` for `terms = [[i, j, c], ...]`, negative inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Disk {
        #[serde(default)]
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        #[serde(default)]
        center: [f64; 2],
        a: f64,
        b: f64,
    },
    RoundedBox {
        #[serde(default)]
        center: [f64; 2],
        half_width: f64,
        half_height: f64,
    },
    Interval {
        lo: f64,
        hi: f64,
    },
    Polynomial {
        terms: Vec<[f64; 3]>,
        lo: [f64; 2],
        hi: [f64; 2],
    },
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Interval { .. } => 1,
            _ => 2,
        }
    }
}

/// `shift = a` solves `H = a`, i.e. works with `H - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    /// `|p|^2 / 2`
    Kinetic {
        #[serde(default)]
        shift: f64,
    },
    /// `|p|^2 / 2 - V(x)`
    Mechanical {
        potential: String,
        #[serde(default)]
        shift: f64,
    },
    /// `|p| - f(x)`
    Eikonal {
        speed: String,
        #[serde(default)]
        shift: f64,
    },
    /// `<M(x) p, p> / 2`
    Anisotropic {
        metric: [[String; 2]; 2],
        #[serde(default)]
        shift: f64,
    },
}

impl HamiltonianSpec {
    pub fn shift(&self) -> f64 {
        match self {
            HamiltonianSpec::Kinetic { shift }
            | HamiltonianSpec::Mechanical { shift, .. }
            | HamiltonianSpec::Eikonal { shift, .. }
            | HamiltonianSpec::Anisotropic { shift, .. } => *shift,
        }
    }
}

/// Either an angle in degrees or the word `"normal"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Angle {
    Degrees(f64),
    Named(String),
}

impl Default for Angle {
    fn default() -> Self {
        Angle::Named("normal".into())
    }
}

impl Angle {
    pub fn radians(&self) -> f64 {
        match self {
            Angle::Degrees(d) => d.to_radians(),
            Angle::Named(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObliqueSpec {
    #[serde(default)]
    pub angle: Angle,
    #[serde(default = "zero_expr")]
    pub g: String,
}

impl Default for ObliqueSpec {
    fn default() -> Self {
        Self { angle: Angle::default(), g: zero_expr() }
    }
}

fn zero_expr() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "GridSpec::default_h")]
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Horizon of Cauchy solves and extremals.
    #[serde(default = "GridSpec::default_horizon")]
    pub horizon: f64,
}

impl GridSpec {
    fn default_h() -> f64 {
        0.1
    }
    fn default_horizon() -> f64 {
        1.0
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { h: Self::default_h(), dt: None, horizon: Self::default_horizon() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub seed: u64,
    /// Initial data of `solve-cauchy`.
    pub initial: String,
    /// Points where `solve-cauchy` reports `w(x, t)` at every stored slice.
    pub probes: Vec<[f64; 2]>,
    /// Start of `extremal` and `skorokhod`, source of `distance`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<[f64; 2]>,
    /// Aubry node of `aubry-orbit`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at: Option<[f64; 2]>,
    /// Gate on the gap between the cycle and slope estimates of `c`.
    pub tol_c: f64,
    pub slope_horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_dt: Option<f64>,
    /// Agreement required between the two slope windows.
    pub slope_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_aubry: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_cal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    /// Skorokhod input `v(t)`.
    pub velocity: [String; 2],
    pub pieces: usize,
    pub tol_skorokhod: f64,
    /// Slack constant `C` of the stability suites (`tol + C h`).
    pub slack: f64,
    pub pairs: usize,
    pub refine: usize,
    /// Relative sup-norm gate of the oracle comparison.
    pub tol_oracle: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            initial: zero_expr(),
            probes: Vec::new(),
            from: None,
            at: None,
            tol_c: 0.05,
            slope_horizon: 3.0,
            slope_dt: None,
            slope_tol: 0.05,
            tol_aubry: None,
            tol_cal: None,
            window: None,
            velocity: [zero_expr(), zero_expr()],
            pieces: 256,
            tol_skorokhod: 1e-3,
            slack: 1.0,
            pairs: 20,
            refine: 4,
            tol_oracle: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: "out".into(), formats: vec![Format::Csv, Format::Json] }
    }
}

impl OutputSpec {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Parses TOML, or JSON when the text starts with `{`, and validates.
pub fn parse_spec(text: &str) -> Result<ProblemSpec, SpecError> {
    let spec: ProblemSpec = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| SpecError::Syntax(format!("JSON parse error: {e}")))?
    } else {
        toml::from_str(text).map_err(|e| SpecError::Syntax(e.to_string()))?
    };
    spec.validate()?;
    Ok(spec)
}

pub fn read_spec(path: &std::path::Path) -> Result<ProblemSpec, SpecError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpecError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_spec(&text)
}

/// Complete TOML rendering; `parse_spec(&emit(s))` gives back `s`.
pub fn emit(spec: &ProblemSpec) -> String {
    toml::to_string_pretty(spec).expect("spec serializes to TOML")
}

pub fn emit_json(spec: &ProblemSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serializes to JSON")
}

fn check_expr(path: &str, text: &str) -> Result<Expr, SpecError> {
    Expr::parse(text).map_err(|e| invalid(path, e.to_string()))
}

fn positive(path: &str, v: f64) -> Result<(), SpecError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {v}")))
    }
}

fn tolerance(path: &str, v: f64) -> Result<(), SpecError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("tolerance must be nonnegative and finite, got {v}")))
    }
}

fn finite(path: &str, v: &[f64]) -> Result<(), SpecError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(path, "must be finite"))
    }
}

impl ProblemSpec {
    /// Checks everything the schema cannot express.
    pub fn validate(&self) -> Result<(), SpecError> {
        match &self.domain {
            DomainSpec::Disk { center, radius } => {
                finite("domain.center", center)?;
                positive("domain.radius", *radius)?;
            }
            DomainSpec::Ellipse { center, a, b } => {
                finite("domain.center", center)?;
                positive("domain.a", *a)?;
                positive("domain.b", *b)?;
            }
            DomainSpec::RoundedBox { center, half_width, half_height } => {
                finite("domain.center", center)?;
                positive("domain.half_width", *half_width)?;
                positive("domain.half_height", *half_height)?;
            }
            DomainSpec::Interval { lo, hi } => {
                finite("domain.lo", &[*lo, *hi])?;
                if !(hi > lo) {
                    return Err(invalid("domain.hi", format!("must exceed lo = {lo}")));
                }
            }
            DomainSpec::Polynomial { terms, lo, hi } => {
                if terms.is_empty() {
                    return Err(invalid("domain.terms", "at least one term is required"));
                }
                for (k, t) in terms.iter().enumerate() {
                    let path = format!("domain.terms[{k}]");
                    finite(&path, t)?;
                    if t[0] < 0.0 || t[1] < 0.0 || t[0].fract() != 0.0 || t[1].fract() != 0.0 {
                        return Err(invalid(&path, "exponents must be nonnegative integers"));
                    }
                }
                finite("domain.lo", lo)?;
                finite("domain.hi", hi)?;
                if !(hi[0] > lo[0] && hi[1] > lo[1]) {
                    return Err(invalid("domain.hi", "bounding box is empty"));
                }
            }
        }

        match &self.hamiltonian {
            HamiltonianSpec::Kinetic { .. } => {}
            HamiltonianSpec::Mechanical { potential, .. } => {
                check_expr("hamiltonian.potential", potential)?;
            }
            HamiltonianSpec::Eikonal { speed, .. } => {
                check_expr("hamiltonian.speed", speed)?;
            }
            HamiltonianSpec::Anisotropic { metric, .. } => {
                for (i, row) in metric.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        check_expr(&format!("hamiltonian.metric[{i}][{j}]"), e)?;
                    }
                }
            }
        }
        finite("hamiltonian.shift", &[self.hamiltonian.shift()])?;

        match &self.oblique.angle {
            Angle::Degrees(d) => {
                if !(d.abs() < 90.0) {
                    return Err(invalid(
                        "oblique.angle",
                        format!("obliqueness requires |theta| < 90 degrees, got {d}"),
                    ));
                }
                if self.domain.dim() == 1 && *d != 0.0 {
                    return Err(invalid("oblique.angle", "must be 0 or \"normal\" on an interval"));
                }
            }
            Angle::Named(s) if s == "normal" => {}
            Angle::Named(s) => {
                return Err(invalid("oblique.angle", format!("expected degrees or \"normal\", got \"{s}\"")));
            }
        }
        check_expr("oblique.g", &self.oblique.g)?;

        positive("grid.h", self.grid.h)?;
        positive("grid.horizon", self.grid.horizon)?;
        if let Some(dt) = self.grid.dt {
            positive("grid.dt", dt)?;
        }

        let r = &self.run;
        check_expr("run.initial", &r.initial)?;
        for (k, e) in r.velocity.iter().enumerate() {
            check_expr(&format!("run.velocity[{k}]"), e)?;
        }
        for (k, p) in r.probes.iter().enumerate() {
            finite(&format!("run.probes[{k}]"), p)?;
        }
        if let Some(p) = r.from {
            finite("run.from", &p)?;
        }
        if let Some(p) = r.at {
            finite("run.at", &p)?;
        }
        tolerance("run.tol_c", r.tol_c)?;
        tolerance("run.slope_tol", r.slope_tol)?;
        tolerance("run.tol_skorokhod", r.tol_skorokhod)?;
        tolerance("run.tol_oracle", r.tol_oracle)?;
        tolerance("run.slack", r.slack)?;
        if let Some(t) = r.tol_aubry {
            tolerance("run.tol_aubry", t)?;
        }
        if let Some(t) = r.tol_cal {
            tolerance("run.tol_cal", t)?;
        }
        positive("run.slope_horizon", r.slope_horizon)?;
        if let Some(dt) = r.slope_dt {
            positive("run.slope_dt", dt)?;
        }
        if let Some(w) = r.window {
            positive("run.window", w)?;
        }
        if r.pieces == 0 {
            return Err(invalid("run.pieces", "must be at least 1"));
        }
        if r.pairs == 0 {
            return Err(invalid("run.pairs", "must be at least 1"));
        }
        if r.refine < 2 {
            return Err(invalid("run.refine", format!("must be at least 2, got {}", r.refine)));
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "at least one of \"csv\", \"json\" is required"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[domain]\nfamily = \"disk\"\nradius = 1.0\n\n[hamiltonian]\nfamily = \"kinetic\"\n";

    #[test]
    fn minimal_spec_gets_defaults() {
        let s = parse_spec(MINIMAL).unwrap();
        assert_eq!(s.domain, DomainSpec::Disk { center: [0.0, 0.0], radius: 1.0 });
        assert_eq!(s.hamiltonian, HamiltonianSpec::Kinetic { shift: 0.0 });
        assert_eq!(s.oblique, ObliqueSpec::default());
        assert_eq!(s.grid, GridSpec::default());
        assert_eq!(s.run, RunSpec::default());
        assert_eq!(s.output, OutputSpec::default());
    }

    #[test]
    fn emitted_spec_parses_back() {
        let mut s = parse_spec(MINIMAL).unwrap();
        s.hamiltonian = HamiltonianSpec::Anisotropic {
            metric: [["2 + x".into(), "0.3".into()], ["0.3".into(), "1".into()]],
            shift: 0.25,
        };
        s.oblique.angle = Angle::Degrees(-30.5);
        s.run.from = Some([0.1, -0.2]);
        s.run.probes = vec![[0.0, 0.0], [0.5, 0.5]];
        s.grid.dt = Some(0.003);
        assert_eq!(parse_spec(&emit(&s)).unwrap(), s);
        assert_eq!(parse_spec(&emit_json(&s)).unwrap(), s);
    }

    #[test]
    fn angle_outside_the_oblique_range() {
        let text = format!("{MINIMAL}\n[oblique]\nangle = 95\n");
        let e = parse_spec(&text).unwrap_err();
        match e {
            SpecError::Invalid { path, message } => {
                assert_eq!(path, "oblique.angle");
                assert!(message.contains("obliqueness"));
            }
            other => panic!("{other:?}"),
        }
        let text = format!("{MINIMAL}\n[oblique]\nangle = \"tilted\"\n");
        assert!(matches!(parse_spec(&text), Err(SpecError::Invalid { .. })));
    }

    #[test]
    fn unknown_family_lists_the_known_ones() {
        let text = MINIMAL.replace("\"kinetic\"", "\"relativistic\"");
        let msg = parse_spec(&text).unwrap_err().to_string();
        for f in ["kinetic", "mechanical", "eikonal", "anisotropic"] {
            assert!(msg.contains(f), "{msg}");
        }
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn field_paths_in_diagnostics() {
        let text = MINIMAL.replace("\"kinetic\"", "\"mechanical\"\npotential = \"x^2 +\"");
        let e = parse_spec(&text).unwrap_err();
        assert!(e.to_string().starts_with("hamiltonian.potential"), "{e}");
        let text = format!("{MINIMAL}\n[grid]\nh = -0.1\n");
        assert!(parse_spec(&text).unwrap_err().to_string().starts_with("grid.h"));
        let text = format!("{MINIMAL}\n[run]\ntol_c = -1.0\n");
        assert!(parse_spec(&text).unwrap_err().to_string().starts_with("run.tol_c"));
        let text = format!("{MINIMAL}\n[grid]\nspacing = 0.1\n");
        assert!(matches!(parse_spec(&text), Err(SpecError::Syntax(_))));
    }
}
