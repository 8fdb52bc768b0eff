//! Turning a validated spec into library objects.

use std::sync::Arc;

use thiserror::Error;
use weakkam::geometry::{BoundingBox, ImplicitDomain, ObliqueField, ScalarFn, VectorFn};
use weakkam::hamiltonian::HamiltonianModel;
use weakkam::lax_oleinik::{Grid, GridField};
use weakkam::{Domain, Field, Model};

use crate::expr::Expr;
use crate::spec::{Angle, DomainSpec, HamiltonianSpec, ProblemSpec};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("{path}: {message}")]
    Setup { path: String, message: String },
}

fn setup(path: &str, e: impl ToString) -> ProblemError {
    ProblemError::Setup { path: path.to_string(), message: e.to_string() }
}

/// Domain, boundary field, model (with the configured shift) and grid.
#[derive(Clone)]
pub struct Problem {
    pub domain: Domain,
    pub field: Field,
    pub model: Model,
    pub grid: Arc<Grid<f64>>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("domain", &self.domain.label())
            .field("family", &self.model.family())
            .field("nodes", &self.grid.len())
            .finish()
    }
}

fn compile(path: &str, text: &str) -> Result<ScalarFn<f64>, ProblemError> {
    let e = Expr::parse(text).map_err(|e| setup(path, e))?;
    Ok(Arc::new(move |x: [f64; 2]| e.eval(x)))
}

fn polynomial(terms: &[[f64; 3]], lo: [f64; 2], hi: [f64; 2]) -> Result<Domain, ProblemError> {
    let t: Vec<(i32, i32, f64)> = terms.iter().map(|t| (t[0] as i32, t[1] as i32, t[2])).collect();
    let t2 = t.clone();
    let psi: ScalarFn<f64> = Arc::new(move |x: [f64; 2]| t.iter().map(|&(i, j, c)| c * x[0].powi(i) * x[1].powi(j)).sum());
    let grad: VectorFn<f64> = Arc::new(move |x: [f64; 2]| {
        let mut g = [0.0, 0.0];
        for &(i, j, c) in &t2 {
            if i > 0 {
                g[0] += c * i as f64 * x[0].powi(i - 1) * x[1].powi(j);
            }
            if j > 0 {
                g[1] += c * j as f64 * x[0].powi(i) * x[1].powi(j - 1);
            }
        }
        g
    });
    ImplicitDomain::new("polynomial", psi, grad, 2, BoundingBox::new(lo, hi)).map_err(|e| setup("domain", e))
}

pub fn build_domain(spec: &DomainSpec) -> Result<Domain, ProblemError> {
    let d = match spec {
        DomainSpec::Disk { center, radius } => ImplicitDomain::disk(*center, *radius),
        DomainSpec::Ellipse { center, a, b } => ImplicitDomain::ellipse(*center, *a, *b),
        DomainSpec::RoundedBox { center, half_width, half_height } => {
            ImplicitDomain::rounded_box(*center, *half_width, *half_height)
        }
        DomainSpec::Interval { lo, hi } => ImplicitDomain::interval(*lo, *hi),
        DomainSpec::Polynomial { terms, lo, hi } => return polynomial(terms, *lo, *hi),
    };
    d.map_err(|e| setup("domain", e))
}

pub fn build_model(spec: &HamiltonianSpec, dim: usize) -> Result<Model, ProblemError> {
    let m = match spec {
        HamiltonianSpec::Kinetic { .. } => HamiltonianModel::kinetic(dim),
        HamiltonianSpec::Mechanical { potential, .. } => {
            HamiltonianModel::mechanical(dim, compile("hamiltonian.potential", potential)?)
        }
        HamiltonianSpec::Eikonal { speed, .. } => HamiltonianModel::eikonal(dim, compile("hamiltonian.speed", speed)?),
        HamiltonianSpec::Anisotropic { metric, .. } => {
            let mut entries = Vec::with_capacity(4);
            for (i, row) in metric.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    entries.push(Expr::parse(e).map_err(|e| setup(&format!("hamiltonian.metric[{i}][{j}]"), e))?);
                }
            }
            HamiltonianModel::anisotropic(
                dim,
                Arc::new(move |x: [f64; 2]| {
                    [[entries[0].eval(x), entries[1].eval(x)], [entries[2].eval(x), entries[3].eval(x)]]
                }),
            )
        }
    };
    Ok(m.map_err(|e| setup("hamiltonian", e))?.with_shift(spec.shift()))
}

pub fn build_problem(spec: &ProblemSpec) -> Result<Problem, ProblemError> {
    let domain = build_domain(&spec.domain)?;
    let g = compile("oblique.g", &spec.oblique.g)?;
    let field = match spec.oblique.angle {
        Angle::Degrees(d) => ObliqueField::rotated_normal(&domain, d.to_radians(), g),
        Angle::Named(_) => ObliqueField::rotated_normal(&domain, 0.0, g),
    }
    .map_err(|e| setup("oblique", e))?;
    let model = build_model(&spec.hamiltonian, domain.dim())?;
    model.validate(&domain).map_err(|e| setup("hamiltonian", e))?;
    let grid = Arc::new(Grid::new(&domain, spec.grid.h).map_err(|e| setup("grid.h", e))?);
    Ok(Problem { domain, field, model, grid })
}

impl Problem {
    /// Field from an expression in `x` and `y`.
    pub fn field_from(&self, path: &str, text: &str) -> Result<GridField<f64>, ProblemError> {
        let f = compile(path, text)?;
        Ok(GridField::from_fn(self.grid.clone(), |x| f(x)))
    }
}
