//! Discrete sub/supersolution tests.
//!
//! At a node `x` with neighbors `x + z_j`, the momenta of smooth functions
//! touching `u` from above are approximated by the polygon
//! `S = {p : u(x + z_j) - u(x) <= p.z_j + kappa |z_j|^2}` and those touching
//! from below by `D = {p : u(x + z_j) - u(x) >= p.z_j - kappa |z_j|^2}`.
//! The subsolution test is `max_S H <= a` (attained at a vertex, `H` being
//! convex), the supersolution test is `min_D H >= a`. At boundary nodes the
//! momenta satisfying the oblique alternative are removed first.

use thiserror::Error;

use super::grid::GridField;
use crate::geometry::ObliqueField;
use crate::hamiltonian::HamiltonianModel;
use crate::point::{self, Point};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ViscosityError {
    #[error("{which} does not pass its own check at level {level}: defect {defect}")]
    Precondition { which: &'static str, level: f64, defect: f64 },
    #[error("comparison needs a1 < a2, got a1 = {a1}, a2 = {a2}")]
    NotStrict { a1: f64, a2: f64 },
    #[error("weight {0} is outside [0, 1]")]
    BadWeight(f64),
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Tuning of the momentum polygons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityOptions<T> {
    /// Fixed curvature allowance `kappa`; by default it is estimated per
    /// node from second differences along opposite neighbor pairs.
    pub kappa: Option<T>,
    /// Half-width of the momentum box; defaults to `10 (1 + Lip)`.
    pub p_box: Option<T>,
}

impl<T: Real> Default for ViscosityOptions<T> {
    fn default() -> Self {
        Self { kappa: None, p_box: None }
    }
}

/// Tolerance `c h (1 + Lip)` used by the checks when none is given.
pub fn default_tolerance<T: Real>(u: &GridField<T>) -> T {
    T::lit(4.0) * u.grid.h() * (T::one() + u.lipschitz_ratio())
}

/// Per-node outcome of a check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport<T> {
    pub level: T,
    pub tol: T,
    /// Worst `H - a` (sub) or `a - H` (super), clipped below at zero.
    pub defects: Vec<T>,
    pub worst: T,
    pub witness: Option<usize>,
    pub passed: bool,
}

impl<T: Real> CheckReport<T> {
    fn from_defects(level: T, tol: T, defects: Vec<T>, mask: Option<&[bool]>) -> Self {
        let mut worst = T::zero();
        let mut witness = None;
        for (i, &d) in defects.iter().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            if d > worst {
                worst = d;
                witness = Some(i);
            }
        }
        Self { level, tol, defects, worst, witness, passed: worst <= tol }
    }
}

/// Half-plane `n.p <= c`.
#[derive(Debug, Clone, Copy)]
struct Half<T> {
    n: Point<T>,
    c: T,
}

fn clip<T: Real>(poly: &[Point<T>], hp: Half<T>) -> Vec<Point<T>> {
    let k = poly.len();
    if k == 0 {
        return Vec::new();
    }
    let slack = T::lit(1e-12) * (T::one() + hp.c.abs());
    let f = |p: Point<T>| point::dot(hp.n, p) - hp.c;
    let mut out = Vec::with_capacity(k + 2);
    for i in 0..k {
        let a = poly[i];
        let b = poly[(i + 1) % k];
        let (fa, fb) = (f(a), f(b));
        let ina = fa <= slack;
        let inb = fb <= slack;
        if ina {
            out.push(a);
        }
        if ina != inb {
            let s = fa / (fa - fb);
            out.push(point::add(a, point::scale(point::sub(b, a), s)));
        }
    }
    out
}

fn start_polygon<T: Real>(dim: usize, b: T) -> Vec<Point<T>> {
    if dim == 1 {
        vec![[-b, T::zero()], [b, T::zero()]]
    } else {
        vec![[-b, -b], [b, -b], [b, b], [-b, b]]
    }
}

struct Context<'a, T: Real> {
    model: &'a HamiltonianModel<T>,
    field: &'a ObliqueField<T>,
    u: &'a GridField<T>,
    /// Per-node allowances for upward and downward curvature.
    k_up: Vec<T>,
    k_down: Vec<T>,
    p_box: T,
}

/// Extreme second differences of `u` along nearly opposite neighbor pairs;
/// `None` when the node has no such pair.
fn curvature_range<T: Real>(u: &GridField<T>, i: usize) -> Option<(T, T)> {
    let g = &u.grid;
    let x = g.node(i);
    let nb = g.neighbors(i);
    let mut out: Option<(T, T)> = None;
    for (a, &j) in nb.iter().enumerate() {
        let zj = point::sub(g.node(j), x);
        let lj = point::norm(zj);
        for &k in &nb[a + 1..] {
            let zk = point::sub(g.node(k), x);
            let lk = point::norm(zk);
            if point::dot(zj, zk) > -T::lit(0.985) * lj * lk {
                continue;
            }
            let dj = u.values[j] - u.values[i];
            let dk = u.values[k] - u.values[i];
            let q = T::two() * (dj / lj + dk / lk) / (lj + lk);
            out = Some(match out {
                None => (q, q),
                Some((lo, hi)) => (lo.min(q), hi.max(q)),
            });
        }
    }
    out
}

fn median<T: Real>(v: &mut [T]) -> Option<T> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Some(v[v.len() / 2])
}

impl<'a, T: Real> Context<'a, T> {
    fn new(
        model: &'a HamiltonianModel<T>,
        field: &'a ObliqueField<T>,
        u: &'a GridField<T>,
        opts: &ViscosityOptions<T>,
    ) -> Self {
        let lip = u.lipschitz_ratio();
        let g = &u.grid;
        let n = g.len();
        let (k_up, k_down) = match opts.kappa {
            Some(k) => (vec![k; n], vec![k; n]),
            None => {
                let own: Vec<Option<(T, T)>> = (0..n).map(|i| curvature_range(u, i)).collect();
                let margin = T::lit(0.55);
                let mut up = vec![T::zero(); n];
                let mut down = vec![T::zero(); n];
                for i in 0..n {
                    let (lo, hi) = match own[i] {
                        Some(r) if !g.is_boundary(i) => r,
                        _ => {
                            // borrow the median range of neighbors that have a full stencil
                            let mut los = Vec::new();
                            let mut his = Vec::new();
                            for &j in g.neighbors(i) {
                                if let (Some((lo, hi)), false) = (own[j], g.is_boundary(j)) {
                                    los.push(lo);
                                    his.push(hi);
                                }
                            }
                            match (own[i], median(&mut los), median(&mut his)) {
                                (Some(r), Some(lo), Some(hi)) => (r.0.min(lo), r.1.max(hi)),
                                (None, Some(lo), Some(hi)) => (lo, hi),
                                (r, _, _) => r.unwrap_or((T::zero(), T::zero())),
                            }
                        }
                    };
                    up[i] = (hi * margin).max(T::zero());
                    down[i] = (-lo * margin).max(T::zero());
                }
                (up, down)
            }
        };
        Self { model, field, u, k_up, k_down, p_box: opts.p_box.unwrap_or(T::lit(10.0) * (T::one() + lip)) }
    }

    /// Constraints of `S` (upper) or `D` (lower) at node `i`.
    fn halves(&self, i: usize, upper: bool) -> Vec<Half<T>> {
        let g = &self.u.grid;
        let x = g.node(i);
        let ui = self.u.values[i];
        let kappa = if upper { self.k_up[i] } else { self.k_down[i] };
        g.neighbors(i)
            .iter()
            .map(|&j| {
                let z = point::sub(g.node(j), x);
                let dz = self.u.values[j] - ui;
                let q = kappa * point::dot(z, z);
                if upper {
                    Half { n: point::neg(z), c: q - dz }
                } else {
                    Half { n: z, c: dz + q }
                }
            })
            .collect()
    }

    fn polygon(&self, halves: &[Half<T>]) -> Vec<Point<T>> {
        let mut poly = start_polygon(self.u.grid.dim(), self.p_box);
        for &hp in halves {
            poly = clip(&poly, hp);
            if poly.is_empty() {
                break;
            }
        }
        poly
    }

    fn sub_defect(&self, i: usize, a: T, tol: T) -> T {
        let g = &self.u.grid;
        let x = g.node(i);
        let mut halves = self.halves(i, true);
        if g.is_boundary(i) {
            // momenta with gamma.p <= g + tol already satisfy the boundary alternative
            let gm = self.field.gamma(x);
            halves.push(Half { n: point::neg(gm), c: -(self.field.g(x) + tol) });
        }
        let poly = self.polygon(&halves);
        poly.iter().map(|&p| self.model.h(x, p) - a).fold(T::zero(), T::max)
    }

    fn super_defect(&self, i: usize, a: T, tol: T) -> T {
        let g = &self.u.grid;
        let x = g.node(i);
        let mut halves = self.halves(i, false);
        if g.is_boundary(i) {
            let gm = self.field.gamma(x);
            halves.push(Half { n: gm, c: self.field.g(x) - tol });
        }
        let poly = self.polygon(&halves);
        if poly.is_empty() {
            return T::zero();
        }
        let hmin = convex_min(|p| self.model.h(x, p), &poly, &halves, self.p_box, g.dim());
        (a - hmin).max(T::zero())
    }
}

/// Minimum of a convex function over a convex polygon: vertices, a sample
/// lattice and a constrained pattern search from the best sample.
fn convex_min<T: Real>(f: impl Fn(Point<T>) -> T, poly: &[Point<T>], halves: &[Half<T>], b: T, dim: usize) -> T {
    let inside = |p: Point<T>| {
        p[0].abs() <= b
            && p[1].abs() <= b
            && halves.iter().all(|h| point::dot(h.n, p) <= h.c + T::lit(1e-12) * (T::one() + h.c.abs()))
    };
    let mut lo = poly[0];
    let mut hi = poly[0];
    let mut best = (f(poly[0]), poly[0]);
    let mut cx = point::zero();
    for &p in poly {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
        let v = f(p);
        if v < best.0 {
            best = (v, p);
        }
        cx = point::add(cx, p);
    }
    let c = point::scale(cx, T::one() / T::from_usize_lossy(poly.len()));
    if inside(c) && f(c) < best.0 {
        best = (f(c), c);
    }
    let n = 10;
    for a in 0..=n {
        for bb in 0..=(if dim == 1 { 0 } else { n }) {
            let p = [
                lo[0] + (hi[0] - lo[0]) * T::from_usize_lossy(a) / T::from_usize_lossy(n),
                lo[1] + (hi[1] - lo[1]) * T::from_usize_lossy(bb) / T::from_usize_lossy(n),
            ];
            if inside(p) {
                let v = f(p);
                if v < best.0 {
                    best = (v, p);
                }
            }
        }
    }
    let mut step = (hi[0] - lo[0]).max(hi[1] - lo[1]) / T::from_usize_lossy(n);
    let dirs: Vec<Point<T>> = if dim == 1 {
        vec![[T::one(), T::zero()], [-T::one(), T::zero()]]
    } else {
        (0..8)
            .map(|k| {
                let a = T::PI() * T::from_usize_lossy(k) / T::lit(4.0);
                [a.cos(), a.sin()]
            })
            .collect()
    };
    for _ in 0..40 {
        if !(step > T::zero()) {
            break;
        }
        let mut moved = false;
        for &d in &dirs {
            let p = point::axpy(best.1, step, d);
            if inside(p) {
                let v = f(p);
                if v < best.0 {
                    best = (v, p);
                    moved = true;
                }
            }
        }
        if !moved {
            step = step * T::half();
        }
    }
    best.0
}

/// Subsolution test at level `a`: `H(x, p) <= a + tol` for every momentum in
/// the superdifferential proxy, with `gamma.p <= g + tol` accepted instead
/// at boundary nodes. Nodes with `mask[i] == false` are excluded from the
/// verdict.
pub fn check_subsolution<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u: &GridField<T>,
    a: T,
    tol: T,
) -> CheckReport<T> {
    check_subsolution_with(model, field, u, a, tol, &ViscosityOptions::default(), None)
}

pub fn check_subsolution_with<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u: &GridField<T>,
    a: T,
    tol: T,
    opts: &ViscosityOptions<T>,
    mask: Option<&[bool]>,
) -> CheckReport<T> {
    let ctx = Context::new(model, field, u, opts);
    let defects = (0..u.grid.len()).map(|i| ctx.sub_defect(i, a, tol)).collect();
    CheckReport::from_defects(a, tol, defects, mask)
}

/// Supersolution test at level `a`: `H(x, p) >= a - tol` on the
/// subdifferential proxy, with `gamma.p >= g - tol` accepted at boundary
/// nodes.
pub fn check_supersolution<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u: &GridField<T>,
    a: T,
    tol: T,
) -> CheckReport<T> {
    check_supersolution_with(model, field, u, a, tol, &ViscosityOptions::default(), None)
}

pub fn check_supersolution_with<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u: &GridField<T>,
    a: T,
    tol: T,
    opts: &ViscosityOptions<T>,
    mask: Option<&[bool]>,
) -> CheckReport<T> {
    let ctx = Context::new(model, field, u, opts);
    let defects = (0..u.grid.len()).map(|i| ctx.super_defect(i, a, tol)).collect();
    CheckReport::from_defects(a, tol, defects, mask)
}

/// Outcome of [`stability_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport<T> {
    pub min_defect: T,
    pub combination_defect: T,
    pub allowed: T,
    pub passed: bool,
}

/// Checks that `min(u1, u2)` and `lambda u1 + (1 - lambda) u2` remain
/// subsolutions at level `a`, allowing `slack` on top of `tol`.
pub fn stability_suite<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u1: &GridField<T>,
    u2: &GridField<T>,
    a: T,
    lambda: T,
    tol: T,
    slack: T,
) -> Result<StabilityReport<T>, ViscosityError> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(ViscosityError::BadWeight(lambda.as_f64()));
    }
    if u1.values.len() != u2.values.len() {
        return Err(ViscosityError::GridMismatch);
    }
    for (which, u) in [("first field", u1), ("second field", u2)] {
        let r = check_subsolution(model, field, u, a, tol);
        if !r.passed {
            return Err(ViscosityError::Precondition { which, level: a.as_f64(), defect: r.worst.as_f64() });
        }
    }
    let vmin = GridField {
        grid: u1.grid.clone(),
        values: u1.values.iter().zip(&u2.values).map(|(&p, &q)| p.min(q)).collect(),
    };
    let vcomb = GridField {
        grid: u1.grid.clone(),
        values: u1.values.iter().zip(&u2.values).map(|(&p, &q)| lambda * p + (T::one() - lambda) * q).collect(),
    };
    let allowed = tol + slack;
    let min_defect = check_subsolution(model, field, &vmin, a, tol).worst;
    let combination_defect = check_subsolution(model, field, &vcomb, a, tol).worst;
    Ok(StabilityReport {
        min_defect,
        combination_defect,
        allowed,
        passed: min_defect <= allowed && combination_defect <= allowed,
    })
}

/// Outcome of [`comparison_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport<T> {
    /// `max (u_sub - v_super)`.
    pub max_difference: T,
    pub argmax: usize,
    /// Maximum of the difference over the frozen set.
    pub frozen_max: T,
    /// `max_difference - frozen_max`: positive when the maximum sits away
    /// from the frozen set.
    pub interior_defect: T,
    /// `max - min` of the difference.
    pub oscillation: T,
    /// Sub defect of `u_sub` plus super defect of `v_super` at the argmax.
    pub local_defect: T,
    pub violation: bool,
}

/// Comparison between a subsolution at `a1` and a supersolution at `a2 > a1`:
/// the difference must not peak away from the frozen nodes (node 0 is pinned
/// when `frozen` is empty).
#[allow(clippy::too_many_arguments)]
pub fn comparison_suite<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u_sub: &GridField<T>,
    v_super: &GridField<T>,
    a1: T,
    a2: T,
    frozen: &[usize],
    tol: T,
) -> Result<ComparisonReport<T>, ViscosityError> {
    if !(a1 < a2) {
        return Err(ViscosityError::NotStrict { a1: a1.as_f64(), a2: a2.as_f64() });
    }
    if u_sub.values.len() != v_super.values.len() {
        return Err(ViscosityError::GridMismatch);
    }
    let diff: Vec<T> = u_sub.values.iter().zip(&v_super.values).map(|(&p, &q)| p - q).collect();
    let mut argmax = 0;
    for (i, &d) in diff.iter().enumerate() {
        if d > diff[argmax] {
            argmax = i;
        }
    }
    let max_difference = diff[argmax];
    let min_difference = diff.iter().copied().fold(T::infinity(), T::min);
    let pinned = [0usize];
    let set = if frozen.is_empty() { &pinned[..] } else { frozen };
    let frozen_max = set.iter().map(|&i| diff[i]).fold(T::neg_infinity(), T::max);
    let interior_defect = (max_difference - frozen_max).max(T::zero());
    let sub = check_subsolution(model, field, u_sub, a1, tol);
    let sup = check_supersolution(model, field, v_super, a2, tol);
    let local_defect = sub.defects[argmax] + sup.defects[argmax];
    Ok(ComparisonReport {
        max_difference,
        argmax,
        frozen_max,
        interior_defect,
        oscillation: max_difference - min_difference,
        local_defect,
        violation: interior_defect > tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImplicitDomain;
    use crate::lax_oleinik::grid::Grid;
    use std::sync::Arc;

    fn disk_grid(h: f64) -> (ImplicitDomain<f64>, ObliqueField<f64>, Arc<Grid<f64>>) {
        let d = ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap();
        let f = ObliqueField::normal(&d).unwrap();
        let g = Arc::new(Grid::new(&d, h).unwrap());
        (d, f, g)
    }

    #[test]
    fn clipping_square() {
        let sq = start_polygon::<f64>(2, 1.0);
        let half = clip(&sq, Half { n: [1.0, 0.0], c: 0.0 });
        assert_eq!(half.len(), 4);
        assert!(half.iter().all(|p| p[0] <= 1e-12));
        assert!(clip(&sq, Half { n: [1.0, 0.0], c: -2.0 }).is_empty());
        let seg = clip(&start_polygon::<f64>(1, 1.0), Half { n: [1.0, 0.0], c: 0.5 });
        let xmax = seg.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
        assert!((xmax - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constants_and_cones() {
        let (_, f, g) = disk_grid(0.1);
        let kin = HamiltonianModel::kinetic(2).unwrap();
        let c = GridField::constant(g.clone(), 1.0);
        let r = check_subsolution(&kin, &f, &c, 0.0, 1e-9);
        assert!(r.passed && r.worst < 1e-18, "{}", r.worst);
        let cone = GridField::from_fn(g.clone(), |x| 2.0 * point::norm(x));
        let r = check_subsolution(&kin, &f, &cone, 0.0, default_tolerance(&cone));
        assert!(!r.passed && r.worst > 1.5, "{}", r.worst);
        let shifted = HamiltonianModel::kinetic(2).unwrap().with_shift(1.0);
        assert!(check_supersolution(&shifted, &f, &c, -1.0, 0.05).passed);
        assert!(!check_supersolution(&shifted, &f, &c, 0.0, 0.05).passed);
    }

    #[test]
    fn comparison_requires_strict_levels() {
        let (_, f, g) = disk_grid(0.2);
        let kin = HamiltonianModel::kinetic(2).unwrap();
        let c = GridField::constant(g, 0.0);
        assert!(matches!(comparison_suite(&kin, &f, &c, &c, 0.0, 0.0, &[], 0.1), Err(ViscosityError::NotStrict { .. })));
        let r = comparison_suite(&kin, &f, &c, &c.map(|v| v + 3.0), -1.0, 0.0, &[], 0.1).unwrap();
        assert_eq!(r.interior_defect, 0.0);
        assert_eq!(r.oscillation, 0.0);
    }
}
