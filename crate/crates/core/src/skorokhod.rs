//! Reflected dynamics `eta' + l gamma(eta) = v` in the closed domain.
//!
//! Paths are produced by the penalized ODE
//! `xi' = v - q(xi) gamma(xi) / eps` with `q = clamp(psi / rho0, 0, delta)`,
//! then projected back onto the closure; the multiplier is read off as
//! `l = q(xi) / eps`. Halving `eps` until successive projected paths agree
//! gives [`solve_reflected`].

use thiserror::Error;

use crate::geometry::{GeometryError, ImplicitDomain, ObliqueField};
use crate::point::{self, Point};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkorokhodError {
    #[error("start point ({}, {}) is outside the closed domain", x[0], x[1])]
    NotInClosure { x: [f64; 2] },
    #[error("penalized ODE too stiff near t = {t}: substepping cannot bound the penalty increment")]
    StiffnessFailure { t: f64 },
    #[error("epsilon halving did not converge; sup-norm differences {diffs:?}")]
    NoConvergence { diffs: Vec<f64> },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Input velocity, piecewise constant on a uniform time grid:
/// `v(t) = values[k]` for `t in [k dt, (k+1) dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal<T> {
    pub dt: T,
    pub values: Vec<Point<T>>,
}

impl<T: Real> InputSignal<T> {
    pub fn new(dt: T, values: Vec<Point<T>>) -> Result<Self, SkorokhodError> {
        if !(dt > T::zero()) || values.is_empty() {
            return Err(SkorokhodError::InvalidParameter("input needs dt > 0 and at least one piece".into()));
        }
        Ok(Self { dt, values })
    }

    pub fn constant(v: Point<T>, horizon: T, pieces: usize) -> Self {
        let n = pieces.max(1);
        Self { dt: horizon / T::from_usize_lossy(n), values: vec![v; n] }
    }

    /// Samples `f` at the midpoint of each piece.
    pub fn from_fn(horizon: T, pieces: usize, f: impl Fn(T) -> Point<T>) -> Self {
        let n = pieces.max(1);
        let dt = horizon / T::from_usize_lossy(n);
        let values = (0..n).map(|k| f((T::from_usize_lossy(k) + T::half()) * dt)).collect();
        Self { dt, values }
    }

    pub fn pieces(&self) -> usize {
        self.values.len()
    }

    pub fn horizon(&self) -> T {
        self.dt * T::from_usize_lossy(self.values.len())
    }

    pub fn times(&self) -> Vec<T> {
        (0..=self.values.len()).map(|k| self.dt * T::from_usize_lossy(k)).collect()
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().map(|&v| point::norm(v)).fold(T::zero(), T::max)
    }

    /// Componentwise truncation `v 1{|v| <= k}`, the device for unbounded inputs.
    pub fn clipped(&self, k: T) -> Self {
        let values = self
            .values
            .iter()
            .map(|&v| if point::norm(v) <= k { v } else { point::zero() })
            .collect();
        Self { dt: self.dt, values }
    }

    /// `int_0^T |v - w|` for inputs on the same grid.
    pub fn l1_distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| point::dist(a, b) * self.dt)
            .sum()
    }

    /// Input on `[offset, T)` re-based to start at zero (offset in pieces).
    pub fn tail(&self, offset: usize) -> Self {
        Self { dt: self.dt, values: self.values[offset.min(self.values.len() - 1)..].to_vec() }
    }

    pub fn head(&self, pieces: usize) -> Self {
        Self { dt: self.dt, values: self.values[..pieces.clamp(1, self.values.len())].to_vec() }
    }
}

/// Fixed-step integrator used for the penalized ODE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// Explicit Euler with substepping.
    Euler,
    /// Heun (explicit trapezoid).
    Heun,
}

/// Penalization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyScheme<T> {
    pub epsilon: T,
    pub cap_delta: T,
    pub h_ode: T,
    pub method: Integrator,
}

impl<T: Real> PenaltyScheme<T> {
    /// Scheme with the cap taken as half the boundary band of `domain`.
    pub fn new(domain: &ImplicitDomain<T>, epsilon: T, h_ode: T, method: Integrator) -> Result<Self, SkorokhodError> {
        if !(epsilon > T::zero()) {
            return Err(SkorokhodError::InvalidParameter("epsilon must be positive".into()));
        }
        if !(h_ode > T::zero() && h_ode <= epsilon / T::lit(4.0)) {
            return Err(SkorokhodError::InvalidParameter("need 0 < h_ode <= epsilon / 4".into()));
        }
        Ok(Self { epsilon, cap_delta: T::half() * domain.band(), h_ode, method })
    }

    /// `min(max(psi / rho0, 0), delta)`: the penalty in length units.
    #[inline]
    pub fn q(&self, domain: &ImplicitDomain<T>, x: Point<T>) -> T {
        (domain.psi(x) / domain.rho0()).max(T::zero()).min(self.cap_delta)
    }
}

/// Output of [`solve_penalized`], sampled on the input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPath<T> {
    pub t: Vec<T>,
    pub xi: Vec<Point<T>>,
    /// Running integral of `q(xi) gamma(xi) / eps`.
    pub impulse: Vec<Point<T>>,
    /// Running integral of `q(xi) / eps`.
    pub push: Vec<T>,
    /// `max_t q(xi(t)) / (eps |v|_inf)`.
    pub excursion_k: T,
    pub epsilon: T,
}

fn to_f64<T: Real>(x: Point<T>) -> [f64; 2] {
    [x[0].as_f64(), x[1].as_f64()]
}

/// Integrates the penalized ODE from `x0` over the horizon of `v`.
pub fn solve_penalized<T: Real>(
    domain: &ImplicitDomain<T>,
    field: &ObliqueField<T>,
    scheme: &PenaltyScheme<T>,
    x0: Point<T>,
    v: &InputSignal<T>,
) -> Result<RawPath<T>, SkorokhodError> {
    if !domain.in_closure(x0) {
        return Err(SkorokhodError::NotInClosure { x: to_f64(x0) });
    }
    let eps = scheme.epsilon;
    let rate = |x: Point<T>| -> (Point<T>, T) {
        let q = scheme.q(domain, x);
        if q > T::zero() {
            let l = q / eps;
            (point::scale(field.gamma(x), l), l)
        } else {
            (point::zero(), T::zero())
        }
    };
    let n = v.pieces();
    let base_sub = (v.dt / scheme.h_ode.min(eps / T::lit(4.0))).ceil().to_usize().unwrap_or(1).max(1);

    let mut t = Vec::with_capacity(n + 1);
    let mut xi = Vec::with_capacity(n + 1);
    let mut impulse = Vec::with_capacity(n + 1);
    let mut push = Vec::with_capacity(n + 1);
    let mut x = x0;
    let mut imp = point::zero();
    let mut pushed = T::zero();
    let mut max_q = T::zero();
    t.push(T::zero());
    xi.push(x);
    impulse.push(imp);
    push.push(pushed);

    for (k, &vk) in v.values.iter().enumerate() {
        let mut sub = base_sub;
        'retry: for _attempt in 0..12 {
            let hs = v.dt / T::from_usize_lossy(sub);
            let mut y = x;
            let mut imp_k = imp;
            let mut push_k = pushed;
            let mut mq = max_q;
            for _ in 0..sub {
                let q0 = scheme.q(domain, y);
                let (f0, l0) = rate(y);
                let (y_next, df, dl) = match scheme.method {
                    Integrator::Euler => (point::axpy(y, hs, point::sub(vk, f0)), f0, l0),
                    Integrator::Heun => {
                        let pred = point::axpy(y, hs, point::sub(vk, f0));
                        let (f1, l1) = rate(pred);
                        let favg = point::scale(point::add(f0, f1), T::half());
                        (point::axpy(y, hs, point::sub(vk, favg)), favg, (l0 + l1) * T::half())
                    }
                };
                let q1 = scheme.q(domain, y_next);
                if (q1 - q0).abs() >= scheme.cap_delta * T::half() {
                    sub *= 2;
                    continue 'retry;
                }
                imp_k = point::axpy(imp_k, hs, df);
                push_k = push_k + hs * dl;
                y = y_next;
                mq = mq.max(q1);
            }
            x = y;
            imp = imp_k;
            pushed = push_k;
            max_q = mq;
            t.push(v.dt * T::from_usize_lossy(k + 1));
            xi.push(x);
            impulse.push(imp);
            push.push(pushed);
            break;
        }
        if xi.len() != k + 2 {
            return Err(SkorokhodError::StiffnessFailure { t: (v.dt * T::from_usize_lossy(k)).as_f64() });
        }
    }
    let vmax = v.sup_norm();
    let excursion_k = if vmax > T::zero() { max_q / (eps * vmax) } else { T::zero() };
    Ok(RawPath { t, xi, impulse, push, excursion_k, epsilon: eps })
}

/// Residuals of a sampled triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals<T> {
    /// `sup_t |eta(t) - eta(0) - int_0^t (v - l gamma)|`.
    pub ode: T,
    /// `max(0, max_t psi(eta(t)))`.
    pub constraint: T,
    /// `max_t l(t) max(0, -psi(eta(t)) - eps_Gamma)`.
    pub complementarity: T,
    /// `max_t (|eta'| v l) / |v|_inf`.
    pub speed_ratio: T,
}

/// Sampled `(eta, v, l)` on a uniform grid. `v[i]` is the input on
/// `[t_i, t_{i+1})` (repeated at the final sample).
#[derive(Debug, Clone, PartialEq)]
pub struct SkorokhodTriple<T> {
    pub t_grid: Vec<T>,
    pub eta: Vec<Point<T>>,
    pub v: Vec<Point<T>>,
    pub l: Vec<T>,
    /// Running integral of `l gamma(eta)` when the producer tracked it at a
    /// finer resolution than the sample grid.
    pub impulse: Option<Vec<Point<T>>>,
    pub residuals: Residuals<T>,
}

impl<T: Real> SkorokhodTriple<T> {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    /// Fills in the residual block from the stored samples.
    pub fn recompute_residuals(&mut self, domain: &ImplicitDomain<T>, field: &ObliqueField<T>) {
        self.residuals = compute_residuals(domain, field, self);
    }
}

fn running_impulse<T: Real>(field: &ObliqueField<T>, tr: &SkorokhodTriple<T>) -> Vec<Point<T>> {
    if let Some(imp) = &tr.impulse {
        return imp.clone();
    }
    // trapezoid rule on l gamma(eta)
    let mut out = Vec::with_capacity(tr.len());
    let mut acc = point::zero();
    out.push(acc);
    for i in 1..tr.len() {
        let h = tr.t_grid[i] - tr.t_grid[i - 1];
        let a = point::scale(field.gamma(tr.eta[i - 1]), tr.l[i - 1]);
        let b = point::scale(field.gamma(tr.eta[i]), tr.l[i]);
        acc = point::axpy(acc, h * T::half(), point::add(a, b));
        out.push(acc);
    }
    out
}

fn compute_residuals<T: Real>(
    domain: &ImplicitDomain<T>,
    field: &ObliqueField<T>,
    tr: &SkorokhodTriple<T>,
) -> Residuals<T> {
    let imp = running_impulse(field, tr);
    let mut ode = T::zero();
    let mut vint = point::zero();
    let mut constraint = T::zero();
    let mut comp = T::zero();
    let mut speed = T::zero();
    let vmax = tr.v.iter().map(|&v| point::norm(v)).fold(T::zero(), T::max);
    for i in 0..tr.len() {
        if i > 0 {
            let h = tr.t_grid[i] - tr.t_grid[i - 1];
            vint = point::axpy(vint, h, tr.v[i - 1]);
            let pred = point::sub(point::add(tr.eta[0], vint), imp[i]);
            ode = ode.max(point::dist(pred, tr.eta[i]));
            if h > T::zero() {
                speed = speed.max(point::dist(tr.eta[i], tr.eta[i - 1]) / h);
            }
        }
        let psi = domain.psi(tr.eta[i]);
        constraint = constraint.max(psi);
        comp = comp.max(tr.l[i] * (-psi - domain.boundary_tol()).max(T::zero()));
        speed = speed.max(tr.l[i]);
    }
    let speed_ratio = if vmax > T::zero() { speed / vmax } else { T::zero() };
    Residuals { ode, constraint: constraint.max(T::zero()), complementarity: comp, speed_ratio }
}

/// `l = q(xi) / eps` and `eta = project(xi)` on the sample grid.
pub fn extract_triple<T: Real>(
    domain: &ImplicitDomain<T>,
    field: &ObliqueField<T>,
    scheme: &PenaltyScheme<T>,
    raw: &RawPath<T>,
    v: &InputSignal<T>,
) -> SkorokhodTriple<T> {
    let eta: Vec<Point<T>> = raw.xi.iter().map(|&x| domain.project_to_closure(x).unwrap_or(x)).collect();
    let l: Vec<T> = raw.xi.iter().map(|&x| scheme.q(domain, x) / scheme.epsilon).collect();
    let mut vs = v.values.clone();
    vs.push(*v.values.last().expect("nonempty input"));
    let mut tr = SkorokhodTriple {
        t_grid: raw.t.clone(),
        eta,
        v: vs,
        l,
        impulse: Some(raw.impulse.clone()),
        residuals: Residuals {
            ode: T::zero(),
            constraint: T::zero(),
            complementarity: T::zero(),
            speed_ratio: T::zero(),
        },
    };
    tr.recompute_residuals(domain, field);
    tr
}

/// Tolerances for [`validate_triple`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleTolerances<T> {
    pub geo: T,
    pub comp: T,
    pub ode: T,
    /// When set, `(|eta'| v l) <= factor (1 + |gamma| / delta0) |v|_inf`.
    pub speed_factor: Option<T>,
}

impl<T: Real> TripleTolerances<T> {
    /// Defaults tied to the finest penalty `eps` and the input size.
    pub fn for_epsilon(eps: T, vmax: T) -> Self {
        Self {
            geo: T::lit(10.0) * eps,
            comp: T::lit(0.05) * vmax,
            ode: T::lit(10.0) * eps * (T::one() + vmax),
            speed_factor: Some(T::lit(1.1)),
        }
    }
}

/// One clause of a validation report.
#[derive(Debug, Clone, PartialEq)]
pub struct Clause<T> {
    pub name: &'static str,
    pub value: T,
    pub limit: T,
    pub passed: bool,
    pub witness: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleReport<T> {
    pub clauses: Vec<Clause<T>>,
}

impl<T: Real> TripleReport<T> {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&Clause<T>> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

/// Re-checks every defining condition of a sampled triple.
pub fn validate_triple<T: Real>(
    domain: &ImplicitDomain<T>,
    field: &ObliqueField<T>,
    triple: &SkorokhodTriple<T>,
    tol: &TripleTolerances<T>,
) -> TripleReport<T> {
    let res = compute_residuals(domain, field, triple);
    let argmax = |f: &dyn Fn(usize) -> T| -> (T, Option<usize>) {
        let mut best = (T::neg_infinity(), None);
        for i in 0..triple.len() {
            let v = f(i);
            if v > best.0 {
                best = (v, Some(i));
            }
        }
        best
    };
    let mut clauses = Vec::new();
    let (m, w) = argmax(&|i| domain.psi(triple.eta[i]));
    clauses.push(Clause { name: "membership", value: m, limit: tol.geo, passed: m <= tol.geo, witness: w });
    let (m, w) = argmax(&|i| -triple.l[i]);
    let lim = T::lit(1e-12);
    clauses.push(Clause { name: "nonnegative_l", value: m, limit: lim, passed: m <= lim, witness: w });
    let (m, w) = argmax(&|i| triple.l[i] * (-domain.psi(triple.eta[i]) - domain.boundary_tol()).max(T::zero()));
    clauses.push(Clause { name: "complementarity", value: m, limit: tol.comp, passed: m <= tol.comp, witness: w });
    clauses.push(Clause {
        name: "ode_residual",
        value: res.ode,
        limit: tol.ode,
        passed: res.ode <= tol.ode,
        witness: None,
    });
    if let Some(f) = tol.speed_factor {
        let bound = f * (T::one() + field.gamma_sup / field.delta0);
        clauses.push(Clause {
            name: "speed_bound",
            value: res.speed_ratio,
            limit: bound,
            passed: res.speed_ratio <= bound,
            witness: None,
        });
    }
    TripleReport { clauses }
}

/// Options for [`solve_reflected`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectedOptions<T> {
    /// Integrator step; defaults to `T / 4096`.
    pub h_ode: Option<T>,
    /// First penalty; defaults to `10 h_ode`.
    pub eps0: Option<T>,
    pub min_halvings: usize,
    pub max_halvings: usize,
    pub method: Integrator,
    /// Truncation level for large inputs.
    pub clip: Option<T>,
}

impl<T: Real> Default for ReflectedOptions<T> {
    fn default() -> Self {
        Self { h_ode: None, eps0: None, min_halvings: 3, max_halvings: 14, method: Integrator::Heun, clip: None }
    }
}

/// Converged triple together with the refinement history.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedSolution<T> {
    pub triple: SkorokhodTriple<T>,
    pub epsilons: Vec<T>,
    /// `sup_t |eta_eps - eta_{eps/2}|` for successive halvings.
    pub sup_diffs: Vec<T>,
    pub excursion_k: T,
    pub tolerances: TripleTolerances<T>,
}

impl<T: Real> ReflectedSolution<T> {
    /// Successive ratios of the sup-norm differences.
    pub fn contraction_ratios(&self) -> Vec<T> {
        self.sup_diffs.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Solves the reflected problem by halving the penalty until successive
/// projected paths differ by less than `tol` in sup norm.
pub fn solve_reflected<T: Real>(
    domain: &ImplicitDomain<T>,
    field: &ObliqueField<T>,
    x0: Point<T>,
    v: &InputSignal<T>,
    tol: T,
    opts: &ReflectedOptions<T>,
) -> Result<ReflectedSolution<T>, SkorokhodError> {
    if !domain.in_closure(x0) {
        return Err(SkorokhodError::NotInClosure { x: to_f64(x0) });
    }
    let v = match opts.clip {
        Some(k) => v.clipped(k),
        None => v.clone(),
    };
    let horizon = v.horizon();
    let h_ode = opts.h_ode.unwrap_or(horizon / T::lit(4096.0));
    let mut eps = opts.eps0.unwrap_or(T::lit(10.0) * h_ode);
    let mut epsilons = Vec::new();
    let mut diffs: Vec<T> = Vec::new();
    let mut prev: Option<SkorokhodTriple<T>> = None;
    let floor = T::lit(1e3) * T::epsilon() * domain.diameter();
    for k in 0..=opts.max_halvings {
        let scheme = PenaltyScheme::new(domain, eps, h_ode.min(eps / T::lit(4.0)), opts.method)?;
        let raw = solve_penalized(domain, field, &scheme, x0, &v)?;
        let tr = extract_triple(domain, field, &scheme, &raw, &v);
        epsilons.push(eps);
        let excursion_k = raw.excursion_k;
        if let Some(p) = &prev {
            let d = p.eta.iter().zip(&tr.eta).map(|(&a, &b)| point::dist(a, b)).fold(T::zero(), T::max);
            diffs.push(d);
            let converged = d < tol && (k >= opts.min_halvings || d <= floor);
            if converged {
                let tolerances = TripleTolerances::for_epsilon(eps, v.sup_norm());
                return Ok(ReflectedSolution { triple: tr, epsilons, sup_diffs: diffs, excursion_k, tolerances });
            }
            let n = diffs.len();
            if n >= 4 && d > floor {
                let stalled = (n - 3..n).all(|i| diffs[i] > T::lit(0.8) * diffs[i - 1]);
                if stalled {
                    return Err(SkorokhodError::NoConvergence { diffs: diffs.iter().map(|d| d.as_f64()).collect() });
                }
            }
        }
        prev = Some(tr);
        eps = eps * T::half();
    }
    Err(SkorokhodError::NoConvergence { diffs: diffs.iter().map(|d| d.as_f64()).collect() })
}

/// One reflected step under constant velocity `v` over `dt`: the free
/// endpoint `x + dt v` is pushed back along `-gamma` onto the boundary when
/// it leaves the closure. Returns the endpoint and the accumulated push
/// `int l` over the step.
pub fn reflect_step<T: Real>(
    domain: &ImplicitDomain<T>,
    field: &ObliqueField<T>,
    x: Point<T>,
    v: Point<T>,
    dt: T,
) -> Result<(Point<T>, T), SkorokhodError> {
    let z = point::axpy(x, dt, v);
    if domain.psi(z) <= T::zero() {
        return Ok((z, T::zero()));
    }
    oblique_return(domain, field, z)
}

/// Moves an exterior point `z` back to the boundary along the oblique
/// direction, `y = z - lambda gamma(y)`, returning `(y, lambda)`.
pub fn oblique_return<T: Real>(
    domain: &ImplicitDomain<T>,
    field: &ObliqueField<T>,
    z: Point<T>,
) -> Result<(Point<T>, T), SkorokhodError> {
    let mut y = domain.project_to_closure(z)?;
    let mut lambda = T::zero();
    for _ in 0..12 {
        let g = field.gamma(y);
        if point::norm(g) <= T::zero() {
            return Err(SkorokhodError::Geometry(GeometryError::DegenerateGradient {
                x: to_f64(y),
                norm: 0.0,
            }));
        }
        // bracket the root of psi(z - s g) in s
        let mut hi = point::dist(z, y) / point::norm(g) * T::two() + T::epsilon();
        let mut tries = 0;
        while domain.psi(point::axpy(z, -hi, g)) > T::zero() {
            hi = hi * T::two();
            tries += 1;
            if tries > 60 {
                return Err(SkorokhodError::Geometry(GeometryError::ProjectionDiverged { x: to_f64(z) }));
            }
        }
        let mut lo = T::zero();
        for _ in 0..80 {
            let mid = (lo + hi) * T::half();
            if domain.psi(point::axpy(z, -mid, g)) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= T::epsilon() * (T::one() + hi) {
                break;
            }
        }
        let y_new = point::axpy(z, -hi, g);
        let moved = point::dist(y_new, y);
        y = y_new;
        lambda = hi;
        if moved <= T::lit(1e-13) * domain.diameter() {
            break;
        }
    }
    Ok((y, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk() -> ImplicitDomain<f64> {
        ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn zero_input_stays_put() {
        let d = disk();
        let f = ObliqueField::normal(&d).unwrap();
        let v = InputSignal::constant([0.0, 0.0], 1.0, 64);
        let s = PenaltyScheme::new(&d, 0.01, 0.0025, Integrator::Euler).unwrap();
        let raw = solve_penalized(&d, &f, &s, [0.3, 0.2], &v).unwrap();
        assert!(raw.xi.iter().all(|&x| x == [0.3, 0.2]));
        let tr = extract_triple(&d, &f, &s, &raw, &v);
        assert!(tr.l.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn one_dimensional_push_settles_at_fixed_point() {
        // xi' = 1 - q(xi)/eps with q = (xi^2 - 1)/rho0 near xi = 1
        let d = ImplicitDomain::<f64>::interval(-1.0, 1.0).unwrap();
        let f = ObliqueField::normal(&d).unwrap();
        let eps = 0.01;
        let v = InputSignal::constant([1.0, 0.0], 1.0, 400);
        let s = PenaltyScheme::new(&d, eps, eps / 8.0, Integrator::Heun).unwrap();
        let raw = solve_penalized(&d, &f, &s, [1.0, 0.0], &v).unwrap();
        // fixed point: (xi^2 - 1) / rho0 = eps
        let xstar = (1.0 + eps * d.rho0()).sqrt();
        let last = raw.xi.last().unwrap()[0];
        assert!((last - xstar).abs() < 1e-6, "{last} vs {xstar}");
        assert!(raw.xi.iter().all(|x| x[0] <= xstar + 1e-9));
        let tr = extract_triple(&d, &f, &s, &raw, &v);
        for (t, l) in tr.t_grid.iter().zip(&tr.l) {
            if *t >= 5.0 * eps {
                assert!((l - 1.0).abs() < 0.05, "l({t}) = {l}");
            }
        }
    }

    #[test]
    fn excursion_scales_with_epsilon() {
        let d = disk();
        let f = ObliqueField::normal(&d).unwrap();
        let v = InputSignal::constant([1.0, 0.0], 1.0, 256);
        let run = |eps: f64| {
            let s = PenaltyScheme::new(&d, eps, eps / 8.0, Integrator::Heun).unwrap();
            let raw = solve_penalized(&d, &f, &s, [1.0, 0.0], &v).unwrap();
            raw.xi.iter().map(|&x| d.psi(x).max(0.0)).fold(0.0, f64::max)
        };
        let (a, b) = (run(0.02), run(0.01));
        let ratio = b / a;
        assert!((ratio - 0.5).abs() < 0.05, "excursion ratio {ratio}");
    }

    #[test]
    fn constructed_violations_are_flagged() {
        let d = disk();
        let f = ObliqueField::normal(&d).unwrap();
        let mk = |eta: Vec<[f64; 2]>, l: Vec<f64>| {
            let n = eta.len();
            let mut tr = SkorokhodTriple {
                t_grid: (0..n).map(|i| i as f64 * 0.1).collect(),
                eta,
                v: vec![[0.0, 0.0]; n],
                l,
                impulse: None,
                residuals: Residuals { ode: 0.0, constraint: 0.0, complementarity: 0.0, speed_ratio: 0.0 },
            };
            tr.recompute_residuals(&d, &f);
            tr
        };
        let tol = TripleTolerances { geo: 1e-6, comp: 1e-6, ode: 1.0, speed_factor: None };
        let interior_push = mk(vec![[0.0, 0.0]; 3], vec![0.0, 1.0, 0.0]);
        let rep = validate_triple(&d, &f, &interior_push, &tol);
        assert!(!rep.clause("complementarity").unwrap().passed);
        assert_eq!(rep.clause("complementarity").unwrap().witness, Some(1));
        let outside = mk(vec![[0.0, 0.0], [1.2, 0.0], [0.0, 0.0]], vec![0.0; 3]);
        let rep = validate_triple(&d, &f, &outside, &tol);
        assert!(!rep.clause("membership").unwrap().passed);
        assert!(rep.clause("complementarity").unwrap().passed);
    }

    #[test]
    fn reflect_step_lands_on_boundary() {
        let d = disk();
        let f = ObliqueField::rotated_normal(&d, 0.4, std::sync::Arc::new(|_| 0.0)).unwrap();
        let (y, lam) = reflect_step(&d, &f, [0.95, 0.0], [1.0, 0.3], 0.2).unwrap();
        assert!(d.psi(y) <= 0.0 && d.psi(y).abs() < 1e-9);
        assert!(lam > 0.0);
        // y + lam gamma(y) recovers the free endpoint
        let z = [0.95 + 0.2, 0.06];
        let back = point::axpy(y, lam, f.gamma(y));
        assert!(point::dist(back, z) < 1e-9);
        let (y, lam) = reflect_step(&d, &f, [0.0, 0.0], [1.0, 0.0], 0.2).unwrap();
        assert_eq!((y, lam), ([0.2, 0.0], 0.0));
    }

    #[test]
    fn heun_and_euler_agree_to_first_order() {
        let d = disk();
        let f = ObliqueField::normal(&d).unwrap();
        let v = InputSignal::from_fn(1.0, 200, |t: f64| [t.cos(), 1.0]);
        let a = PenaltyScheme::new(&d, 0.02, 0.001, Integrator::Euler).unwrap();
        let b = PenaltyScheme { method: Integrator::Heun, ..a };
        let ra = solve_penalized(&d, &f, &a, [0.5, 0.0], &v).unwrap();
        let rb = solve_penalized(&d, &f, &b, [0.5, 0.0], &v).unwrap();
        let diff = ra.xi.iter().zip(&rb.xi).map(|(&p, &q)| point::dist(p, q)).fold(0.0, f64::max);
        assert!(diff < 5e-3, "{diff}");
    }
}
