//! Semi-Lagrangian dynamic programming for the value function with
//! boundary running cost `g l`.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use super::grid::{Grid, GridError, GridField, Stencil};
use crate::geometry::ObliqueField;
use crate::hamiltonian::HamiltonianModel;
use crate::point::{self, Point};
use crate::scalar::Real;
use crate::skorokhod::{oblique_return, SkorokhodError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("every control has infinite Lagrangian at node {node}")]
    EmptyControlSet { node: usize },
    #[error("time step {dt} moves the foot by more than 2h (control bound {bound}, h {h})")]
    CflViolated { dt: f64, bound: f64, h: f64 },
    #[error("initial data is not finite at node {node}")]
    NonFiniteData { node: usize },
    #[error("no stored slice at step {step}")]
    MissingSlice { step: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Skorokhod(#[from] SkorokhodError),
}

/// Finite velocity set: zero plus `n_speed` geometric speeds in
/// `(0, bound]` along `n_angle` directions (two directions in 1-D),
/// ordered by increasing speed.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet<T> {
    pub controls: Vec<Point<T>>,
    pub bound: T,
    pub speeds: Vec<T>,
    pub directions: Vec<Point<T>>,
}

impl<T: Real> ControlSet<T> {
    pub fn polar(dim: usize, bound: T, n_angle: usize, n_speed: usize) -> Self {
        let directions: Vec<Point<T>> = if dim == 1 {
            vec![[T::one(), T::zero()], [-T::one(), T::zero()]]
        } else {
            let n = n_angle.max(2) & !1;
            (0..n)
                .map(|k| {
                    let a = T::two() * T::PI() * T::from_usize_lossy(k) / T::from_usize_lossy(n);
                    [a.cos(), a.sin()]
                })
                .collect()
        };
        let ns = n_speed.max(1);
        let ratio = if ns > 1 { T::lit(256.0).powf(T::one() / T::from_usize_lossy(ns - 1)) } else { T::one() };
        let mut speeds = Vec::with_capacity(ns);
        let mut s = bound;
        for _ in 0..ns {
            speeds.push(s);
            s = s / ratio;
        }
        speeds.reverse();
        let mut controls = vec![point::zero()];
        for &s in &speeds {
            for &e in &directions {
                controls.push(point::scale(e, s));
            }
        }
        Self { controls, bound, speeds, directions }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// `(speed index, direction index)` of control `k > 0`.
    pub fn decompose(&self, k: usize) -> Option<(usize, usize)> {
        if k == 0 {
            None
        } else {
            let nd = self.directions.len();
            Some(((k - 1) / nd, (k - 1) % nd))
        }
    }
}

/// Solver settings. `None` fields are derived from the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig<T> {
    pub n_angle: usize,
    pub n_speed: usize,
    /// Golden-section refinement of the optimal speed at each node. The
    /// candidate set then depends on the data, so the step is no longer an
    /// exact minimum over a fixed set and monotonicity holds only up to the
    /// refinement gain.
    pub refine_speed: bool,
    pub dt: Option<T>,
    pub control_bound: Option<T>,
    /// Gradient bound used for the control bound (defaults to the larger of
    /// the data's Lipschitz ratio and the coercivity radius).
    pub gradient_bound: Option<T>,
    /// Keep the optimal control of every node at every step.
    pub retain_policy: bool,
    /// Keep every `store_stride`-th slice (the last one is always kept).
    pub store_stride: usize,
}

impl<T: Real> Default for SchemeConfig<T> {
    fn default() -> Self {
        Self {
            n_angle: 32,
            n_speed: 16,
            refine_speed: false,
            dt: None,
            control_bound: None,
            gradient_bound: None,
            retain_policy: false,
            store_stride: 1,
        }
    }
}

/// One step of the scheme, with per-node tables precomputed.
pub struct SemiLagrangian<T: Real> {
    grid: Arc<Grid<T>>,
    model: HamiltonianModel<T>,
    field: ObliqueField<T>,
    controls: ControlSet<T>,
    dt: T,
    refine: bool,
    cost: Vec<T>,
    foot: Vec<Stencil<T>>,
    bound_cache: std::sync::Mutex<HashMap<i32, T>>,
}

impl<T: Real> std::fmt::Debug for SemiLagrangian<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemiLagrangian")
            .field("nodes", &self.grid.len())
            .field("controls", &self.controls.len())
            .field("dt", &self.dt)
            .field("control_bound", &self.controls.bound)
            .finish()
    }
}

/// Where a constant control takes a node in one step: the foot point and
/// the accumulated push `int l`.
fn reflected_foot<T: Real>(grid: &Grid<T>, field: &ObliqueField<T>, x: Point<T>, xi: Point<T>, dt: T) -> (Point<T>, T) {
    let d = grid.domain();
    let z = point::axpy(x, dt, xi);
    if d.psi(z) <= T::zero() {
        return (z, T::zero());
    }
    match oblique_return(d, field, z) {
        Ok(r) => r,
        Err(_) => (d.project_to_closure(z).unwrap_or(x), T::zero()),
    }
}

fn golden_min<T: Real>(lo: T, hi: T, iters: usize, f: impl Fn(T) -> T) -> (T, T) {
    let phi = T::lit(0.618_033_988_749_894_8);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

impl<T: Real> SemiLagrangian<T> {
    /// Builds the step operator with the given controls and time step.
    pub fn new(
        model: &HamiltonianModel<T>,
        field: &ObliqueField<T>,
        grid: Arc<Grid<T>>,
        controls: ControlSet<T>,
        dt: T,
        refine: bool,
    ) -> Result<Self, SchemeError> {
        if !(dt > T::zero()) {
            return Err(SchemeError::InvalidParameter("dt must be positive".into()));
        }
        if dt * controls.bound > T::two() * grid.h() * (T::one() + T::lit(1e-9)) {
            return Err(SchemeError::CflViolated {
                dt: dt.as_f64(),
                bound: controls.bound.as_f64(),
                h: grid.h().as_f64(),
            });
        }
        let nc = controls.len();
        let rows: Vec<(Vec<T>, Vec<Stencil<T>>)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.node(i);
                let mut cost = Vec::with_capacity(nc);
                let mut foot = Vec::with_capacity(nc);
                for (k, &xi) in controls.controls.iter().enumerate() {
                    let l = model.l(x, point::neg(xi));
                    let (y, lam) = if k == 0 { (x, T::zero()) } else { reflected_foot(&grid, field, x, xi, dt) };
                    match l.finite() {
                        Some(l) => cost.push(dt * l + field.g(y) * lam),
                        None => cost.push(T::infinity()),
                    }
                    foot.push(if k == 0 {
                        Stencil { idx: [i, i, i], w: [T::one(), T::zero(), T::zero()] }
                    } else {
                        grid.locate(y)
                    });
                }
                (cost, foot)
            })
            .collect();
        let mut cost = Vec::with_capacity(grid.len() * nc);
        let mut foot = Vec::with_capacity(grid.len() * nc);
        for (i, (c, f)) in rows.into_iter().enumerate() {
            if c.iter().all(|v| !v.is_finite()) {
                return Err(SchemeError::EmptyControlSet { node: i });
            }
            cost.extend(c);
            foot.extend(f);
        }
        Ok(Self {
            grid,
            model: model.clone(),
            field: field.clone(),
            controls,
            dt,
            refine,
            cost,
            foot,
            bound_cache: std::sync::Mutex::new(HashMap::new()),
        })
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn model(&self) -> &HamiltonianModel<T> {
        &self.model
    }

    pub fn field(&self) -> &ObliqueField<T> {
        &self.field
    }

    pub fn controls(&self) -> &ControlSet<T> {
        &self.controls
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Cost of one step from `x` with constant control `xi` against the
    /// nodal values `w`: `dt L(x, -xi) + g l_step + w(foot)`, together with
    /// the foot and the push. `None` when the Lagrangian is infinite.
    pub fn evaluate(&self, w: &[T], x: Point<T>, xi: Point<T>, dt: T) -> Option<(T, Point<T>, T)> {
        let l = self.model.l(x, point::neg(xi)).finite()?;
        let (y, lam) = reflected_foot(&self.grid, &self.field, x, xi, dt);
        Some((dt * l + self.field.g(y) * lam + self.grid.interpolate(w, y), y, lam))
    }

    /// Minimizes [`Self::evaluate`] over the control set at an arbitrary
    /// point, with the same tie-breaking and speed refinement as a step.
    pub fn best_control(&self, w: &[T], x: Point<T>, dt: T) -> Option<(T, Point<T>)> {
        let mut best: Option<(T, usize)> = None;
        for (k, &xi) in self.controls.controls.iter().enumerate() {
            if let Some((v, _, _)) = self.evaluate(w, x, xi, dt) {
                if best.map_or(true, |(b, _)| v < b - tie_tol(b)) {
                    best = Some((v, k));
                }
            }
        }
        let (v, k) = best?;
        Some(self.refine_at(w, x, dt, k, v))
    }

    fn refine_at(&self, w: &[T], x: Point<T>, dt: T, k: usize, v: T) -> (T, Point<T>) {
        let xi = self.controls.controls[k];
        if !self.refine {
            return (v, xi);
        }
        let Some((s, d)) = self.controls.decompose(k) else { return (v, xi) };
        let e = self.controls.directions[d];
        let lo = if s == 0 { T::zero() } else { self.controls.speeds[s - 1] };
        let hi = if s + 1 < self.controls.speeds.len() { self.controls.speeds[s + 1] } else { self.controls.speeds[s] };
        let f = |sp: T| self.evaluate(w, x, point::scale(e, sp), dt).map_or(T::infinity(), |r| r.0);
        let (sp, val) = golden_min(lo, hi, 14, f);
        if val < v - tie_tol(v) {
            (val, point::scale(e, sp))
        } else {
            (v, xi)
        }
    }

    /// One step `w -> w_next`; also returns the optimal control per node.
    pub fn apply(&self, w: &[T]) -> (Vec<T>, Vec<Point<T>>) {
        let nc = self.controls.len();
        let out: Vec<(T, Point<T>)> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let base = i * nc;
                let mut best = T::infinity();
                let mut arg = 0;
                for k in 0..nc {
                    let c = self.cost[base + k];
                    if !c.is_finite() {
                        continue;
                    }
                    let v = c + self.foot[base + k].apply(w);
                    if v < best - tie_tol(best) {
                        best = v;
                        arg = k;
                    }
                }
                self.refine_at(w, self.grid.node(i), self.dt, arg, best)
            })
            .collect();
        out.into_iter().unzip()
    }

    /// control bound for gradient size `r`, cached on a quarter-octave scale.
    pub fn control_bound_for(&self, r: T) -> T {
        let r = r.max(T::lit(1e-6));
        let key = (r.log2() * T::lit(4.0)).ceil().to_i32().unwrap_or(0);
        if let Some(&b) = self.bound_cache.lock().expect("cache").get(&key) {
            return b;
        }
        let rq = T::two().powf(T::lit(key as f64 / 4.0));
        let b = self.model.control_bound(self.grid.domain(), rq);
        self.bound_cache.lock().expect("cache").insert(key, b);
        b
    }
}

#[inline]
fn tie_tol<T: Real>(b: T) -> T {
    if b.is_finite() {
        T::lit(1e-13) * (T::one() + b.abs())
    } else {
        T::zero()
    }
}

/// Barrier and consistency diagnostics gathered during a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyDiagnostics<T> {
    pub dt: T,
    pub steps: usize,
    pub control_bound: T,
    /// `max_x L(x, 0)`: `w <= u0 + C t`.
    pub upper_rate: T,
    /// `max H` over momenta up to the data's effective slope: `w >= u0 - C t`.
    pub lower_rate: T,
    pub upper_defect: T,
    pub lower_defect: T,
    /// Nodes and steps where the optimal control exceeded the control bound
    /// for the current discrete gradient.
    pub control_bound_violations: usize,
    pub max_control: T,
    pub final_lipschitz: T,
}

/// Values `w(x_i, t_k)` on a grid.
#[derive(Debug, Clone)]
pub struct TimeField<T: Real> {
    pub grid: Arc<Grid<T>>,
    pub dt: T,
    pub level: T,
    pub steps: usize,
    /// Step indices of the stored slices.
    pub slice_steps: Vec<usize>,
    pub slices: Vec<Vec<T>>,
    /// Optimal control per node for every step `k -> k + 1`.
    pub policy: Option<Vec<Vec<Point<T>>>>,
    /// Node-averaged value at every step.
    pub means: Vec<T>,
    pub diagnostics: CauchyDiagnostics<T>,
    operator: Arc<SemiLagrangian<T>>,
}

impl<T: Real> TimeField<T> {
    pub fn time(&self, step: usize) -> T {
        self.dt * T::from_usize_lossy(step)
    }

    pub fn horizon(&self) -> T {
        self.time(self.steps)
    }

    pub fn operator(&self) -> &Arc<SemiLagrangian<T>> {
        &self.operator
    }

    pub fn slice(&self, step: usize) -> Option<&[T]> {
        self.slice_steps.binary_search(&step).ok().map(|k| self.slices[k].as_slice())
    }

    pub fn initial(&self) -> &[T] {
        &self.slices[0]
    }

    pub fn last(&self) -> &[T] {
        self.slices.last().expect("at least the initial slice")
    }

    pub fn final_field(&self) -> GridField<T> {
        GridField { grid: self.grid.clone(), values: self.last().to_vec() }
    }

    /// Step index closest to time `t`.
    pub fn step_of(&self, t: T) -> usize {
        (t / self.dt).round().to_usize().unwrap_or(0).min(self.steps)
    }

    /// Interpolated value at `x` and the stored slice nearest to `t`.
    pub fn at(&self, x: Point<T>, t: T) -> T {
        let k = self.step_of(t);
        let pos = match self.slice_steps.binary_search(&k) {
            Ok(p) => p,
            Err(p) => p.min(self.slices.len() - 1),
        };
        self.grid.interpolate(&self.slices[pos], x)
    }
}

/// Control bound and time step derived from the data, following the
/// a priori control estimate.
pub fn default_controls<T: Real>(
    model: &HamiltonianModel<T>,
    grid: &Grid<T>,
    u0: &[T],
    config: &SchemeConfig<T>,
) -> (ControlSet<T>, T) {
    let domain = grid.domain();
    let bound = config.control_bound.unwrap_or_else(|| {
        let r = config.gradient_bound.unwrap_or_else(|| {
            let lip = grid.lipschitz_ratio(u0);
            let level = domain
                .closure_samples(16)
                .iter()
                .map(|&x| model.h(x, point::zero()))
                .fold(T::neg_infinity(), T::max);
            lip.max(model.coercivity_radius(domain, level))
        });
        // the estimate holds for any radius above the gradient size
        let r = r.max(T::lit(1e-3));
        (0..24)
            .map(|k| model.control_bound(domain, r * T::two().powf(T::lit(k as f64 / 4.0))))
            .fold(T::infinity(), T::min)
    });
    let dt = config.dt.unwrap_or(grid.h() / (T::two() * bound + T::one()));
    (ControlSet::polar(grid.dim(), bound, config.n_angle, config.n_speed), dt)
}

/// Runs the scheme from `u0` to `horizon`, calling `observe(step, values)`
/// after every step.
pub fn solve_cauchy_with<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u0: &GridField<T>,
    horizon: T,
    config: &SchemeConfig<T>,
    mut observe: impl FnMut(usize, &[T]),
) -> Result<TimeField<T>, SchemeError> {
    if !(horizon > T::zero()) {
        return Err(SchemeError::InvalidParameter("horizon must be positive".into()));
    }
    if let Some(i) = u0.values.iter().position(|v| !v.is_finite()) {
        return Err(SchemeError::NonFiniteData { node: i });
    }
    let grid = u0.grid.clone();
    let (controls, dt0) = default_controls(model, &grid, &u0.values, config);
    let steps = (horizon / dt0).ceil().to_usize().unwrap_or(1).max(1);
    let dt = horizon / T::from_usize_lossy(steps);
    let op = Arc::new(SemiLagrangian::new(model, field, grid.clone(), controls, dt, config.refine_speed)?);
    run(op, u0, steps, config, &mut observe)
}

fn run<T: Real>(
    op: Arc<SemiLagrangian<T>>,
    u0: &GridField<T>,
    steps: usize,
    config: &SchemeConfig<T>,
    observe: &mut dyn FnMut(usize, &[T]),
) -> Result<TimeField<T>, SchemeError> {
    let grid = op.grid.clone();
    let domain = grid.domain();
    let model = &op.model;
    let field = &op.field;
    let dt = op.dt;
    let n = T::from_usize_lossy(grid.len());
    let upper_rate = grid
        .nodes()
        .iter()
        .filter_map(|&x| model.l(x, point::zero()).finite())
        .fold(T::neg_infinity(), T::max);
    let lip0 = grid.lipschitz_ratio(&u0.values);
    let r_low = lip0 + if field.delta0 > T::zero() { field.g_sup / field.delta0 } else { T::zero() };
    let ball = model.ball_samples(r_low.max(T::lit(1e-9)), 32, 8);
    let at_nodes = grid
        .nodes()
        .iter()
        .map(|&x| ball.iter().map(|&p| model.h(x, p)).fold(model.h(x, point::zero()), T::max))
        .fold(T::neg_infinity(), T::max);
    let lower_rate = model.extrema(domain, r_low.max(T::lit(1e-9))).1.max(at_nodes);
    let stride = config.store_stride.max(1);
    let mut slices = vec![u0.values.clone()];
    let mut slice_steps = vec![0];
    let mut means = vec![u0.values.iter().copied().sum::<T>() / n];
    let mut policy = if config.retain_policy { Some(Vec::with_capacity(steps)) } else { None };
    let mut w = u0.values.clone();
    let mut upper_defect = T::zero();
    let mut lower_defect = T::zero();
    let mut violations = 0;
    let mut max_control = T::zero();
    for k in 0..steps {
        let r_grid = grid.lipschitz_ratio(&w);
        let (next, ctl) = op.apply(&w);
        let bound = op.control_bound_for(r_grid).max(op.controls.bound);
        for c in &ctl {
            let s = point::norm(*c);
            max_control = max_control.max(s);
            if s > bound * (T::one() + T::lit(1e-9)) {
                violations += 1;
            }
        }
        let t = dt * T::from_usize_lossy(k + 1);
        for i in 0..grid.len() {
            upper_defect = upper_defect.max(next[i] - u0.values[i] - upper_rate * t);
            lower_defect = lower_defect.max(u0.values[i] - lower_rate * t - next[i]);
        }
        w = next;
        means.push(w.iter().copied().sum::<T>() / n);
        if let Some(p) = policy.as_mut() {
            p.push(ctl);
        }
        observe(k + 1, &w);
        if (k + 1) % stride == 0 || k + 1 == steps {
            slices.push(w.clone());
            slice_steps.push(k + 1);
        }
    }
    let diagnostics = CauchyDiagnostics {
        dt,
        steps,
        control_bound: op.controls.bound,
        upper_rate,
        lower_rate,
        upper_defect: upper_defect.max(T::zero()),
        lower_defect: lower_defect.max(T::zero()),
        control_bound_violations: violations,
        max_control,
        final_lipschitz: grid.lipschitz_ratio(&w),
    };
    Ok(TimeField {
        level: model.shift(),
        grid,
        dt,
        steps,
        slice_steps,
        slices,
        policy,
        means,
        diagnostics,
        operator: op,
    })
}

/// Solves the Cauchy problem from `u0` up to `horizon`.
pub fn solve_cauchy<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u0: &GridField<T>,
    horizon: T,
    config: &SchemeConfig<T>,
) -> Result<TimeField<T>, SchemeError> {
    solve_cauchy_with(model, field, u0, horizon, config, |_, _| {})
}

/// Continues a solve from new data with an existing operator.
pub fn resolve<T: Real>(
    op: &Arc<SemiLagrangian<T>>,
    u0: &GridField<T>,
    steps: usize,
    config: &SchemeConfig<T>,
) -> Result<TimeField<T>, SchemeError> {
    run(op.clone(), u0, steps.max(1), config, &mut |_, _| {})
}

/// A single step with the default control set for `w_now`.
pub fn step<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    w_now: &GridField<T>,
    dt: T,
    config: &SchemeConfig<T>,
) -> Result<GridField<T>, SchemeError> {
    let (controls, _) = default_controls(model, &w_now.grid, &w_now.values, config);
    let op = SemiLagrangian::new(model, field, w_now.grid.clone(), controls, dt, config.refine_speed)?;
    let (values, _) = op.apply(&w_now.values);
    Ok(GridField { grid: w_now.grid.clone(), values })
}

/// Result of [`check_dpp`].
#[derive(Debug, Clone, PartialEq)]
pub struct DppReport<T> {
    /// `max |w(s + t) - S(t) w(s)|` with the stored operator.
    pub defect: T,
    /// `max (w(s + t) - one-shot(t) w(s))`: value against a single
    /// constant-control move of duration `t` (nonpositive up to scheme
    /// error, since constant controls are admissible paths).
    pub one_shot_gap: T,
    pub witness: usize,
    pub passed: bool,
}

/// Compares `w(., s + t)` with a fresh solve started from `w(., s)`.
pub fn check_dpp<T: Real>(tf: &TimeField<T>, s: T, t: T, tol: T) -> Result<DppReport<T>, SchemeError> {
    let ks = tf.step_of(s);
    let kt = tf.step_of(t);
    if ks + kt > tf.steps {
        return Err(SchemeError::InvalidParameter("s + t exceeds the horizon".into()));
    }
    let ws = tf.slice(ks).ok_or(SchemeError::MissingSlice { step: ks })?;
    let wst = tf.slice(ks + kt).ok_or(SchemeError::MissingSlice { step: ks + kt })?;
    let grid = &tf.grid;
    let (defect, witness) = if kt == 0 {
        let d = ws.iter().zip(wst).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
        (d, 0)
    } else {
        let cfg = SchemeConfig { store_stride: kt, ..SchemeConfig::default() };
        let re = resolve(&tf.operator, &GridField { grid: grid.clone(), values: ws.to_vec() }, kt, &cfg)?;
        let last = re.last();
        let mut worst = (T::zero(), 0);
        for i in 0..grid.len() {
            let d = (last[i] - wst[i]).abs();
            if d > worst.0 {
                worst = (d, i);
            }
        }
        worst
    };
    let mut one_shot_gap = T::neg_infinity();
    if kt > 0 {
        let tt = tf.time(kt);
        let op = &tf.operator;
        for i in 0..grid.len() {
            let x = grid.node(i);
            let mut best = T::infinity();
            let reach = op.controls.bound;
            let ctl = ControlSet::polar(grid.dim(), reach, 32, 16);
            for &xi in &ctl.controls {
                if let Some((v, _, _)) = op.evaluate(ws, x, xi, tt) {
                    best = best.min(v);
                }
            }
            one_shot_gap = one_shot_gap.max(wst[i] - best);
        }
    } else {
        one_shot_gap = T::zero();
    }
    Ok(DppReport { defect, one_shot_gap, witness, passed: defect <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImplicitDomain;

    fn setup(h: f64) -> (HamiltonianModel<f64>, ObliqueField<f64>, Arc<Grid<f64>>) {
        let d = ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap();
        let f = ObliqueField::normal(&d).unwrap();
        let g = Arc::new(Grid::new(&d, h).unwrap());
        (HamiltonianModel::kinetic(2).unwrap(), f, g)
    }

    #[test]
    fn control_set_shape() {
        let c = ControlSet::<f64>::polar(2, 2.0, 32, 16);
        assert_eq!(c.len(), 1 + 32 * 16);
        assert_eq!(c.controls[0], [0.0, 0.0]);
        assert!((c.speeds[15] - 2.0).abs() < 1e-12);
        assert!((c.speeds[0] - 2.0 / 256.0).abs() < 1e-12);
        // closed under sign flip
        for &xi in &c.controls {
            assert!(c.controls.iter().any(|&z| point::dist(z, point::neg(xi)) < 1e-12));
        }
        let c1 = ControlSet::<f64>::polar(1, 1.0, 32, 4);
        assert_eq!(c1.len(), 9);
    }

    #[test]
    fn constants_are_preserved() {
        let (m, f, g) = setup(0.2);
        let u = GridField::constant(g, 3.5);
        let next = step(&m, &f, &u, 0.01, &SchemeConfig::default()).unwrap();
        assert!(next.values.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn cfl_is_enforced() {
        let (m, f, g) = setup(0.2);
        let c = ControlSet::polar(2, 10.0, 8, 4);
        assert!(matches!(SemiLagrangian::new(&m, &f, g, c, 1.0, false), Err(SchemeError::CflViolated { .. })));
    }
}
