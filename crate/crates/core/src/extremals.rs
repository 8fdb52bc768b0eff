//! Minimizing trajectories: traced minimizers of the Cauchy value,
//! calibrated extremals of stationary solutions, and loops through the
//! Aubry set.
//!
//! Traced paths follow the stored per-step argmin controls of a
//! [`TimeField`]. At a point off the grid the candidates are the controls
//! stored at the nodes of its cell, and the one with the smallest one-step
//! cost wins (ties go to the smaller speed, then to the lower node index).

use thiserror::Error;

use crate::geometry::ObliqueField;
use crate::hamiltonian::HamiltonianModel;
use crate::lax_oleinik::{default_controls, solve_cauchy, Grid, GridField, SchemeConfig, SchemeError, TimeField};
use crate::point::{self, Point};
use crate::scalar::Real;
use crate::skorokhod::{
    solve_reflected, validate_triple, InputSignal, ReflectedOptions, SkorokhodError, SkorokhodTriple, TripleReport,
};
use crate::weak_kam::{mane_potential_to, reduced_potential, ActionGraph, AubryResult, WeakKamError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtremalError {
    #[error("the time field was solved without retaining the step argmins")]
    MissingPolicy,
    #[error("slice of step {step} is not stored; solve with store_stride = 1")]
    MissingSlice { step: usize },
    #[error("time {t} is beyond the solved horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("start point {x:?} is outside the closed domain")]
    NotInClosure { x: [f64; 2] },
    #[error("no finite control at {x:?} on step {step}")]
    Stuck { x: [f64; 2], step: usize },
    #[error("calibration lost on window {window}: defect {defect} exceeds {limit}")]
    CalibrationLost { window: usize, defect: f64, limit: f64 },
    #[error("node {node} has no loop within tolerance: best loop costs {cost}, tolerance {tol}")]
    NoCheapLoop { node: usize, cost: f64, tol: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Skorokhod(#[from] SkorokhodError),
    #[error(transparent)]
    WeakKam(#[from] WeakKamError),
}

fn pt64<T: Real>(x: Point<T>) -> [f64; 2] {
    [x[0].as_f64(), x[1].as_f64()]
}

/// Discrete path produced by following the stored controls.
#[derive(Debug, Clone, PartialEq)]
struct Trace<T> {
    path: Vec<Point<T>>,
    controls: Vec<Point<T>>,
    pushes: Vec<T>,
    costs: Vec<T>,
}

struct Candidate<T> {
    value: T,
    speed: T,
    node: usize,
    xi: Point<T>,
    foot: Point<T>,
    push: T,
}

/// Follows the policy from `x` at step `n` down to step 0.
fn trace<T: Real>(tf: &TimeField<T>, x: Point<T>, n: usize) -> Result<Trace<T>, ExtremalError> {
    let policy = tf.policy.as_ref().ok_or(ExtremalError::MissingPolicy)?;
    let op = tf.operator();
    let grid = &tf.grid;
    let dt = tf.dt;
    let mut p = x;
    let mut out = Trace {
        path: vec![x],
        controls: Vec::with_capacity(n),
        pushes: Vec::with_capacity(n),
        costs: Vec::with_capacity(n),
    };
    for j in (1..=n).rev() {
        let w = tf.slice(j - 1).ok_or(ExtremalError::MissingSlice { step: j - 1 })?;
        let st = grid.locate(p);
        let mut best: Option<Candidate<T>> = None;
        for (m, &node) in st.idx.iter().enumerate() {
            if m > 0 && st.w[m] <= T::zero() {
                continue;
            }
            let xi = policy[j - 1][node];
            let Some((value, foot, push)) = op.evaluate(w, p, xi, dt) else { continue };
            let speed = point::norm(xi);
            let better = match &best {
                None => true,
                Some(b) => {
                    let tie = T::lit(1e-12) * (T::one() + b.value.abs());
                    value < b.value - tie
                        || (value <= b.value + tie && (speed < b.speed || (speed == b.speed && node < b.node)))
                }
            };
            if better {
                best = Some(Candidate { value, speed, node, xi, foot, push });
            }
        }
        let b = best.ok_or(ExtremalError::Stuck { x: pt64(p), step: j })?;
        out.costs.push(b.value - grid.interpolate(w, b.foot));
        out.controls.push(b.xi);
        out.pushes.push(b.push);
        out.path.push(b.foot);
        p = b.foot;
    }
    Ok(out)
}

/// Continuous Skorokhod realization of a piecewise constant control list.
fn realize<T: Real>(
    grid: &Grid<T>,
    field: &ObliqueField<T>,
    x: Point<T>,
    controls: &[Point<T>],
    dt: T,
) -> Result<(SkorokhodTriple<T>, TripleReport<T>), ExtremalError> {
    let domain = grid.domain();
    let signal = InputSignal::new(dt, controls.to_vec())?;
    let horizon = signal.horizon();
    let opts = ReflectedOptions { h_ode: Some((dt / T::lit(8.0)).min(horizon / T::lit(4096.0))), ..Default::default() };
    let sol = solve_reflected(domain, field, x, &signal, T::lit(1e-3) * grid.h(), &opts)?;
    let report = validate_triple(domain, field, &sol.triple, &sol.tolerances);
    Ok((sol.triple, report))
}

/// Action `int L(eta, -v) + g l` of a sampled triple (left rule).
pub fn triple_action<T: Real>(model: &HamiltonianModel<T>, field: &ObliqueField<T>, tr: &SkorokhodTriple<T>) -> T {
    let mut acc = T::zero();
    for i in 0..tr.len().saturating_sub(1) {
        let h = tr.t_grid[i + 1] - tr.t_grid[i];
        let l = model.l(tr.eta[i], point::neg(tr.v[i])).finite().unwrap_or(T::infinity());
        acc = acc + h * (l + field.g(tr.eta[i]) * tr.l[i]);
    }
    acc
}

/// A traced minimizer of `w(x, t)`.
#[derive(Debug, Clone)]
pub struct Minimizer<T> {
    pub times: Vec<T>,
    /// Positions after each step of the scheme.
    pub path: Vec<Point<T>>,
    pub controls: Vec<Point<T>>,
    /// Push `int l` accumulated on each step.
    pub pushes: Vec<T>,
    /// Sum of the one-step costs along `path`.
    pub action: T,
    /// `u0` at the end point.
    pub terminal: T,
    /// `w(x, t)` from the solve.
    pub value: T,
    /// `|action + terminal - value|`.
    pub defect: T,
    /// `(h + dt) t / dt`.
    pub bound: T,
    pub triple: SkorokhodTriple<T>,
    pub validation: TripleReport<T>,
    /// Action of the continuous triple.
    pub triple_action: T,
    /// Largest distance between `path` and the triple at the step times.
    pub triple_gap: T,
}

/// Traces a minimizer of `w(x, t)` back through the stored step controls.
/// Needs a solve with `retain_policy` and `store_stride = 1`.
pub fn attained_minimizer<T: Real>(tf: &TimeField<T>, x: Point<T>, t: T) -> Result<Minimizer<T>, ExtremalError> {
    if tf.policy.is_none() {
        return Err(ExtremalError::MissingPolicy);
    }
    let grid = &tf.grid;
    if !grid.domain().in_closure(x) {
        return Err(ExtremalError::NotInClosure { x: pt64(x) });
    }
    if t > tf.horizon() * (T::one() + T::lit(1e-9)) || !(t > T::zero()) {
        return Err(ExtremalError::BeyondHorizon { t: t.as_f64(), horizon: tf.horizon().as_f64() });
    }
    let n = tf.step_of(t).max(1);
    let tr = trace(tf, x, n)?;
    let wn = tf.slice(n).ok_or(ExtremalError::MissingSlice { step: n })?;
    let value = grid.interpolate(wn, x);
    let end = *tr.path.last().expect("nonempty path");
    let terminal = grid.interpolate(tf.initial(), end);
    let action = tr.costs.iter().copied().fold(T::zero(), |a, b| a + b);
    let op = tf.operator();
    let (triple, validation) = realize(grid, op.field(), x, &tr.controls, tf.dt)?;
    let triple_action = triple_action(op.model(), op.field(), &triple);
    let triple_gap = tr.path.iter().zip(&triple.eta).map(|(&a, &b)| point::dist(a, b)).fold(T::zero(), T::max);
    let tn = tf.time(n);
    Ok(Minimizer {
        times: (0..=n).map(|k| tf.time(k)).collect(),
        path: tr.path,
        controls: tr.controls,
        pushes: tr.pushes,
        action,
        terminal,
        value,
        defect: (action + terminal - value).abs(),
        bound: (grid.h() + tf.dt) * tn / tf.dt,
        triple,
        validation,
        triple_action,
        triple_gap,
    })
}

/// Options of [`calibrated_extremal`].
#[derive(Debug, Clone)]
pub struct CalibrationOptions<T> {
    /// Window length; `min(1, diameter / C_ctl)` when unset.
    pub window: Option<T>,
    /// Per-window tolerance; `5 (h + dt)` when unset.
    pub tol: Option<T>,
    pub config: SchemeConfig<T>,
}

impl<T: Real> Default for CalibrationOptions<T> {
    fn default() -> Self {
        Self { window: None, tol: None, config: SchemeConfig::default() }
    }
}

/// A curve along which a solution is calibrated, window by window.
#[derive(Debug, Clone)]
pub struct CalibratedCurve<T> {
    pub times: Vec<T>,
    pub path: Vec<Point<T>>,
    pub controls: Vec<Point<T>>,
    pub pushes: Vec<T>,
    pub dt: T,
    pub window: T,
    pub window_steps: usize,
    /// Signed `phi(start) - phi(end) - action` per window.
    pub defects: Vec<T>,
    /// The same quantity over the whole curve; the window defects sum to it.
    pub total_defect: T,
    /// Window actions.
    pub actions: Vec<T>,
    /// `phi` at the window boundaries.
    pub phi_at: Vec<T>,
    pub tol: T,
    pub lipschitz: T,
    pub max_speed: T,
    /// `control_bound(Lip phi)`.
    pub speed_bound: T,
    pub triple: SkorokhodTriple<T>,
    pub validation: TripleReport<T>,
}

impl<T: Real> CalibratedCurve<T> {
    pub fn worst_defect(&self) -> T {
        self.defects.iter().map(|d| d.abs()).fold(T::zero(), T::max)
    }

    /// Signed defect over the steps `[a, b)` of the curve, read off the
    /// window table; `a` and `b` must be window boundaries.
    pub fn defect_between(&self, a: usize, b: usize) -> T {
        self.defects[a..b].iter().copied().fold(T::zero(), |s, d| s + d)
    }
}

/// Builds a calibrated extremal of `phi`, a solution at level `c`, from `x`
/// over `[0, horizon]`: on each window the Cauchy problem with data `phi` is
/// traced back from the current point.
pub fn calibrated_extremal<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    phi: &GridField<T>,
    c: T,
    x: Point<T>,
    horizon: T,
    opts: &CalibrationOptions<T>,
) -> Result<CalibratedCurve<T>, ExtremalError> {
    if !(horizon > T::zero()) {
        return Err(ExtremalError::InvalidParameter("horizon must be positive".into()));
    }
    let grid = phi.grid.clone();
    let domain = grid.domain();
    if !domain.in_closure(x) {
        return Err(ExtremalError::NotInClosure { x: pt64(x) });
    }
    let shifted = model.with_shift(model.shift() + c);
    let (controls, dt0) = default_controls(&shifted, &grid, &phi.values, &opts.config);
    let window = opts.window.unwrap_or_else(|| T::one().min(domain.diameter() / controls.bound));
    if !(window > T::zero()) {
        return Err(ExtremalError::InvalidParameter("window must be positive".into()));
    }
    let steps = (window / dt0).ceil().to_usize().unwrap_or(1).max(1);
    let dt = window / T::from_usize_lossy(steps) * (T::one() + T::lit(1e-12));
    let cfg = SchemeConfig { dt: Some(dt), retain_policy: true, store_stride: 1, ..opts.config.clone() };
    let tf = solve_cauchy(&shifted, field, phi, window, &cfg)?;
    let dt = tf.dt;
    let tol = opts.tol.unwrap_or(T::lit(5.0) * (grid.h() + dt));
    let n_win = (horizon / window - T::lit(1e-9)).ceil().to_usize().unwrap_or(1).max(1);

    let mut path = vec![x];
    let mut ctl = Vec::new();
    let mut pushes = Vec::new();
    let mut defects = Vec::with_capacity(n_win);
    let mut actions = Vec::with_capacity(n_win);
    let mut phi_at = vec![phi.at(x)];
    let mut p = x;
    for k in 0..n_win {
        let tr = trace(&tf, p, tf.steps)?;
        let end = *tr.path.last().expect("nonempty path");
        let action = tr.costs.iter().copied().fold(T::zero(), |a, b| a + b);
        let (a, b) = (phi.at(p), phi.at(end));
        let e = a - b - action;
        if e.abs() > T::lit(10.0) * tol {
            return Err(ExtremalError::CalibrationLost { window: k, defect: e.as_f64(), limit: (T::lit(10.0) * tol).as_f64() });
        }
        defects.push(e);
        actions.push(action);
        phi_at.push(b);
        path.extend_from_slice(&tr.path[1..]);
        ctl.extend(tr.controls);
        pushes.extend(tr.pushes);
        p = end;
    }
    let total_action = actions.iter().copied().fold(T::zero(), |a, b| a + b);
    let total_defect = phi_at[0] - phi_at[n_win] - total_action;
    let (triple, validation) = realize(&grid, field, x, &ctl, dt)?;
    let lipschitz = phi.lipschitz_ratio();
    let max_speed = ctl.iter().map(|&v| point::norm(v)).fold(T::zero(), T::max);
    Ok(CalibratedCurve {
        times: (0..path.len()).map(|k| dt * T::from_usize_lossy(k)).collect(),
        path,
        controls: ctl,
        pushes,
        dt,
        window: tf.horizon(),
        window_steps: tf.steps,
        defects,
        total_defect,
        actions,
        phi_at,
        tol,
        lipschitz,
        max_speed,
        speed_bound: shifted.control_bound(domain, lipschitz.max(T::lit(1e-6))),
        triple,
        validation,
    })
}

/// Distance of a calibrated curve to the discrete Aubry set over time.
#[derive(Debug, Clone, PartialEq)]
pub struct AubryConvergence<T> {
    pub times: Vec<T>,
    pub distances: Vec<T>,
    /// Largest distance over `[T/2, T]`.
    pub tail: T,
    /// Largest distance over `[T/4, T/2]`.
    pub previous: T,
    pub h: T,
    /// `tail <= max(2h, previous)`.
    pub passed: bool,
}

/// Tracks `dist(eta(t), A_h)` along `curve`.
pub fn aubry_convergence<T: Real>(curve: &CalibratedCurve<T>, aubry: &AubryResult<T>, grid: &Grid<T>) -> AubryConvergence<T> {
    let points: Vec<Point<T>> = aubry.set.iter().map(|&i| grid.node(i)).collect();
    let distances: Vec<T> = curve
        .path
        .iter()
        .map(|&x| points.iter().map(|&y| point::dist(x, y)).fold(T::infinity(), T::min))
        .collect();
    let horizon = *curve.times.last().expect("nonempty curve");
    let max_over = |lo: T, hi: T| {
        curve
            .times
            .iter()
            .zip(&distances)
            .filter(|(&t, _)| t >= lo && t <= hi)
            .map(|(_, &d)| d)
            .fold(T::zero(), T::max)
    };
    let tail = max_over(horizon * T::half(), horizon);
    let previous = max_over(horizon / T::lit(4.0), horizon * T::half());
    let h = grid.h();
    AubryConvergence { times: curve.times.clone(), distances, tail, previous, h, passed: tail <= (T::two() * h).max(previous) }
}

/// A curve on `[-T, T]` made of repeated cheap loops through an Aubry node.
#[derive(Debug, Clone)]
pub struct AubryOrbit<T> {
    pub node: usize,
    /// Nodes of one loop, starting and ending at `node`.
    pub loop_nodes: Vec<usize>,
    /// Durations of the loop legs.
    pub loop_durations: Vec<T>,
    /// Costs of the loop legs at the critical level.
    pub loop_costs: Vec<T>,
    pub loop_cost: T,
    pub loop_duration: T,
    pub times: Vec<T>,
    pub points: Vec<Point<T>>,
    pub nodes: Vec<usize>,
    /// Largest `action(sigma, tau) - d(eta(sigma), eta(tau)) - k tol` over
    /// sub-intervals spanning `k` loops; nonpositive when consistent.
    pub consistency_excess: T,
    /// Largest `action - d` over the same sub-intervals.
    pub consistency_defect: T,
    /// Largest distance of the curve (sampled between nodes as well) to the
    /// Aubry set.
    pub max_aubry_distance: T,
    pub tol: T,
}

/// Concatenates the cheapest loop through `y` to cover `[-half_width,
/// half_width]`. `graph` must be at the critical level.
pub fn two_sided_extremal<T: Real>(
    graph: &ActionGraph<T>,
    aubry: &AubryResult<T>,
    y: usize,
    half_width: T,
) -> Result<AubryOrbit<T>, ExtremalError> {
    let n = graph.len();
    if y >= n {
        return Err(ExtremalError::InvalidParameter(format!("node {y} is out of range")));
    }
    if !(half_width > T::zero()) {
        return Err(ExtremalError::InvalidParameter("half width must be positive".into()));
    }
    let a = graph.level();
    let tol = aubry.tol;
    let rest = aubry.tau_min * (graph.loop_rate(y) + a);
    let phi = reduced_potential(graph)?;
    let (dist, parent) = graph.shortest_tree(y, &phi);
    let mut closing: Option<(T, usize)> = None;
    for &e in graph.in_edges(y) {
        let z = graph.source(e);
        if z == y || !dist[z].is_finite() {
            continue;
        }
        let cost = dist[z] + graph.weight(e);
        if closing.map_or(true, |(c, _)| cost < c) {
            closing = Some((cost, e));
        }
    }
    let (mut loop_nodes, mut loop_durations, mut loop_costs) = (vec![y], Vec::new(), Vec::new());
    match closing {
        Some((cost, e)) if cost < rest => {
            let mut edges = vec![e];
            let mut z = graph.source(e);
            while z != y {
                let pe = parent[z].expect("reachable node has a parent");
                edges.push(pe);
                z = graph.source(pe);
            }
            edges.reverse();
            for e in edges {
                loop_nodes.push(graph.target(e));
                loop_durations.push(graph.tau(e));
                loop_costs.push(graph.weight(e));
            }
        }
        _ => {
            loop_nodes.push(y);
            loop_durations.push(aubry.tau_min);
            loop_costs.push(rest);
        }
    }
    let loop_cost = loop_costs.iter().copied().fold(T::zero(), |s, c| s + c);
    if loop_cost > tol {
        return Err(ExtremalError::NoCheapLoop { node: y, cost: loop_cost.as_f64(), tol: tol.as_f64() });
    }
    let loop_duration = loop_durations.iter().copied().fold(T::zero(), |s, c| s + c);
    let reps = (T::two() * half_width / loop_duration).ceil().to_usize().unwrap_or(1).max(1);
    let legs = loop_durations.len();

    let grid = graph.grid();
    let mut times = vec![-half_width];
    let mut nodes = vec![y];
    let mut leg_cost = Vec::new();
    let mut t = -half_width;
    for _ in 0..reps {
        for k in 0..legs {
            t = t + loop_durations[k];
            times.push(t);
            nodes.push(loop_nodes[k + 1]);
            leg_cost.push(loop_costs[k]);
        }
    }
    let points: Vec<Point<T>> = nodes.iter().map(|&i| grid.node(i)).collect();

    // consistency against d over sub-intervals of up to two loops
    let mut distinct: Vec<usize> = loop_nodes.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let pot = mane_potential_to(graph, &distinct)?;
    let span = (2 * legs).min(nodes.len() - 1);
    let mut excess = T::neg_infinity();
    let mut defect = T::neg_infinity();
    for i in 0..nodes.len() {
        let mut action = T::zero();
        for j in i + 1..nodes.len().min(i + span + 1) {
            action = action + leg_cost[j - 1];
            let d = pot.get(nodes[i], nodes[j]).expect("column of a loop node");
            let loops = T::from_usize_lossy((j - i).div_ceil(legs));
            defect = defect.max(action - d);
            excess = excess.max(action - d - loops * tol);
        }
    }
    let aubry_points: Vec<Point<T>> = aubry.set.iter().map(|&i| grid.node(i)).collect();
    let to_set = |x: Point<T>| aubry_points.iter().map(|&p| point::dist(x, p)).fold(T::infinity(), T::min);
    let mut max_aubry_distance = T::zero();
    for w in points.windows(2) {
        for s in 0..=4 {
            let q = point::axpy(w[0], T::from_usize_lossy(s) / T::lit(4.0), point::sub(w[1], w[0]));
            max_aubry_distance = max_aubry_distance.max(to_set(q));
        }
    }
    Ok(AubryOrbit {
        node: y,
        loop_nodes,
        loop_durations,
        loop_costs,
        loop_cost,
        loop_duration,
        times,
        points,
        nodes,
        consistency_excess: excess,
        consistency_defect: defect.max(T::zero()),
        max_aubry_distance,
        tol,
    })
}
