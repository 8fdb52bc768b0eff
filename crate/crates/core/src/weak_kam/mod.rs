//! Critical value, Mañé potential, Aubry set and weak KAM solutions.
//!
//! Everything here is computed on an [`ActionGraph`]. Distances follow the
//! path orientation: `d(i, j)` is the cheapest action of a reflected path
//! starting at node `i` and ending at node `j`, so that every subsolution
//! satisfies `u(i) - u(j) <= d(i, j)` and `d(., y)` is itself a subsolution.

pub mod graph;

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::ObliqueField;
use crate::hamiltonian::HamiltonianModel;
use crate::lax_oleinik::{default_controls, solve_cauchy_with, CauchyDiagnostics, Grid, GridError, GridField, SchemeConfig, SchemeError};
use crate::scalar::Real;

pub use graph::{build_action_graph, default_speed_max, ActionGraph, GraphConfig};

/// Largest node count for which the full distance matrix is stored.
pub const FULL_MATRIX_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeakKamError {
    #[error("could not bracket the critical value within [{lo}, {hi}]")]
    BracketFailure { lo: f64, hi: f64 },
    #[error("long-time slope not settled: window slopes {first} and {second}")]
    SlopeNotConverged { first: f64, second: f64 },
    #[error("negative cycle through node {node} at level {level}")]
    NegativeCycleAtC { level: f64, node: usize },
    #[error("{nodes} nodes exceed the full-matrix cap of {cap}; use sourced mode")]
    TooManyNodes { nodes: usize, cap: usize },
    #[error("trace violates u(y) - u(y') <= d(y, y') by {excess} at nodes {y} -> {y2}")]
    IncompatibleTrace { y: usize, y2: usize, excess: f64 },
    #[error("running minimum still moved by {change} over the last quarter (tol {tol})")]
    NotRelaxed { change: f64, tol: f64 },
    #[error("distance to node {node} is not available in sourced mode")]
    MissingColumn { node: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Critical value estimates.
#[derive(Debug, Clone)]
pub struct CriticalValue<T> {
    /// Threshold between levels with and without negative cycles.
    pub c_cycle: T,
    /// Long-time slope estimate, when computed.
    pub c_slope: Option<T>,
    /// Adopted value (`c_cycle`).
    pub c: T,
    pub gap: Option<T>,
    /// Final bisection bracket; `c` is its upper end.
    pub bracket: (T, T),
    pub iterations: usize,
    /// Graph subsolution at the upper end of the bracket.
    pub potential: Vec<T>,
}

/// Bisection settings.
#[derive(Debug, Clone)]
pub struct CycleOptions<T> {
    /// Initial bracket; derived from the self-loop rates when unset.
    pub bracket: Option<(T, T)>,
    /// Stop width relative to the problem scale.
    pub rel_width: T,
}

impl<T: Real> Default for CycleOptions<T> {
    fn default() -> Self {
        Self { bracket: None, rel_width: T::lit(1e-10) }
    }
}

fn f64_of<T: Real>(x: T) -> f64 {
    x.as_f64()
}

/// `max(1, max |rate|)` over nodes with a finite rate.
pub fn level_scale<T: Real>(graph: &ActionGraph<T>) -> T {
    graph
        .rates()
        .iter()
        .filter(|r| r.is_finite())
        .fold(T::one(), |m, r| m.max(r.abs()))
}

/// Bisects on the level for the onset of negative cycles.
pub fn critical_value_cycle<T: Real>(
    graph: &ActionGraph<T>,
    opts: &CycleOptions<T>,
) -> Result<CriticalValue<T>, WeakKamError> {
    let scale = level_scale(graph);
    let min_rate = graph
        .rates()
        .iter()
        .copied()
        .filter(|r| r.is_finite())
        .fold(T::infinity(), T::min);
    if !min_rate.is_finite() {
        return Err(WeakKamError::InvalidParameter("no node has a finite rest cost".into()));
    }
    let (mut lo, mut hi) = opts.bracket.unwrap_or_else(|| {
        let lo = -min_rate - T::lit(1e-3) * scale;
        (lo, lo + scale)
    });
    let limit = T::lit(10.0) * scale + min_rate.abs();
    let mut step = scale;
    while !graph.has_negative_cycle(lo) {
        hi = lo;
        lo = lo - step;
        step = step * T::two();
        if lo < -limit {
            return Err(WeakKamError::BracketFailure { lo: f64_of(lo), hi: f64_of(hi) });
        }
    }
    step = (hi - lo).max(scale * T::lit(1e-3));
    while graph.has_negative_cycle(hi) {
        lo = hi;
        hi = hi + step;
        step = step * T::two();
        if hi > limit {
            return Err(WeakKamError::BracketFailure { lo: f64_of(lo), hi: f64_of(hi) });
        }
    }
    let width = opts.rel_width * scale;
    let mut iterations = 0;
    while hi - lo > width {
        let mid = (lo + hi) * T::half();
        if graph.has_negative_cycle(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let potential = graph
        .relevel(hi)
        .potential()
        .map_err(|c| WeakKamError::NegativeCycleAtC { level: f64_of(hi), node: c[0] })?;
    Ok(CriticalValue {
        c_cycle: hi,
        c_slope: None,
        c: hi,
        gap: None,
        bracket: (lo, hi),
        iterations,
        potential,
    })
}

/// Long-time slope estimate of the critical value.
#[derive(Debug, Clone)]
pub struct SlopeEstimate<T> {
    pub c: T,
    /// Least-squares slopes of the mean over the third and fourth quarters.
    pub window_slopes: (T, T),
    pub diagnostics: CauchyDiagnostics<T>,
}

fn ls_slope<T: Real>(ts: &[T], ys: &[T]) -> T {
    let n = T::from_usize_lossy(ts.len());
    let mt = ts.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let mut num = T::zero();
    let mut den = T::zero();
    for (&t, &y) in ts.iter().zip(ys) {
        num = num + (t - mt) * (y - my);
        den = den + (t - mt) * (t - mt);
    }
    if den > T::zero() {
        num / den
    } else {
        T::zero()
    }
}

/// Minus the long-time growth rate of the mean of the evolution from zero
/// data, fitted over the second half of `[0, horizon]`.
pub fn critical_value_slope<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    grid: Arc<Grid<T>>,
    horizon: T,
    config: &SchemeConfig<T>,
    tol: T,
) -> Result<SlopeEstimate<T>, WeakKamError> {
    let u0 = GridField::constant(grid, T::zero());
    let cfg = SchemeConfig { store_stride: usize::MAX, ..config.clone() };
    let tf = solve_cauchy_with(model, field, &u0, horizon, &cfg, |_, _| {})?;
    let steps = tf.steps;
    if steps < 8 {
        return Err(WeakKamError::InvalidParameter("horizon too short for a slope fit".into()));
    }
    let ts: Vec<T> = (0..=steps).map(|k| tf.time(k)).collect();
    let half = steps / 2;
    let q3 = 3 * steps / 4;
    let slope = ls_slope(&ts[half..], &tf.means[half..]);
    let s1 = ls_slope(&ts[half..=q3], &tf.means[half..=q3]);
    let s2 = ls_slope(&ts[q3..], &tf.means[q3..]);
    if (s1 - s2).abs() > tol {
        return Err(WeakKamError::SlopeNotConverged { first: f64_of(-s1), second: f64_of(-s2) });
    }
    Ok(SlopeEstimate { c: -slope, window_slopes: (-s1, -s2), diagnostics: tf.diagnostics })
}

/// Both estimators and their gap.
pub fn critical_value<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    graph: &ActionGraph<T>,
    horizon: T,
    config: &SchemeConfig<T>,
    slope_tol: T,
) -> Result<CriticalValue<T>, WeakKamError> {
    let mut cv = critical_value_cycle(graph, &CycleOptions::default())?;
    let slope = critical_value_slope(model, field, graph.grid().clone(), horizon, config, slope_tol)?;
    cv.c_slope = Some(slope.c);
    cv.gap = Some((cv.c_cycle - slope.c).abs());
    Ok(cv)
}

/// Orientation of the stored distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `d[i][j]` is the cost of going from node `i` to node `j`.
    RowToColumn,
}

#[derive(Debug, Clone)]
enum Storage<T> {
    Full(Vec<T>),
    Columns(Vec<(usize, Vec<T>)>),
}

/// Graph Mañé potential at the level of the graph.
#[derive(Debug, Clone)]
pub struct ManePotential<T: Real> {
    pub level: T,
    pub orientation: Orientation,
    grid: Arc<Grid<T>>,
    storage: Storage<T>,
}

pub(crate) fn reduced_potential<T: Real>(graph: &ActionGraph<T>) -> Result<Vec<T>, WeakKamError> {
    graph
        .potential()
        .map_err(|c| WeakKamError::NegativeCycleAtC { level: f64_of(graph.level()), node: c[0] })
}

/// All-pairs distances by Johnson reweighting and one Dijkstra run per
/// source.
pub fn mane_potential<T: Real>(graph: &ActionGraph<T>) -> Result<ManePotential<T>, WeakKamError> {
    let n = graph.len();
    if n > FULL_MATRIX_CAP {
        return Err(WeakKamError::TooManyNodes { nodes: n, cap: FULL_MATRIX_CAP });
    }
    let phi = reduced_potential(graph)?;
    let mut d = vec![T::zero(); n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(s, row)| {
        graph.dijkstra(s, &phi, true, row);
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v + phi[s] - phi[j];
        }
        row[s] = row[s].max(T::zero());
    });
    Ok(ManePotential {
        level: graph.level(),
        orientation: Orientation::RowToColumn,
        grid: graph.grid().clone(),
        storage: Storage::Full(d),
    })
}

/// Distances `d(., y)` to the selected nodes only.
pub fn mane_potential_to<T: Real>(graph: &ActionGraph<T>, targets: &[usize]) -> Result<ManePotential<T>, WeakKamError> {
    let n = graph.len();
    if let Some(&y) = targets.iter().find(|&&y| y >= n) {
        return Err(WeakKamError::InvalidParameter(format!("node {y} out of range")));
    }
    let phi = reduced_potential(graph)?;
    let cols: Vec<(usize, Vec<T>)> = targets
        .par_iter()
        .map(|&y| {
            let mut col = vec![T::zero(); n];
            graph.dijkstra(y, &phi, false, &mut col);
            for (x, v) in col.iter_mut().enumerate() {
                *v = *v + phi[x] - phi[y];
            }
            col[y] = col[y].max(T::zero());
            (y, col)
        })
        .collect();
    Ok(ManePotential {
        level: graph.level(),
        orientation: Orientation::RowToColumn,
        grid: graph.grid().clone(),
        storage: Storage::Columns(cols),
    })
}

impl<T: Real> ManePotential<T> {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn is_full(&self) -> bool {
        matches!(self.storage, Storage::Full(_))
    }

    /// `d(i, j)` when stored.
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let n = self.len();
        match &self.storage {
            Storage::Full(d) => d.get(i * n + j).copied(),
            Storage::Columns(cols) => cols.iter().find(|(y, _)| *y == j).map(|(_, c)| c[i]),
        }
    }

    /// `d(., y)`.
    pub fn column(&self, y: usize) -> Option<Vec<T>> {
        let n = self.len();
        match &self.storage {
            Storage::Full(d) => (y < n).then(|| (0..n).map(|i| d[i * n + y]).collect()),
            Storage::Columns(cols) => cols.iter().find(|(t, _)| *t == y).map(|(_, c)| c.clone()),
        }
    }

    /// `d(x, .)`, full mode only.
    pub fn row(&self, x: usize) -> Option<&[T]> {
        let n = self.len();
        match &self.storage {
            Storage::Full(d) => (x < n).then(|| &d[x * n..(x + 1) * n]),
            Storage::Columns(_) => None,
        }
    }

    /// `max (d[i][j] - d[i][k] - d[k][j])` over all triples, full mode only.
    pub fn triangle_defect(&self) -> Option<T> {
        let n = self.len();
        let d = match &self.storage {
            Storage::Full(d) => d,
            Storage::Columns(_) => return None,
        };
        let worst = (0..n)
            .into_par_iter()
            .map(|i| {
                let ri = &d[i * n..(i + 1) * n];
                let mut w = T::neg_infinity();
                for k in 0..n {
                    let dik = ri[k];
                    let rk = &d[k * n..(k + 1) * n];
                    for j in 0..n {
                        w = w.max(ri[j] - dik - rk[j]);
                    }
                }
                w
            })
            .reduce(|| T::neg_infinity(), T::max);
        Some(worst)
    }

    /// `min_i d[i][i]`, full mode only.
    pub fn diagonal_min(&self) -> Option<T> {
        let n = self.len();
        match &self.storage {
            Storage::Full(d) => Some((0..n).map(|i| d[i * n + i]).fold(T::infinity(), T::min)),
            Storage::Columns(_) => None,
        }
    }
}

/// Settings of the loop criterion.
#[derive(Debug, Clone, Default)]
pub struct AubryOptions<T> {
    /// Minimal self-loop duration; `max(4 tau_median, 1)` when unset.
    pub tau_min: Option<T>,
    /// Detection threshold; `h^2 (1 + sup |g|)` when unset.
    pub tol: Option<T>,
}

#[derive(Debug, Clone)]
pub struct AubryResult<T> {
    /// Cheapest closed loop through each node.
    pub residual: Vec<T>,
    /// Nodes with residual at most `tol`, ascending.
    pub set: Vec<usize>,
    pub tau_min: T,
    pub tol: T,
    /// Set when no node passed the threshold and the argmin was taken.
    pub fallback: bool,
}

impl<T> AubryResult<T> {
    pub fn contains(&self, i: usize) -> bool {
        self.set.binary_search(&i).is_ok()
    }
}

/// Loop residuals `r(y)` and the detected set.
pub fn aubry_detect<T: Real>(
    graph: &ActionGraph<T>,
    potential: &ManePotential<T>,
    opts: &AubryOptions<T>,
) -> Result<AubryResult<T>, WeakKamError> {
    let n = graph.len();
    let h = graph.grid().h();
    let a = graph.level();
    let tau_min = opts.tau_min.unwrap_or_else(|| (T::lit(4.0) * graph.tau_median()).max(T::one()));
    let tol = opts.tol.unwrap_or(h * h * (T::one() + graph.g_sup()));
    let self_loop = |y: usize| tau_min * (graph.loop_rate(y) + a);
    let residual: Vec<T> = if potential.is_full() {
        (0..n)
            .into_par_iter()
            .map(|y| {
                let row = potential.row(y).expect("full matrix");
                let mut r = self_loop(y);
                for z in 0..n {
                    if z != y {
                        let back = potential.get(z, y).expect("full matrix");
                        r = r.min(row[z] + back);
                    }
                }
                r
            })
            .collect()
    } else {
        let phi = reduced_potential(graph)?;
        (0..n)
            .into_par_iter()
            .map_init(
                || vec![T::zero(); n],
                |buf, y| {
                    graph.dijkstra(y, &phi, true, buf);
                    let mut r = self_loop(y);
                    for &e in graph.in_edges(y) {
                        let z = graph.source(e);
                        let dyz = buf[z] + phi[y] - phi[z];
                        r = r.min(dyz + graph.weight(e));
                    }
                    r
                },
            )
            .collect()
    };
    let mut set: Vec<usize> = (0..n).filter(|&y| residual[y] <= tol).collect();
    let mut fallback = false;
    if set.is_empty() {
        let best = (0..n)
            .min_by(|&i, &j| residual[i].partial_cmp(&residual[j]).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0);
        set.push(best);
        fallback = true;
    }
    Ok(AubryResult { residual, set, tau_min, tol, fallback })
}

/// `u(x) = min_{y in A} u(y) + d(x, y)` from values given on `nodes`.
pub fn representation<T: Real>(
    potential: &ManePotential<T>,
    nodes: &[usize],
    values: &[T],
    tol: T,
) -> Result<GridField<T>, WeakKamError> {
    if nodes.len() != values.len() || nodes.is_empty() {
        return Err(WeakKamError::InvalidParameter("trace must give one value per Aubry node".into()));
    }
    let cols: Vec<Vec<T>> = nodes
        .iter()
        .map(|&y| potential.column(y).ok_or(WeakKamError::MissingColumn { node: y }))
        .collect::<Result<_, _>>()?;
    for (a, &y) in nodes.iter().enumerate() {
        for (b, &y2) in nodes.iter().enumerate() {
            let excess = values[a] - values[b] - cols[b][y];
            if excess > tol {
                return Err(WeakKamError::IncompatibleTrace { y, y2, excess: f64_of(excess) });
            }
        }
    }
    let n = potential.len();
    let out: Vec<T> = (0..n)
        .map(|x| {
            cols.iter()
                .zip(values)
                .map(|(c, &v)| v + c[x])
                .fold(T::infinity(), T::min)
        })
        .collect();
    Ok(GridField::new(potential.grid().clone(), out)?)
}

/// Long-time lower limit of the evolution at the critical level.
#[derive(Debug, Clone)]
pub struct UMinus<T: Real> {
    pub field: GridField<T>,
    /// Largest change of the running minimum over the last quarter.
    pub change: T,
    pub diagnostics: CauchyDiagnostics<T>,
}

/// Node-wise running minimum over `[T/2, T]` of the evolution of `u0` for
/// `H - c`.
pub fn u_minus<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    u0: &GridField<T>,
    c: T,
    horizon: T,
    config: &SchemeConfig<T>,
    tol: T,
) -> Result<UMinus<T>, WeakKamError> {
    if !(horizon > T::zero()) {
        return Err(WeakKamError::InvalidParameter("horizon must be positive".into()));
    }
    let shifted = model.with_shift(model.shift() + c);
    let (_, dt0) = default_controls(&shifted, &u0.grid, &u0.values, config);
    let steps = (horizon / dt0).ceil().to_usize().unwrap_or(1).max(4);
    // a hair above horizon / steps so that the solver lands on `steps`
    let dt = horizon / T::from_usize_lossy(steps) * (T::one() + T::lit(1e-12));
    let cfg = SchemeConfig { store_stride: usize::MAX, dt: Some(dt), ..config.clone() };
    let n = u0.values.len();
    let mut running = vec![T::infinity(); n];
    let mut at_q3: Option<(Vec<T>, Vec<T>)> = None;
    let tf = solve_cauchy_with(&shifted, field, u0, horizon, &cfg, |k, w| {
        if 2 * k >= steps {
            for (r, &v) in running.iter_mut().zip(w) {
                *r = r.min(v);
            }
        }
        if at_q3.is_none() && 4 * k >= 3 * steps {
            at_q3 = Some((running.clone(), w.to_vec()));
        }
    })?;
    let (before, w_q3) = at_q3.unwrap_or_else(|| (running.clone(), tf.last().to_vec()));
    let sup = |a: &[T], b: &[T]| a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).fold(T::zero(), T::max);
    let change = sup(&before, &running).max(sup(&w_q3, tf.last()));
    if change > tol {
        return Err(WeakKamError::NotRelaxed { change: f64_of(change), tol: f64_of(tol) });
    }
    Ok(UMinus { field: GridField::new(u0.grid.clone(), running)?, change, diagnostics: tf.diagnostics })
}
