//! Directed action graph on the grid nodes and the shortest-path kernels
//! run on it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::{ImplicitDomain, ObliqueField};
use crate::hamiltonian::HamiltonianModel;
use crate::lax_oleinik::Grid;
use crate::point::{self, Point};
use crate::scalar::Real;

/// Sampling of the traversal speeds.
#[derive(Debug, Clone)]
pub struct GraphConfig<T> {
    /// Number of log-spaced speeds sampled at each quadrature node.
    pub n_speed: usize,
    /// Fastest traversal speed considered; estimated from the model when unset.
    pub speed_max: Option<T>,
    /// Ratio between the fastest and the slowest sampled speed.
    pub speed_span: T,
    /// Adds boundary-to-boundary edges travelled while pressing on the wall.
    pub reflected: bool,
}

impl<T: Real> Default for GraphConfig<T> {
    fn default() -> Self {
        Self { n_speed: 48, speed_max: None, speed_span: T::lit(1e6), reflected: true }
    }
}

/// Grid action graph.
///
/// The weight of the edge `x -> y` at level `a` is the cheapest sampled
/// value of `tau (L(eta, -v) + g l + a)` over straight moves of duration
/// `tau`, so it is affine in `a` once `tau` is frozen. Each node also
/// carries a self-loop whose cost per unit time is `rate + a`, where the
/// rate is `L(x, 0)` or, on the boundary, the cheapest press
/// `min_{l >= 0} L(x, -l gamma) + g l` when that is lower.
#[derive(Debug, Clone)]
pub struct ActionGraph<T: Real> {
    grid: Arc<Grid<T>>,
    level: T,
    g_sup: T,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    targets: Vec<usize>,
    lengths: Vec<T>,
    reflected: Vec<bool>,
    speeds: Vec<T>,
    log_step: T,
    samples: Vec<T>,
    extra_speed: Vec<T>,
    extra_value: Vec<T>,
    rate: Vec<T>,
    press: Vec<bool>,
    rev_offsets: Vec<usize>,
    rev_edges: Vec<usize>,
    tau: Vec<T>,
    weight: Vec<T>,
}

/// `min_{l >= 0} f(l)` for a convex `f`, by bracketing and golden section.
fn min_nonneg<T: Real>(f: impl Fn(T) -> T, scale: T) -> (T, T) {
    let f0 = f(T::zero());
    let probe = scale * T::lit(1e-6);
    if !(f(probe) < f0) {
        return (T::zero(), f0);
    }
    let mut hi = scale.max(probe * T::two());
    let mut f_hi = f(hi);
    let mut guard = 0;
    while f_hi < f0 && guard < 40 {
        hi = hi * T::two();
        f_hi = f(hi);
        guard += 1;
    }
    let r = T::lit(0.618_033_988_749_894_9);
    let (mut a, mut b) = (T::zero(), hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let (l, v) = if fc < fd { (c, fc) } else { (d, fd) };
    if v < f0 {
        (l, v)
    } else {
        (T::zero(), f0)
    }
}

fn onto_boundary<T: Real>(domain: &ImplicitDomain<T>, x: Point<T>) -> Point<T> {
    let mut y = x;
    for _ in 0..8 {
        let g = domain.grad_psi(y);
        let g2 = point::dot(g, g);
        if !(g2 > T::zero()) {
            break;
        }
        y = point::sub(y, point::scale(g, domain.psi(y) / g2));
    }
    domain.project_to_closure(y).unwrap_or(x)
}

/// Speed scale of near-optimal motions, from the same a priori bound that
/// sizes the control set of the evolution scheme.
pub fn default_speed_max<T: Real>(model: &HamiltonianModel<T>, grid: &Grid<T>) -> T {
    let domain = grid.domain();
    let level = grid
        .nodes()
        .iter()
        .map(|&x| model.h(x, point::zero()))
        .fold(T::neg_infinity(), T::max);
    let r = model.coercivity_radius(domain, level).max(T::lit(1e-3));
    let c = (0..24)
        .map(|k| model.control_bound(domain, r * T::two().powf(T::lit(k as f64 / 4.0))))
        .fold(T::infinity(), T::min);
    T::lit(4.0) * c
}

/// Simpson nodes along an edge.
const QUAD: usize = 3;
const QUAD_AT: [f64; QUAD] = [0.0, 0.5, 1.0];
const QUAD_W: [f64; QUAD] = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];

/// Builds the action graph of `model` on `grid` with weights at level `a`.
///
/// An edge is travelled along the straight segment with a free speed
/// profile, so its cost at level `a` is
/// `|y - x| * avg_segment min_s (L(eta, -s e) + a) / s`, averaged with
/// Simpson's rule. Reflected edges run along the boundary arc between two
/// boundary nodes and may push with `l >= 0`, paying `g l`.
pub fn build_action_graph<T: Real>(
    model: &HamiltonianModel<T>,
    field: &ObliqueField<T>,
    grid: Arc<Grid<T>>,
    a: T,
    config: &GraphConfig<T>,
) -> ActionGraph<T> {
    let domain = grid.domain();
    let n = grid.len();
    let n_s = config.n_speed.max(4);
    let s_max = config.speed_max.unwrap_or_else(|| default_speed_max(model, &grid));
    let s_min = s_max / config.speed_span.max(T::lit(10.0));
    let du = (s_max / s_min).ln() / T::from_usize_lossy(n_s - 1);
    let speeds: Vec<T> = (0..n_s).map(|k| s_min * (du * T::from_usize_lossy(k)).exp()).collect();

    let boundary = grid.boundary_nodes();
    let radius = T::lit(crate::lax_oleinik::grid::NEIGHBOR_RADIUS) * grid.h();
    let mut adjacency: Vec<Vec<(usize, bool)>> = (0..n)
        .map(|i| grid.neighbors(i).iter().map(|&j| (j, false)).collect())
        .collect();
    if config.reflected {
        for &i in &boundary {
            for &j in &boundary {
                if i != j && point::dist(grid.node(i), grid.node(j)) <= radius {
                    adjacency[i].push((j, true));
                }
            }
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut sources = Vec::new();
    let mut targets = Vec::new();
    let mut reflected = Vec::new();
    offsets.push(0);
    for (i, adj) in adjacency.iter().enumerate() {
        for &(j, r) in adj {
            sources.push(i);
            targets.push(j);
            reflected.push(r);
        }
        offsets.push(targets.len());
    }
    let m = targets.len();
    let lengths: Vec<T> = (0..m).map(|e| point::dist(grid.node(sources[e]), grid.node(targets[e]))).collect();

    // running cost per unit time at quadrature node q of edge e, speed s
    let running = |e: usize, q: usize, s: T| -> Option<T> {
        let x = grid.node(sources[e]);
        let y = grid.node(targets[e]);
        let dir = point::scale(point::sub(y, x), T::one() / lengths[e]);
        let v = point::scale(dir, s);
        if !reflected[e] {
            let p = point::axpy(x, T::lit(QUAD_AT[q]), point::sub(y, x));
            return model.l(p, point::neg(v)).finite();
        }
        let mid = onto_boundary(domain, point::scale(point::add(x, y), T::half()));
        let gamma = field.gamma(mid);
        let g = field.g(mid);
        let cost = |l: T| -> T {
            match model.l(mid, point::neg(point::axpy(v, l, gamma))).finite() {
                Some(c) => c + g * l,
                None => T::infinity(),
            }
        };
        let (_, best) = min_nonneg(cost, s + s_max);
        best.is_finite().then_some(best)
    };
    let quad_count = |e: usize| if reflected[e] { 1 } else { QUAD };

    let rows: Vec<(Vec<T>, [T; QUAD], [T; QUAD])> = (0..m)
        .into_par_iter()
        .map(|e| {
            let mut row = vec![T::infinity(); QUAD * n_s];
            let mut xs = [s_min; QUAD];
            let mut xv = [T::infinity(); QUAD];
            for q in 0..quad_count(e) {
                let r = &mut row[q * n_s..(q + 1) * n_s];
                for (k, &s) in speeds.iter().enumerate() {
                    r[k] = running(e, q, s).unwrap_or_else(T::infinity);
                }
                // fastest admissible speed when fast motions are excluded
                if let Some(k) = r.iter().rposition(|v| v.is_finite()) {
                    if k + 1 < n_s {
                        let (mut lo, mut hi) = (speeds[k], speeds[k + 1]);
                        let mut best = r[k];
                        for _ in 0..40 {
                            let mid = (lo * hi).sqrt();
                            match running(e, q, mid) {
                                Some(v) => {
                                    lo = mid;
                                    best = v;
                                }
                                None => hi = mid,
                            }
                        }
                        xs[q] = lo;
                        xv[q] = best;
                    }
                }
            }
            (row, xs, xv)
        })
        .collect();
    let mut samples = Vec::with_capacity(m * QUAD * n_s);
    let mut extra_speed = Vec::with_capacity(m * QUAD);
    let mut extra_value = Vec::with_capacity(m * QUAD);
    for (row, xs, xv) in rows {
        samples.extend(row);
        extra_speed.extend(xs);
        extra_value.extend(xv);
    }

    let (rate, press): (Vec<T>, Vec<bool>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = grid.node(i);
            let still = model.l(x, point::zero()).finite().unwrap_or_else(T::infinity);
            if !grid.is_boundary(i) {
                return (still, false);
            }
            let gamma = field.gamma(x);
            let g = field.g(x);
            let cost = |l: T| -> T {
                match model.l(x, point::neg(point::scale(gamma, l))).finite() {
                    Some(c) => c + g * l,
                    None => T::infinity(),
                }
            };
            let (l, best) = min_nonneg(cost, s_max);
            if l > T::zero() && best < still {
                (best, true)
            } else {
                (still, false)
            }
        })
        .unzip();

    let mut counts = vec![0usize; n + 1];
    for &t in &targets {
        counts[t + 1] += 1;
    }
    for i in 0..n {
        counts[i + 1] += counts[i];
    }
    let rev_offsets = counts.clone();
    let mut fill = counts;
    let mut rev_edges = vec![0; m];
    for e in 0..m {
        let t = targets[e];
        rev_edges[fill[t]] = e;
        fill[t] += 1;
    }

    let mut graph = ActionGraph {
        g_sup: field.g_sup,
        grid,
        level: a,
        offsets,
        sources,
        targets,
        lengths,
        reflected,
        speeds,
        log_step: du,
        samples,
        extra_speed,
        extra_value,
        rate,
        press,
        rev_offsets,
        rev_edges,
        tau: Vec::new(),
        weight: Vec::new(),
    };
    let (w, t) = graph.weights_at(a);
    graph.weight = w;
    graph.tau = t;
    graph
}

impl<T: Real> ActionGraph<T> {
    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn level(&self) -> T {
        self.level
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    /// Sampled `sup |g|` of the boundary data the graph was built with.
    pub fn g_sup(&self) -> T {
        self.g_sup
    }

    /// Indices of the edges leaving node `i`.
    pub fn out_edges(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Indices of the edges entering node `i`.
    pub fn in_edges(&self, i: usize) -> &[usize] {
        &self.rev_edges[self.rev_offsets[i]..self.rev_offsets[i + 1]]
    }

    pub fn source(&self, e: usize) -> usize {
        self.sources[e]
    }

    pub fn target(&self, e: usize) -> usize {
        self.targets[e]
    }

    pub fn tau(&self, e: usize) -> T {
        self.tau[e]
    }

    pub fn weight(&self, e: usize) -> T {
        self.weight[e]
    }

    pub fn weights(&self) -> &[T] {
        &self.weight
    }

    pub fn is_reflected(&self, e: usize) -> bool {
        self.reflected[e]
    }

    /// Cost per unit time of staying at node `i`, before the level shift.
    pub fn loop_rate(&self, i: usize) -> T {
        self.rate[i]
    }

    /// Whether the cheapest way to stay at `i` presses against the boundary.
    pub fn is_press(&self, i: usize) -> bool {
        self.press[i]
    }

    pub fn rates(&self) -> &[T] {
        &self.rate
    }

    /// Median duration over the edges.
    pub fn tau_median(&self) -> T {
        let mut t: Vec<T> = self.tau.iter().copied().filter(|v| v.is_finite()).collect();
        if t.is_empty() {
            return T::zero();
        }
        let k = t.len() / 2;
        t.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        t[k]
    }

    /// `min_s (L_q(s) + a) / s` at quadrature node `q` of edge `e`, with a
    /// parabolic refinement in `log s`, as `(cost per length, speed)`.
    fn node_min(&self, e: usize, q: usize, a: T) -> (T, T) {
        let n_s = self.speeds.len();
        let row = &self.samples[(e * QUAD + q) * n_s..(e * QUAD + q + 1) * n_s];
        let f = |k: usize| (row[k] + a) / self.speeds[k];
        let mut best = (T::infinity(), T::nan());
        let mut arg = None;
        for k in 0..n_s {
            let v = f(k);
            if v < best.0 {
                best = (v, self.speeds[k]);
                arg = Some(k);
            }
        }
        if let Some(k) = arg {
            if k > 0 && k + 1 < n_s {
                let (fm, f0, fp) = (f(k - 1), f(k), f(k + 1));
                let curv = fm - T::two() * f0 + fp;
                if fm.is_finite() && fp.is_finite() && curv > T::zero() {
                    let shift = (T::half() * (fm - fp) / curv).clamp_to(-T::one(), T::one());
                    let v = f0 - (fm - fp) * (fm - fp) / (T::lit(8.0) * curv);
                    if v < best.0 {
                        best = (v, self.speeds[k] * (shift * self.log_step).exp());
                    }
                }
            }
        }
        let xs = self.extra_speed[e * QUAD + q];
        let xv = (self.extra_value[e * QUAD + q] + a) / xs;
        if xv < best.0 {
            best = (xv, xs);
        }
        best
    }

    /// Cheapest move along edge `e` at level `a`, `(weight, duration)`.
    pub fn edge_at(&self, e: usize, a: T) -> (T, T) {
        let len = self.lengths[e];
        if self.reflected[e] {
            let (c, s) = self.node_min(e, 0, a);
            return if c.is_finite() { (len * c, len / s) } else { (T::infinity(), T::infinity()) };
        }
        let mut w = T::zero();
        let mut tau = T::zero();
        for q in 0..QUAD {
            let (c, s) = self.node_min(e, q, a);
            if !c.is_finite() {
                return (T::infinity(), T::infinity());
            }
            w = w + T::lit(QUAD_W[q]) * c;
            tau = tau + T::lit(QUAD_W[q]) / s;
        }
        (len * w, len * tau)
    }

    fn weights_at(&self, a: T) -> (Vec<T>, Vec<T>) {
        (0..self.edge_count()).into_par_iter().map(|e| self.edge_at(e, a)).unzip()
    }

    /// Same edges with the durations frozen, weights moved to level `a`.
    pub fn at_level(&self, a: T) -> Self {
        let mut g = self.clone();
        let da = a - self.level;
        for (w, &t) in g.weight.iter_mut().zip(&self.tau) {
            if w.is_finite() {
                *w = *w + t * da;
            }
        }
        g.level = a;
        g
    }

    /// Re-optimizes every duration at level `a`.
    pub fn relevel(&self, a: T) -> Self {
        let mut g = self.clone();
        let (w, t) = self.weights_at(a);
        g.weight = w;
        g.tau = t;
        g.level = a;
        g
    }

    /// Potential `u` with `u(x) <= w(x -> y) + u(y)` on every edge, `u <= 0`,
    /// for the weights `w`, or the nodes of a negative cycle.
    pub(crate) fn potential_for(&self, w: &[T], a: T) -> Result<Vec<T>, Vec<usize>> {
        let n = self.len();
        if let Some(i) = (0..n).find(|&i| self.rate[i] + a < T::zero()) {
            return Err(vec![i]);
        }
        let mut u = vec![T::zero(); n];
        let mut parent = vec![usize::MAX; n];
        let mut queued = vec![true; n];
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        let mut relaxations = 0usize;
        let tiny = T::epsilon() * T::lit(16.0);
        while let Some(y) = queue.pop_front() {
            queued[y] = false;
            for &e in self.in_edges(y) {
                let x = self.sources[e];
                let cand = u[y] + w[e];
                if cand < u[x] - tiny * (T::one() + u[x].abs()) {
                    u[x] = cand;
                    parent[x] = e;
                    if !queued[x] {
                        queued[x] = true;
                        queue.push_back(x);
                    }
                    relaxations += 1;
                    if relaxations % n == 0 {
                        if let Some(cycle) = self.parent_cycle(&parent, w) {
                            return Err(cycle);
                        }
                    }
                }
            }
        }
        Ok(u)
    }

    fn parent_cycle(&self, parent: &[usize], w: &[T]) -> Option<Vec<usize>> {
        let n = parent.len();
        // 0 unvisited, 1 on current walk, 2 done
        let mut state = vec![0u8; n];
        for s in 0..n {
            if state[s] != 0 {
                continue;
            }
            let mut walk = Vec::new();
            let mut x = s;
            loop {
                if state[x] == 2 {
                    break;
                }
                if state[x] == 1 {
                    let start = walk.iter().position(|&v| v == x).unwrap_or(0);
                    let cycle: Vec<usize> = walk[start..].to_vec();
                    let total: T = cycle.iter().map(|&v| w[parent[v]]).sum();
                    if total < T::zero() {
                        for &v in &walk {
                            state[v] = 2;
                        }
                        return Some(cycle);
                    }
                    break;
                }
                state[x] = 1;
                walk.push(x);
                if parent[x] == usize::MAX {
                    break;
                }
                x = self.targets[parent[x]];
            }
            for &v in &walk {
                state[v] = 2;
            }
        }
        None
    }

    /// Discrete subsolution at the stored level, or a negative cycle.
    pub fn potential(&self) -> Result<Vec<T>, Vec<usize>> {
        self.potential_for(&self.weight, self.level)
    }

    /// Whether the graph at level `a` (durations re-optimized) has a
    /// negative cycle.
    pub fn has_negative_cycle(&self, a: T) -> bool {
        let (w, _) = self.weights_at(a);
        self.potential_for(&w, a).is_err()
    }

    /// Shortest reduced distances from `s` (forward) or to `s` (backward)
    /// for nonnegative reduced weights `w(x -> y) - phi(x) + phi(y)`.
    /// Forward shortest-path tree from `s` with reduced weights: distances
    /// in original units and the last edge on each path.
    pub(crate) fn shortest_tree(&self, s: usize, phi: &[T]) -> (Vec<T>, Vec<Option<usize>>) {
        let n = self.len();
        let mut dist = vec![T::infinity(); n];
        let mut parent = vec![None; n];
        dist[s] = T::zero();
        let mut heap = BinaryHeap::new();
        heap.push(Entry(T::zero(), s));
        while let Some(Entry(d, x)) = heap.pop() {
            if d > dist[x] {
                continue;
            }
            for e in self.out_edges(x) {
                let y = self.targets[e];
                let nd = d + (self.weight[e] - phi[x] + phi[y]).max(T::zero());
                if nd < dist[y] {
                    dist[y] = nd;
                    parent[y] = Some(e);
                    heap.push(Entry(nd, y));
                }
            }
        }
        for (y, d) in dist.iter_mut().enumerate() {
            *d = *d + phi[s] - phi[y];
        }
        (dist, parent)
    }

    pub(crate) fn dijkstra(&self, s: usize, phi: &[T], forward: bool, out: &mut [T]) {
        for v in out.iter_mut() {
            *v = T::infinity();
        }
        out[s] = T::zero();
        let mut heap = BinaryHeap::new();
        heap.push(Entry(T::zero(), s));
        while let Some(Entry(d, x)) = heap.pop() {
            if d > out[x] {
                continue;
            }
            if forward {
                for e in self.out_edges(x) {
                    let y = self.targets[e];
                    let r = (self.weight[e] - phi[x] + phi[y]).max(T::zero());
                    let nd = d + r;
                    if nd < out[y] {
                        out[y] = nd;
                        heap.push(Entry(nd, y));
                    }
                }
            } else {
                for &e in self.in_edges(x) {
                    let y = self.sources[e];
                    let r = (self.weight[e] - phi[y] + phi[x]).max(T::zero());
                    let nd = d + r;
                    if nd < out[y] {
                        out[y] = nd;
                        heap.push(Entry(nd, y));
                    }
                }
            }
        }
    }
}

struct Entry<T>(T, usize);

impl<T: Real> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl<T: Real> Eq for Entry<T> {}

impl<T: Real> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Entry<T> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_min_on_half_line() {
        let (l, v) = min_nonneg(|l: f64| (l - 2.0) * (l - 2.0), 1.0);
        assert!((l - 2.0).abs() < 1e-6 && v < 1e-10);
        let (l, _) = min_nonneg(|l: f64| l + 1.0, 1.0);
        assert_eq!(l, 0.0);
    }
}
