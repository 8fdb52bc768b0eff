//! Lattice discretization of the closed domain with boundary-snapped nodes
//! and piecewise-linear interpolation.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{GeometryError, ImplicitDomain};
use crate::point::{self, Point};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid spacing must be positive and finite")]
    InvalidSpacing,
    #[error("grid has {count} nodes; at least 9 are required")]
    TooFewNodes { count: usize },
    #[error("field has {got} values for {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
}

/// Convex interpolation weights over (at most) three nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil<T> {
    pub idx: [usize; 3],
    pub w: [T; 3],
}

impl<T: Real> Stencil<T> {
    #[inline]
    pub fn apply(&self, values: &[T]) -> T {
        self.w[0] * values[self.idx[0]] + self.w[1] * values[self.idx[1]] + self.w[2] * values[self.idx[2]]
    }

    fn single(i: usize) -> Self {
        Self { idx: [i, i, i], w: [T::one(), T::zero(), T::zero()] }
    }
}

/// Nodes of the closure on a lattice of spacing `h`. Lattice points inside
/// the domain are nodes; where a lattice edge crosses the boundary the
/// crossing point is a boundary node, unless an inside endpoint lies within
/// `h / 10` of it, in which case that endpoint is moved onto the boundary.
#[derive(Debug, Clone)]
pub struct Grid<T: Real> {
    domain: ImplicitDomain<T>,
    h: T,
    nodes: Vec<Point<T>>,
    kinds: Vec<NodeKind>,
    neighbors: Vec<Vec<usize>>,
    triangles: Vec<[usize; 3]>,
    origin: [i64; 2],
    ncell: [usize; 2],
    cell_tris: Vec<Vec<u32>>,
    cell_nodes: Vec<Vec<u32>>,
    line: Vec<usize>,
}

/// Neighbor radius in units of `h`: reaches the 16 lattice directions.
pub const NEIGHBOR_RADIUS: f64 = 2.25;

impl<T: Real> Grid<T> {
    pub fn new(domain: &ImplicitDomain<T>, h: T) -> Result<Self, GridError> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(GridError::InvalidSpacing);
        }
        let mut grid = if domain.dim() == 1 { Self::build_1d(domain, h) } else { Self::build_2d(domain, h) };
        if grid.nodes.len() < 9 {
            return Err(GridError::TooFewNodes { count: grid.nodes.len() });
        }
        grid.index_nodes();
        grid.build_neighbors();
        Ok(grid)
    }

    fn empty(domain: &ImplicitDomain<T>, h: T) -> Self {
        Self {
            domain: domain.clone(),
            h,
            nodes: Vec::new(),
            kinds: Vec::new(),
            neighbors: Vec::new(),
            triangles: Vec::new(),
            origin: [0, 0],
            ncell: [1, 1],
            cell_tris: Vec::new(),
            cell_nodes: Vec::new(),
            line: Vec::new(),
        }
    }

    fn kind_of(domain: &ImplicitDomain<T>, x: Point<T>) -> NodeKind {
        if domain.psi(x).abs() <= domain.boundary_tol() {
            NodeKind::Boundary
        } else {
            NodeKind::Interior
        }
    }

    fn build_1d(domain: &ImplicitDomain<T>, h: T) -> Self {
        let mut g = Self::empty(domain, h);
        let bb = domain.bounding_box();
        let i0 = (bb.lo[0] / h).floor().to_i64().unwrap_or(0) - 1;
        let i1 = (bb.hi[0] / h).ceil().to_i64().unwrap_or(0) + 1;
        let at = |i: i64| -> Point<T> { [h * T::lit(i as f64), T::zero()] };
        let snap = h * T::lit(0.3);
        let mut pts: Vec<Point<T>> = Vec::new();
        for i in i0..=i1 {
            let p = at(i);
            if domain.psi(p) > T::zero() {
                continue;
            }
            let mut q = p;
            let mut best = snap;
            for j in [i - 1, i + 1] {
                let o = at(j);
                if domain.psi(o) > T::zero() {
                    let c = domain.segment_crossing(p, o);
                    let d = point::dist(c, p);
                    if d <= best {
                        best = d;
                        q = c;
                    }
                }
            }
            pts.push(q);
            for j in [i - 1, i + 1] {
                let o = at(j);
                if domain.psi(o) > T::zero() {
                    let c = domain.segment_crossing(p, o);
                    if point::dist(c, p) > snap {
                        pts.push(c);
                    }
                }
            }
        }
        pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).expect("finite"));
        pts.dedup_by(|a, b| (a[0] - b[0]).abs() <= T::lit(1e-12) * h);
        g.kinds = pts.iter().map(|&p| Self::kind_of(domain, p)).collect();
        g.line = (0..pts.len()).collect();
        g.nodes = pts;
        g
    }

    fn build_2d(domain: &ImplicitDomain<T>, h: T) -> Self {
        let mut g = Self::empty(domain, h);
        let bb = domain.bounding_box();
        let i0 = (bb.lo[0] / h).floor().to_i64().unwrap_or(0) - 1;
        let i1 = (bb.hi[0] / h).ceil().to_i64().unwrap_or(0) + 1;
        let j0 = (bb.lo[1] / h).floor().to_i64().unwrap_or(0) - 1;
        let j1 = (bb.hi[1] / h).ceil().to_i64().unwrap_or(0) + 1;
        let nx = (i1 - i0 + 1) as usize;
        let ny = (j1 - j0 + 1) as usize;
        let lat = |i: usize, j: usize| -> Point<T> {
            [h * T::lit((i as i64 + i0) as f64), h * T::lit((j as i64 + j0) as f64)]
        };
        let id = |i: usize, j: usize| j * nx + i;
        let mut psi = vec![T::zero(); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                psi[id(i, j)] = domain.psi(lat(i, j));
            }
        }
        let inside = |k: usize| psi[k] <= T::zero();
        // crossings keyed by (lattice id of lower-left endpoint, direction)
        let mut crossing: HashMap<(usize, u8), Point<T>> = HashMap::new();
        for j in 0..ny {
            for i in 0..nx {
                let a = id(i, j);
                for (dir, (ii, jj)) in [(0u8, (i + 1, j)), (1u8, (i, j + 1))] {
                    if ii >= nx || jj >= ny {
                        continue;
                    }
                    let b = id(ii, jj);
                    if inside(a) != inside(b) {
                        let (pi, po) = if inside(a) { (lat(i, j), lat(ii, jj)) } else { (lat(ii, jj), lat(i, j)) };
                        crossing.insert((a, dir), domain.segment_crossing(pi, po));
                    }
                }
            }
        }
        let snap = h * T::lit(0.3);
        let mut lattice_node = vec![usize::MAX; nx * ny];
        let mut edge_node: HashMap<(usize, u8), usize> = HashMap::new();
        // edges incident to lattice point (i, j) as (key, other endpoint)
        let incident = |i: usize, j: usize| -> Vec<(usize, u8)> {
            let mut v = Vec::with_capacity(4);
            if i + 1 < nx {
                v.push((id(i, j), 0u8));
            }
            if i > 0 {
                v.push((id(i - 1, j), 0u8));
            }
            if j + 1 < ny {
                v.push((id(i, j), 1u8));
            }
            if j > 0 {
                v.push((id(i, j - 1), 1u8));
            }
            v
        };
        for j in 0..ny {
            for i in 0..nx {
                let k = id(i, j);
                if !inside(k) {
                    continue;
                }
                let p = lat(i, j);
                let mut best: Option<((usize, u8), T)> = None;
                let mut close = Vec::new();
                for key in incident(i, j) {
                    if let Some(&c) = crossing.get(&key) {
                        let d = point::dist(c, p);
                        if d <= snap {
                            close.push(key);
                            if best.map_or(true, |(_, bd)| d < bd) {
                                best = Some((key, d));
                            }
                        }
                    }
                }
                let n = g.nodes.len();
                match best {
                    Some((key, _)) => {
                        let c = crossing[&key];
                        g.nodes.push(c);
                        g.kinds.push(NodeKind::Boundary);
                        for k in close {
                            edge_node.insert(k, n);
                        }
                    }
                    None => {
                        g.nodes.push(p);
                        g.kinds.push(Self::kind_of(domain, p));
                    }
                }
                lattice_node[k] = n;
            }
        }
        let mut keys: Vec<(usize, u8)> = crossing.keys().copied().collect();
        keys.sort_unstable();
        // crossings through a lattice point lying on the boundary coincide
        let mut at_lattice: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for key in keys {
            if edge_node.contains_key(&key) {
                continue;
            }
            let c = crossing[&key];
            let cell = ((c[0] / h).round().to_i64().unwrap_or(0), (c[1] / h).round().to_i64().unwrap_or(0));
            let slot = at_lattice.entry(cell).or_default();
            if let Some(&m) = slot.iter().find(|&&m| point::dist(g.nodes[m], c) <= T::lit(1e-6) * h) {
                edge_node.insert(key, m);
                continue;
            }
            let n = g.nodes.len();
            slot.push(n);
            g.nodes.push(c);
            g.kinds.push(NodeKind::Boundary);
            edge_node.insert(key, n);
        }
        // triangulate lattice cells
        g.origin = [i0, j0];
        g.ncell = [nx - 1, ny - 1];
        g.cell_tris = vec![Vec::new(); (nx - 1) * (ny - 1)];
        let min_area = T::lit(1e-10) * h * h;
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
                // edge keys between consecutive corners (CCW)
                let ekeys = [(id(i, j), 0u8), (id(i + 1, j), 1u8), (id(i, j + 1), 0u8), (id(i, j), 1u8)];
                let all_in = corners.iter().all(|&(a, b)| inside(id(a, b)));
                let mut poly: Vec<usize> = Vec::with_capacity(6);
                let push = |poly: &mut Vec<usize>, n: usize| {
                    if poly.last() != Some(&n) {
                        poly.push(n);
                    }
                };
                for c in 0..4 {
                    let (a, b) = corners[c];
                    let k = id(a, b);
                    if inside(k) {
                        push(&mut poly, lattice_node[k]);
                    }
                    if let Some(&e) = edge_node.get(&ekeys[c]) {
                        push(&mut poly, e);
                    }
                }
                while poly.len() > 1 && poly.first() == poly.last() {
                    poly.pop();
                }
                let cell = j * (nx - 1) + i;
                let mut tris: Vec<[usize; 3]> = Vec::new();
                if all_in && poly.len() == 4 {
                    tris.push([poly[0], poly[1], poly[2]]);
                    tris.push([poly[0], poly[2], poly[3]]);
                } else if poly.len() >= 3 {
                    for k in 1..poly.len() - 1 {
                        tris.push([poly[0], poly[k], poly[k + 1]]);
                    }
                }
                for t in tris {
                    let a = g.nodes[t[0]];
                    let b = g.nodes[t[1]];
                    let c = g.nodes[t[2]];
                    let area = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
                    if area > min_area {
                        g.cell_tris[cell].push(g.triangles.len() as u32);
                        g.triangles.push(t);
                    }
                }
            }
        }
        g
    }

    fn cell_of(&self, p: Point<T>) -> (i64, i64) {
        let i = (p[0] / self.h).floor().to_i64().unwrap_or(i64::MIN / 2) - self.origin[0];
        let j = (p[1] / self.h).floor().to_i64().unwrap_or(i64::MIN / 2) - self.origin[1];
        (i, j)
    }

    fn cell_index(&self, i: i64, j: i64) -> Option<usize> {
        if i < 0 || j < 0 || i >= self.ncell[0] as i64 || j >= self.ncell[1] as i64 {
            None
        } else {
            Some(j as usize * self.ncell[0] + i as usize)
        }
    }

    fn index_nodes(&mut self) {
        if self.domain.dim() == 1 {
            return;
        }
        self.cell_nodes = vec![Vec::new(); self.ncell[0] * self.ncell[1]];
        for (n, &p) in self.nodes.iter().enumerate() {
            let (i, j) = self.cell_of(p);
            let i = i.clamp(0, self.ncell[0] as i64 - 1);
            let j = j.clamp(0, self.ncell[1] as i64 - 1);
            let c = j as usize * self.ncell[0] + i as usize;
            self.cell_nodes[c].push(n as u32);
        }
    }

    fn build_neighbors(&mut self) {
        let r = self.h * T::lit(NEIGHBOR_RADIUS);
        let n = self.nodes.len();
        let mut nb = vec![Vec::new(); n];
        if self.domain.dim() == 1 {
            for a in 0..n {
                for b in 0..n {
                    if a != b && point::dist(self.nodes[a], self.nodes[b]) <= r {
                        nb[a].push(b);
                    }
                }
            }
        } else {
            for a in 0..n {
                let p = self.nodes[a];
                for b in self.nodes_near(p, 3) {
                    if b == a {
                        continue;
                    }
                    let q = self.nodes[b];
                    if point::dist(p, q) <= r && self.domain.segment_in_closure(p, q, 6) {
                        nb[a].push(b);
                    }
                }
                nb[a].sort_unstable();
            }
        }
        self.neighbors = nb;
    }

    /// Nodes in the lattice cells within `reach` cells of `p`.
    fn nodes_near(&self, p: Point<T>, reach: i64) -> Vec<usize> {
        let (ci, cj) = self.cell_of(p);
        let mut out = Vec::new();
        for dj in -reach..=reach {
            for di in -reach..=reach {
                if let Some(c) = self.cell_index(ci + di, cj + dj) {
                    out.extend(self.cell_nodes[c].iter().map(|&k| k as usize));
                }
            }
        }
        out
    }

    pub fn domain(&self) -> &ImplicitDomain<T> {
        &self.domain
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Point<T>] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point<T> {
        self.nodes[i]
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.kinds[i] == NodeKind::Boundary
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_boundary(i)).collect()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Node closest to `p`.
    pub fn nearest_node(&self, p: Point<T>) -> usize {
        if self.dim() == 2 {
            for reach in [1i64, 3, 8] {
                let cand = self.nodes_near(p, reach);
                if let Some(best) = cand
                    .into_iter()
                    .min_by(|&a, &b| point::dist(self.nodes[a], p).partial_cmp(&point::dist(self.nodes[b], p)).unwrap())
                {
                    if point::dist(self.nodes[best], p) <= self.h * T::lit(reach as f64) {
                        return best;
                    }
                }
            }
        }
        (0..self.len())
            .min_by(|&a, &b| point::dist(self.nodes[a], p).partial_cmp(&point::dist(self.nodes[b], p)).unwrap())
            .expect("nonempty grid")
    }

    /// Interpolation weights at `p`: barycentric in the containing
    /// triangle, or clamped barycentric in the nearest one when `p` falls
    /// outside the triangulation. Weights are nonnegative and sum to one.
    pub fn locate(&self, p: Point<T>) -> Stencil<T> {
        if self.dim() == 1 {
            return self.locate_1d(p);
        }
        let (ci, cj) = self.cell_of(p);
        let mut best: Option<(T, usize, [T; 3])> = None;
        for reach in [0i64, 1, 2] {
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    if di.abs().max(dj.abs()) != reach {
                        continue;
                    }
                    let Some(c) = self.cell_index(ci + di, cj + dj) else { continue };
                    for &t in &self.cell_tris[c] {
                        let tri = self.triangles[t as usize];
                        let bc = barycentric(self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]], p);
                        let worst = bc[0].min(bc[1]).min(bc[2]);
                        if worst >= -T::lit(1e-12) {
                            return clamp_weights(tri, bc);
                        }
                        if best.map_or(true, |(w, _, _)| worst > w) {
                            best = Some((worst, t as usize, bc));
                        }
                    }
                }
            }
            if reach >= 1 {
                if let Some((_, t, bc)) = best {
                    return clamp_weights(self.triangles[t], bc);
                }
            }
        }
        Stencil::single(self.nearest_node(p))
    }

    fn locate_1d(&self, p: Point<T>) -> Stencil<T> {
        let x = p[0];
        let line = &self.line;
        let pos = line.partition_point(|&k| self.nodes[k][0] <= x);
        if pos == 0 {
            return Stencil::single(line[0]);
        }
        if pos == line.len() {
            return Stencil::single(line[line.len() - 1]);
        }
        let (a, b) = (line[pos - 1], line[pos]);
        let (xa, xb) = (self.nodes[a][0], self.nodes[b][0]);
        let s = ((x - xa) / (xb - xa)).clamp_to(T::zero(), T::one());
        Stencil { idx: [a, b, b], w: [T::one() - s, s, T::zero()] }
    }

    /// Piecewise-linear interpolant of nodal `values` at `p`.
    pub fn interpolate(&self, values: &[T], p: Point<T>) -> T {
        self.locate(p).apply(values)
    }

    /// `max |u_i - u_j| / |x_i - x_j|` over neighbor pairs.
    pub fn lipschitz_ratio(&self, values: &[T]) -> T {
        let mut worst = T::zero();
        for i in 0..self.len() {
            for &j in &self.neighbors[i] {
                let d = point::dist(self.nodes[i], self.nodes[j]);
                if d > T::zero() {
                    worst = worst.max((values[i] - values[j]).abs() / d);
                }
            }
        }
        worst
    }
}

fn barycentric<T: Real>(a: Point<T>, b: Point<T>, c: Point<T>, p: Point<T>) -> [T; 3] {
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    [l1, l2, T::one() - l1 - l2]
}

fn clamp_weights<T: Real>(tri: [usize; 3], bc: [T; 3]) -> Stencil<T> {
    let w = [bc[0].max(T::zero()), bc[1].max(T::zero()), bc[2].max(T::zero())];
    let s = w[0] + w[1] + w[2];
    Stencil { idx: tri, w: [w[0] / s, w[1] / s, w[2] / s] }
}

/// Stationary nodal values on a grid.
#[derive(Debug, Clone)]
pub struct GridField<T: Real> {
    pub grid: Arc<Grid<T>>,
    pub values: Vec<T>,
}

impl<T: Real> GridField<T> {
    pub fn new(grid: Arc<Grid<T>>, values: Vec<T>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid<T>>, f: impl Fn(Point<T>) -> T) -> Self {
        let values = grid.nodes().iter().map(|&p| f(p)).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid<T>>, c: T) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    pub fn at(&self, p: Point<T>) -> T {
        self.grid.interpolate(&self.values, p)
    }

    pub fn lipschitz_ratio(&self) -> T {
        self.grid.lipschitz_ratio(&self.values)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `max |u - v|` over nodes.
    pub fn sup_distance(&self, other: &Self) -> T {
        self.values.iter().zip(&other.values).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_grid_covers_closure() {
        let d = ImplicitDomain::<f64>::disk([0.0, 0.0], 1.0).unwrap();
        let g = Grid::new(&d, 0.1).unwrap();
        assert!(g.nodes().iter().all(|&p| d.psi(p) <= d.boundary_tol()));
        let nb = g.boundary_nodes().len();
        assert!(nb > 40, "{nb} boundary nodes");
        // origin is a lattice node
        let o = g.nearest_node([0.0, 0.0]);
        assert_eq!(g.node(o), [0.0, 0.0]);
        // interpolation reproduces affine functions inside the triangulation
        let vals: Vec<f64> = g.nodes().iter().map(|p| 2.0 * p[0] - p[1] + 0.5).collect();
        for &q in &[[0.13, -0.27], [0.5, 0.5], [-0.7, 0.1], [0.0, 0.97]] {
            let v = g.interpolate(&vals, q);
            assert!((v - (2.0 * q[0] - q[1] + 0.5)).abs() < 1e-9, "{q:?}: {v}");
        }
    }

    #[test]
    fn interval_grid_is_sorted_with_endpoints() {
        let d = ImplicitDomain::<f64>::interval(-1.0, 1.0).unwrap();
        let g = Grid::new(&d, 0.1).unwrap();
        assert_eq!(g.len(), 21);
        assert!(g.is_boundary(0) && g.is_boundary(20));
        let vals: Vec<f64> = g.nodes().iter().map(|p| p[0] * 3.0).collect();
        assert!((g.interpolate(&vals, [0.55, 0.0]) - 1.65).abs() < 1e-12);
        assert_eq!(g.interpolate(&vals, [1.5, 0.0]), vals[20]);
    }

    #[test]
    fn weights_are_convex_outside_triangulation() {
        let d = ImplicitDomain::<f64>::ellipse([0.0, 0.0], 1.0, 0.6).unwrap();
        let g = Grid::new(&d, 0.1).unwrap();
        for &q in &[[1.02, 0.0], [0.0, 0.61], [0.7, 0.43]] {
            let s = g.locate(q);
            assert!(s.w.iter().all(|&w| w >= 0.0));
            assert!((s.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_coarse_is_rejected() {
        let d = ImplicitDomain::<f64>::disk([0.0, 0.0], 1.0).unwrap();
        assert!(matches!(Grid::new(&d, 5.0), Err(GridError::TooFewNodes { .. })));
    }
}
