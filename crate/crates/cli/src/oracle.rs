//! Brute-force reference solution of the stationary problem.
//!
//! Plain relative value iteration on a Cartesian lattice `refine` times
//! finer than the problem grid: every lattice point in the closure is updated
//! by `u(x) = min_xi tau L(x, -xi) + g |z - P z| + u(P z)` with
//! `z = x + tau xi` and `P` the nearest-point projection, after which the
//! minimum is subtracted. The subtracted constants converge to `-c tau`.
//! Lattice points outside the closure carry the value of the nearest inside
//! point, so interpolation near the wall is bilinear throughout. None of
//! this touches the semi-Lagrangian scheme of the library.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;
use weakkam::lax_oleinik::{Grid, GridField};

use crate::problem::{build_problem, Problem};
use crate::spec::ProblemSpec;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("value iteration did not converge in {iterations} sweeps (last change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
    #[error("refinement factor must be at least 2, got {0}")]
    Refine(usize),
    #[error("{0}")]
    Setup(String),
}

/// Oracle output sampled on the problem grid.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Values at the problem grid nodes, normalized to minimum zero.
    pub field: GridField<f64>,
    /// `-(subtracted constant) / tau` at the fixed point.
    pub c: f64,
    pub iterations: usize,
    pub lattice_points: usize,
    pub spacing: f64,
}

pub const N_ANGLE: usize = 32;
pub const N_SPEED: usize = 16;
/// Ratio between the fastest and slowest nonzero speed.
pub const SPEED_SPAN: f64 = 64.0;
pub const MAX_SWEEPS: usize = 20_000;

struct Lattice {
    origin: [f64; 2],
    step: f64,
    nx: usize,
    ny: usize,
    /// Lattice index of each inside point.
    inside: Vec<usize>,
    /// For every lattice index, the inside point whose value it carries.
    source: Vec<u32>,
}

impl Lattice {
    fn new(p: &Problem, step: f64) -> Result<Self, OracleError> {
        let bb = p.domain.bounding_box();
        let dim = p.domain.dim();
        let pad = 2.0 * step;
        let i0 = ((bb.lo[0] - pad) / step).floor();
        let i1 = ((bb.hi[0] + pad) / step).ceil();
        let (j0, j1) = if dim == 1 {
            (0.0, 0.0)
        } else {
            (((bb.lo[1] - pad) / step).floor(), ((bb.hi[1] + pad) / step).ceil())
        };
        let origin = [i0 * step, j0 * step];
        let nx = (i1 - i0) as usize + 1;
        let ny = (j1 - j0) as usize + 1;
        let point = |k: usize| [origin[0] + (k % nx) as f64 * step, origin[1] + (k / nx) as f64 * step];
        let is_in: Vec<bool> = (0..nx * ny).map(|k| p.domain.in_closure(point(k))).collect();
        let inside: Vec<usize> = (0..nx * ny).filter(|&k| is_in[k]).collect();
        if inside.is_empty() {
            return Err(OracleError::Setup("no lattice point inside the domain".into()));
        }
        let mut slot = vec![u32::MAX; nx * ny];
        for (s, &k) in inside.iter().enumerate() {
            slot[k] = s as u32;
        }
        let mut source = vec![0u32; nx * ny];
        for k in 0..nx * ny {
            if is_in[k] {
                source[k] = slot[k];
                continue;
            }
            let (i, j) = ((k % nx) as isize, (k / nx) as isize);
            let mut best = (f64::INFINITY, u32::MAX);
            for dj in -2..=2isize {
                for di in -2..=2isize {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= nx as isize || b >= ny as isize {
                        continue;
                    }
                    let q = b as usize * nx + a as usize;
                    if is_in[q] {
                        let d = (di * di + dj * dj) as f64;
                        if d < best.0 {
                            best = (d, slot[q]);
                        }
                    }
                }
            }
            if best.1 == u32::MAX {
                // far from the domain; only reached by interpolation if the
                // projection misbehaves, so any inside point will do
                let x = point(k);
                best.1 = inside
                    .iter()
                    .enumerate()
                    .min_by(|a, b| dist2(point(*a.1), x).total_cmp(&dist2(point(*b.1), x)))
                    .map(|(s, _)| s as u32)
                    .unwrap_or(0);
            }
            source[k] = best.1;
        }
        Ok(Self { origin, step, nx, ny, inside, source })
    }

    fn point(&self, k: usize) -> [f64; 2] {
        [self.origin[0] + (k % self.nx) as f64 * self.step, self.origin[1] + (k / self.nx) as f64 * self.step]
    }

    /// Four (inside index, weight) pairs of the bilinear interpolant at `z`.
    fn stencil(&self, z: [f64; 2]) -> [(u32, f64); 4] {
        let fx = ((z[0] - self.origin[0]) / self.step).clamp(0.0, (self.nx - 1) as f64);
        let fy = if self.ny == 1 { 0.0 } else { ((z[1] - self.origin[1]) / self.step).clamp(0.0, (self.ny - 1) as f64) };
        let i = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let j = if self.ny == 1 { 0 } else { (fy.floor() as usize).min(self.ny - 2) };
        let (ax, ay) = (fx - i as f64, fy - j as f64);
        let i1 = (i + 1).min(self.nx - 1);
        let j1 = if self.ny == 1 { j } else { j + 1 };
        let at = |a: usize, b: usize| self.source[b * self.nx + a];
        [
            (at(i, j), (1.0 - ax) * (1.0 - ay)),
            (at(i1, j), ax * (1.0 - ay)),
            (at(i, j1), (1.0 - ax) * ay),
            (at(i1, j1), ax * ay),
        ]
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Compact precomputed move: bilinear stencil plus running cost.
#[derive(Clone, Copy)]
struct Move {
    idx: [u32; 4],
    w: [f32; 4],
    cost: f64,
}

fn speed_max(p: &Problem) -> f64 {
    // speeds of calibrated paths are bounded by the momentum derivative of
    // H on the ball where subsolutions live
    let r = p.model.coercivity_radius(&p.domain, 0.0).max(1e-3) * 1.5;
    let xs = p.domain.closure_samples(12);
    let dim = p.domain.dim();
    let n_ang = if dim == 1 { 2 } else { 24 };
    let mut s = 0.0f64;
    for &x in &xs {
        for a in 0..n_ang {
            let th = std::f64::consts::TAU * a as f64 / n_ang as f64;
            let e = if dim == 1 { [th.cos().signum(), 0.0] } else { [th.cos(), th.sin()] };
            let eps = 1e-4 * r;
            let hp = p.model.h(x, [r * e[0] + eps * e[0], r * e[1] + eps * e[1]]);
            let hm = p.model.h(x, [r * e[0] - eps * e[0], r * e[1] - eps * e[1]]);
            s = s.max(((hp - hm) / (2.0 * eps)).abs());
        }
    }
    s.max(1e-3)
}

/// Fixed point of plain value iteration on a lattice of spacing
/// `h / refine`, sampled back onto the problem grid.
pub fn oracle_value_iteration(spec: &ProblemSpec, refine: usize) -> Result<OracleSolution, OracleError> {
    if refine < 2 {
        return Err(OracleError::Refine(refine));
    }
    let p = build_problem(spec).map_err(|e| OracleError::Setup(e.to_string()))?;
    let step = spec.grid.h / refine as f64;
    let lat = Lattice::new(&p, step)?;
    let dim = p.domain.dim();
    let tau = 2.0 * step;

    let smax = speed_max(&p);
    let dirs: Vec<[f64; 2]> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..N_ANGLE)
            .map(|a| {
                let th = std::f64::consts::TAU * a as f64 / N_ANGLE as f64;
                [th.cos(), th.sin()]
            })
            .collect()
    };
    let mut controls = vec![[0.0, 0.0]];
    for k in 0..N_SPEED {
        let s = smax * SPEED_SPAN.powf(k as f64 / (N_SPEED - 1) as f64 - 1.0);
        for e in &dirs {
            controls.push([s * e[0], s * e[1]]);
        }
    }

    let moves: Vec<Vec<Move>> = lat
        .inside
        .par_iter()
        .map(|&k| {
            let x = lat.point(k);
            let mut out = Vec::with_capacity(controls.len());
            for &xi in &controls {
                let Some(l) = p.model.l(x, [-xi[0], -xi[1]]).finite() else { continue };
                let z = [x[0] + tau * xi[0], x[1] + tau * xi[1]];
                let (y, push) = if p.domain.in_closure(z) {
                    (z, 0.0)
                } else {
                    match p.domain.project_to_closure(z) {
                        Ok(y) => (y, dist2(y, z).sqrt()),
                        Err(_) => continue,
                    }
                };
                let st = lat.stencil(y);
                out.push(Move {
                    idx: st.map(|s| s.0),
                    w: st.map(|s| s.1 as f32),
                    cost: tau * l + p.field.g(y) * push,
                });
            }
            out
        })
        .collect();
    if moves.iter().any(|m| m.is_empty()) {
        return Err(OracleError::Setup("a lattice point has no admissible move".into()));
    }

    let n = lat.inside.len();
    let mut u = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    let mut change = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        next.par_iter_mut().zip(&moves).for_each(|(out, ms)| {
            let mut best = f64::INFINITY;
            for m in ms {
                let v = m.cost
                    + m.w[0] as f64 * u[m.idx[0] as usize]
                    + m.w[1] as f64 * u[m.idx[1] as usize]
                    + m.w[2] as f64 * u[m.idx[2] as usize]
                    + m.w[3] as f64 * u[m.idx[3] as usize];
                best = best.min(v);
            }
            *out = best;
        });
        let shift = next.iter().copied().fold(f64::INFINITY, f64::min);
        change = 0.0;
        let mut scale = 1.0f64;
        for (a, b) in u.iter_mut().zip(&next) {
            let v = b - shift;
            change = change.max((v - *a).abs());
            scale = scale.max(v.abs());
            *a = v;
        }
        if change <= 1e-9 * scale {
            let grid: Arc<Grid<f64>> = p.grid.clone();
            let values: Vec<f64> = grid
                .nodes()
                .iter()
                .map(|&q| lat.stencil(q).iter().map(|&(i, w)| w * u[i as usize]).sum())
                .collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let field = GridField::new(grid, values.iter().map(|v| v - lo).collect())
                .map_err(|e| OracleError::Setup(e.to_string()))?;
            return Ok(OracleSolution { field, c: -shift / tau, iterations: sweep, lattice_points: n, spacing: step });
        }
    }
    Err(OracleError::NotConverged { iterations: MAX_SWEEPS, change })
}
