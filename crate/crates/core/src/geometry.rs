//! Implicit domains, the oblique reflection field and the penalty cap.
//!
//! The closed domain is `{x in box : psi(x) <= 0}` for a C^1 defining function
//! `psi` with non-vanishing gradient near the zero level set. The outward
//! normal is `grad psi / |grad psi|` on the boundary.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::point::{self, Point};
use crate::scalar::Real;

pub type ScalarFn<T> = Arc<dyn Fn(Point<T>) -> T + Send + Sync>;
pub type VectorFn<T> = Arc<dyn Fn(Point<T>) -> Point<T> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point ({}, {}) is not on the boundary (psi = {psi:e})", x[0], x[1])]
    NotOnBoundary { x: [f64; 2], psi: f64 },
    #[error("gradient of psi degenerates at ({}, {}) (|grad psi| = {norm:e})", x[0], x[1])]
    DegenerateGradient { x: [f64; 2], norm: f64 },
    #[error("projection onto the closure diverged from ({}, {})", x[0], x[1])]
    ProjectionDiverged { x: [f64; 2] },
    #[error("oblique field fails nu.gamma > 0 at ({}, {}) (nu.gamma = {margin})", witness[0], witness[1])]
    ObliquenessViolated { witness: [f64; 2], margin: f64 },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn to_f64<T: Real>(x: Point<T>) -> [f64; 2] {
    [x[0].as_f64(), x[1].as_f64()]
}

/// Axis-aligned box containing the closed domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub lo: Point<T>,
    pub hi: Point<T>,
}

impl<T: Real> BoundingBox<T> {
    pub fn new(lo: Point<T>, hi: Point<T>) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: Point<T>, dim: usize) -> bool {
        (0..dim).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }

    pub fn center(&self) -> Point<T> {
        point::scale(point::add(self.lo, self.hi), T::half())
    }

    fn padded(self, frac: T, dim: usize) -> Self {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for k in 0..dim {
            let pad = (hi[k] - lo[k]) * frac;
            lo[k] = lo[k] - pad;
            hi[k] = hi[k] + pad;
        }
        Self { lo, hi }
    }
}

/// Closed domain given by a defining function.
#[derive(Clone)]
pub struct ImplicitDomain<T: Real> {
    psi: ScalarFn<T>,
    grad_psi: VectorFn<T>,
    dim: usize,
    bbox: BoundingBox<T>,
    boundary_tol: T,
    band: T,
    rho0: T,
    diameter: T,
    anchor: Point<T>,
    label: String,
}

impl<T: Real> fmt::Debug for ImplicitDomain<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImplicitDomain")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("bbox", &self.bbox)
            .field("boundary_tol", &self.boundary_tol)
            .field("rho0", &self.rho0)
            .field("diameter", &self.diameter)
            .finish()
    }
}

const SAMPLE_RES: usize = 128;

impl<T: Real> ImplicitDomain<T> {
    /// Builds a domain from `psi` and its gradient and validates the sign,
    /// nondegeneracy and connectivity conditions on a sampling grid.
    pub fn new(
        label: impl Into<String>,
        psi: ScalarFn<T>,
        grad_psi: VectorFn<T>,
        dim: usize,
        bbox: BoundingBox<T>,
    ) -> Result<Self, GeometryError> {
        if dim != 1 && dim != 2 {
            return Err(GeometryError::InvalidParameter(format!("dimension {dim} not in {{1, 2}}")));
        }
        for k in 0..dim {
            if !(bbox.hi[k] > bbox.lo[k]) {
                return Err(GeometryError::InvalidParameter("empty bounding box".into()));
            }
        }
        let mut dom = Self {
            psi,
            grad_psi,
            dim,
            bbox,
            boundary_tol: T::zero(),
            band: T::zero(),
            rho0: T::zero(),
            diameter: T::one(),
            anchor: bbox.center(),
            label: label.into(),
        };
        dom.calibrate()?;
        Ok(dom)
    }

    fn sample_points(&self, res: usize) -> Vec<Point<T>> {
        let n = T::from_usize_lossy(res - 1);
        let lo = self.bbox.lo;
        let hi = self.bbox.hi;
        let coord = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * T::from_usize_lossy(i) / n;
        if self.dim == 1 {
            (0..res).map(|i| [coord(0, i), T::zero()]).collect()
        } else {
            let mut out = Vec::with_capacity(res * res);
            for j in 0..res {
                for i in 0..res {
                    out.push([coord(0, i), coord(1, j)]);
                }
            }
            out
        }
    }

    fn calibrate(&mut self) -> Result<(), GeometryError> {
        let res = SAMPLE_RES;
        let pts = self.sample_points(res);
        let vals: Vec<T> = pts.iter().map(|&p| (self.psi)(p)).collect();
        let inside: Vec<usize> = (0..pts.len()).filter(|&i| vals[i] < T::zero()).collect();
        if inside.is_empty() {
            return Err(GeometryError::InvalidDomain("psi < 0 nowhere in the bounding box".into()));
        }
        // box frame must be exterior
        let on_frame = |i: usize| -> bool {
            if self.dim == 1 {
                i == 0 || i == res - 1
            } else {
                let (a, b) = (i % res, i / res);
                a == 0 || b == 0 || a == res - 1 || b == res - 1
            }
        };
        if let Some(i) = (0..pts.len()).find(|&i| on_frame(i) && vals[i] <= T::zero()) {
            let p = to_f64(pts[i]);
            return Err(GeometryError::InvalidDomain(format!(
                "bounding box does not contain the domain: psi <= 0 at frame point ({}, {})",
                p[0], p[1]
            )));
        }
        // anchor: deepest interior sample
        let anchor = inside
            .iter()
            .copied()
            .min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap())
            .unwrap();
        self.anchor = pts[anchor];

        // diameter from directional extents of interior samples
        let mut diam = T::zero();
        for k in 0..8 {
            let ang = T::PI() * T::from_usize_lossy(k) / T::lit(8.0);
            let e = [ang.cos(), ang.sin()];
            let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
            for &i in &inside {
                let s = point::dot(pts[i], e);
                lo = lo.min(s);
                hi = hi.max(s);
            }
            diam = diam.max(hi - lo);
            if self.dim == 1 {
                break;
            }
        }
        let cell = self.cell_size(res);
        diam = diam + cell;
        self.diameter = diam;
        self.boundary_tol = T::lit(1e-8).max(T::lit(64.0) * T::epsilon()) * diam;
        self.band = T::lit(0.05) * diam;

        // rho0: smallest gradient norm among samples whose distance to the
        // zero level is within the band (first-order estimate |psi|/|grad psi|)
        let mut rho0 = T::infinity();
        for (p, &v) in pts.iter().zip(&vals) {
            let g = point::norm((self.grad_psi)(*p));
            if v.abs() <= self.band * g.max(T::min_positive_value()) {
                rho0 = rho0.min(g);
            }
        }
        if !rho0.is_finite() {
            // band too thin for the sampling; fall back to boundary rays
            for b in self.boundary_samples(64) {
                rho0 = rho0.min(point::norm((self.grad_psi)(b)));
            }
        }
        if !(rho0 > T::zero()) || !rho0.is_finite() {
            return Err(GeometryError::DegenerateGradient { x: to_f64(self.anchor), norm: rho0.as_f64() });
        }
        self.rho0 = rho0;

        if !self.connected(&vals, res) {
            return Err(GeometryError::InvalidDomain("domain is not connected at sampling resolution".into()));
        }
        Ok(())
    }

    fn with_diameter(mut self, diameter: T) -> Self {
        self.diameter = diameter;
        self.boundary_tol = T::lit(1e-8).max(T::lit(64.0) * T::epsilon()) * diameter;
        self.band = T::lit(0.05) * diameter;
        self
    }

    fn cell_size(&self, res: usize) -> T {
        let n = T::from_usize_lossy(res - 1);
        let mut c = T::zero();
        for k in 0..self.dim {
            c = c.max((self.bbox.hi[k] - self.bbox.lo[k]) / n);
        }
        c
    }

    fn connected(&self, vals: &[T], res: usize) -> bool {
        let total = vals.iter().filter(|v| **v < T::zero()).count();
        let start = match vals.iter().position(|v| *v < T::zero()) {
            Some(s) => s,
            None => return false,
        };
        let mut seen = vec![false; vals.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            count += 1;
            let mut nbrs: Vec<usize> = Vec::with_capacity(4);
            if self.dim == 1 {
                if i > 0 {
                    nbrs.push(i - 1);
                }
                if i + 1 < res {
                    nbrs.push(i + 1);
                }
            } else {
                let (a, b) = (i % res, i / res);
                if a > 0 {
                    nbrs.push(i - 1);
                }
                if a + 1 < res {
                    nbrs.push(i + 1);
                }
                if b > 0 {
                    nbrs.push(i - res);
                }
                if b + 1 < res {
                    nbrs.push(i + res);
                }
            }
            for j in nbrs {
                if !seen[j] && vals[j] < T::zero() {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        count == total
    }

    /// Unit disk style domain `|x - c|^2 - r^2`.
    pub fn disk(center: Point<T>, radius: T) -> Result<Self, GeometryError> {
        if !(radius > T::zero()) {
            return Err(GeometryError::InvalidParameter("disk radius must be positive".into()));
        }
        let r2 = radius * radius;
        let psi: ScalarFn<T> = Arc::new(move |x| {
            let d = point::sub(x, center);
            point::dot(d, d) - r2
        });
        let grad: VectorFn<T> = Arc::new(move |x| point::scale(point::sub(x, center), T::two()));
        let bbox = BoundingBox::new(
            [center[0] - radius, center[1] - radius],
            [center[0] + radius, center[1] + radius],
        )
        .padded(T::lit(0.1), 2);
        Ok(Self::new("disk", psi, grad, 2, bbox)?.with_diameter(T::two() * radius))
    }

    /// Axis-aligned ellipse with semi-axes `a`, `b`, defined by
    /// `(dx/a)^2 + (dy/b)^2 - 1`.
    pub fn ellipse(center: Point<T>, a: T, b: T) -> Result<Self, GeometryError> {
        if !(a > T::zero() && b > T::zero()) {
            return Err(GeometryError::InvalidParameter("ellipse semi-axes must be positive".into()));
        }
        let psi: ScalarFn<T> = Arc::new(move |x| {
            let u = (x[0] - center[0]) / a;
            let v = (x[1] - center[1]) / b;
            u * u + v * v - T::one()
        });
        let grad: VectorFn<T> = Arc::new(move |x| {
            [T::two() * (x[0] - center[0]) / (a * a), T::two() * (x[1] - center[1]) / (b * b)]
        });
        let bbox = BoundingBox::new([center[0] - a, center[1] - b], [center[0] + a, center[1] + b])
            .padded(T::lit(0.1), 2);
        Ok(Self::new("ellipse", psi, grad, 2, bbox)?.with_diameter(T::two() * a.max(b)))
    }

    /// Rectangle with rounded corners: the superellipse
    /// `(dx/a)^8 + (dy/b)^8 - 1`.
    pub fn rounded_box(center: Point<T>, half_w: T, half_h: T) -> Result<Self, GeometryError> {
        if !(half_w > T::zero() && half_h > T::zero()) {
            return Err(GeometryError::InvalidParameter("box half-widths must be positive".into()));
        }
        let psi: ScalarFn<T> = Arc::new(move |x| {
            let u = (x[0] - center[0]) / half_w;
            let v = (x[1] - center[1]) / half_h;
            u.powi(8) + v.powi(8) - T::one()
        });
        let eight = T::lit(8.0);
        let grad: VectorFn<T> = Arc::new(move |x| {
            let u = (x[0] - center[0]) / half_w;
            let v = (x[1] - center[1]) / half_h;
            [eight * u.powi(7) / half_w, eight * v.powi(7) / half_h]
        });
        let bbox = BoundingBox::new(
            [center[0] - half_w, center[1] - half_h],
            [center[0] + half_w, center[1] + half_h],
        )
        .padded(T::lit(0.1), 2);
        Self::new("rounded_box", psi, grad, 2, bbox)
    }

    /// One-dimensional interval `[lo, hi]`, defined by `(x - m)^2 - r^2`.
    pub fn interval(lo: T, hi: T) -> Result<Self, GeometryError> {
        if !(hi > lo) {
            return Err(GeometryError::InvalidParameter("interval must have lo < hi".into()));
        }
        let m = (lo + hi) * T::half();
        let r = (hi - lo) * T::half();
        let psi: ScalarFn<T> = Arc::new(move |x| (x[0] - m) * (x[0] - m) - r * r);
        let grad: VectorFn<T> = Arc::new(move |x| [T::two() * (x[0] - m), T::zero()]);
        let bbox = BoundingBox::new([lo, T::zero()], [hi, T::zero()]).padded(T::lit(0.1), 1);
        Ok(Self::new("interval", psi, grad, 1, bbox)?.with_diameter(hi - lo))
    }

    /// Same closed set with defining function `factor * psi`.
    pub fn rescaled(&self, factor: T) -> Result<Self, GeometryError> {
        if !(factor > T::zero()) {
            return Err(GeometryError::InvalidParameter("rescaling factor must be positive".into()));
        }
        let psi = self.psi.clone();
        let grad = self.grad_psi.clone();
        Self::new(
            self.label.clone(),
            Arc::new(move |x| factor * psi(x)),
            Arc::new(move |x| point::scale(grad(x), factor)),
            self.dim,
            self.bbox,
        )
        .map(|d| d.with_diameter(self.diameter))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn psi(&self, x: Point<T>) -> T {
        (self.psi)(x)
    }

    #[inline]
    pub fn grad_psi(&self, x: Point<T>) -> Point<T> {
        (self.grad_psi)(x)
    }

    pub fn bounding_box(&self) -> BoundingBox<T> {
        self.bbox
    }

    /// Tolerance classifying `|psi| <= tol` as boundary.
    #[inline]
    pub fn boundary_tol(&self) -> T {
        self.boundary_tol
    }

    pub fn band(&self) -> T {
        self.band
    }

    /// Sampled lower bound of `|grad psi|` near the boundary.
    #[inline]
    pub fn rho0(&self) -> T {
        self.rho0
    }

    #[inline]
    pub fn diameter(&self) -> T {
        self.diameter
    }

    /// Deepest sampled interior point.
    pub fn anchor(&self) -> Point<T> {
        self.anchor
    }

    #[inline]
    pub fn in_closure(&self, x: Point<T>) -> bool {
        self.psi(x) <= self.boundary_tol
    }

    #[inline]
    pub fn on_boundary(&self, x: Point<T>) -> bool {
        self.psi(x).abs() <= self.boundary_tol
    }

    pub fn set_boundary_tol(&mut self, tol: T) {
        self.boundary_tol = tol;
    }

    /// Outer unit normal at a boundary point.
    pub fn outward_normal(&self, x: Point<T>) -> Result<Point<T>, GeometryError> {
        let v = self.psi(x);
        if v.abs() > self.boundary_tol {
            return Err(GeometryError::NotOnBoundary { x: to_f64(x), psi: v.as_f64() });
        }
        let g = self.grad_psi(x);
        let n = point::norm(g);
        if n < self.rho0 * T::lit(0.5) || n <= T::zero() {
            return Err(GeometryError::DegenerateGradient { x: to_f64(x), norm: n.as_f64() });
        }
        Ok(point::scale(g, T::one() / n))
    }

    /// `grad psi / |grad psi|` at any point; no boundary check.
    #[inline]
    pub fn normal_at(&self, x: Point<T>) -> Option<Point<T>> {
        let g = self.grad_psi(x);
        let g = if self.dim == 1 { [g[0], T::zero()] } else { g };
        point::unit(g)
    }

    /// `min(max(psi(x), 0), cap)`.
    pub fn penalty_q(&self, cap: T, x: Point<T>) -> T {
        self.psi(x).max(T::zero()).min(cap)
    }

    /// Nearest-ish point of the closure reached by damped Newton steps
    /// along `-grad psi`. Points of the closure are returned unchanged and
    /// the result always satisfies `psi <= 0`.
    pub fn project_to_closure(&self, x: Point<T>) -> Result<Point<T>, GeometryError> {
        let v0 = self.psi(x);
        if v0 <= T::zero() {
            return Ok(x);
        }
        let target = T::lit(0.1) * self.boundary_tol;
        let mut y = x;
        let mut v = v0;
        for _ in 0..100 {
            if v.abs() <= target {
                break;
            }
            let g = self.grad_psi(y);
            let g2 = point::dot(g, g);
            if !(g2 > T::zero()) {
                return Err(GeometryError::ProjectionDiverged { x: to_f64(x) });
            }
            let step = point::scale(g, v / g2);
            let mut lambda = T::one();
            let mut accepted = false;
            for _ in 0..30 {
                let cand = point::sub(y, point::scale(step, lambda));
                let cv = self.psi(cand);
                if cv.abs() < v.abs() {
                    y = cand;
                    v = cv;
                    accepted = true;
                    break;
                }
                lambda = lambda * T::half();
            }
            if !accepted {
                return Err(GeometryError::ProjectionDiverged { x: to_f64(x) });
            }
        }
        if v.abs() > self.boundary_tol {
            return Err(GeometryError::ProjectionDiverged { x: to_f64(x) });
        }
        // land on the closed side so that projecting again is the identity
        let mut tries = 0;
        while v > T::zero() {
            let g = self.grad_psi(y);
            let g2 = point::dot(g, g);
            let shift = v + T::half() * self.boundary_tol;
            y = point::sub(y, point::scale(g, shift / g2));
            v = self.psi(y);
            tries += 1;
            if tries > 20 {
                return Err(GeometryError::ProjectionDiverged { x: to_f64(x) });
            }
        }
        Ok(y)
    }

    /// Boundary point on the segment from `inside` (psi <= 0) to `outside`
    /// (psi > 0), found by bisection.
    pub fn segment_crossing(&self, inside: Point<T>, outside: Point<T>) -> Point<T> {
        let (mut a, mut b) = (inside, outside);
        for _ in 0..200 {
            let m = point::scale(point::add(a, b), T::half());
            if self.psi(m) <= T::zero() {
                a = m;
            } else {
                b = m;
            }
            if point::dist(a, b) <= T::epsilon() * self.diameter {
                break;
            }
        }
        a
    }

    /// Whether the straight segment stays in the closure (sampled).
    pub fn segment_in_closure(&self, a: Point<T>, b: Point<T>, samples: usize) -> bool {
        let n = T::from_usize_lossy(samples + 1);
        (1..=samples).all(|k| {
            let s = T::from_usize_lossy(k) / n;
            self.in_closure(point::add(a, point::scale(point::sub(b, a), s)))
        })
    }

    /// Points of the closure: lattice samples with `psi <= 0` at resolution
    /// `res` together with boundary samples.
    pub fn closure_samples(&self, res: usize) -> Vec<Point<T>> {
        let mut out: Vec<Point<T>> = self
            .sample_points(res.max(2))
            .into_iter()
            .filter(|&p| self.psi(p) <= T::zero())
            .collect();
        out.extend(self.boundary_samples(4 * res));
        out
    }

    /// `n` boundary points found along rays from the anchor (star-shaped
    /// sampling); in one dimension the two endpoints.
    pub fn boundary_samples(&self, n: usize) -> Vec<Point<T>> {
        let dirs: Vec<Point<T>> = if self.dim == 1 {
            vec![[T::one(), T::zero()], [-T::one(), T::zero()]]
        } else {
            (0..n.max(1))
                .map(|k| {
                    let a = T::two() * T::PI() * T::from_usize_lossy(k) / T::from_usize_lossy(n.max(1));
                    [a.cos(), a.sin()]
                })
                .collect()
        };
        let reach = {
            let d = point::sub(self.bbox.hi, self.bbox.lo);
            point::norm(d)
        };
        let mut out = Vec::with_capacity(dirs.len());
        for e in dirs {
            // march outward until exterior, then bisect
            let steps = 512;
            let mut prev = self.anchor;
            for k in 1..=steps {
                let s = reach * T::from_usize_lossy(k) / T::from_usize_lossy(steps);
                let p = point::axpy(self.anchor, s, e);
                if self.psi(p) > T::zero() {
                    out.push(self.segment_crossing(prev, p));
                    break;
                }
                prev = p;
            }
        }
        out
    }
}

/// Reflection direction `gamma` and Neumann data `g`.
#[derive(Clone)]
pub struct ObliqueField<T: Real> {
    gamma: VectorFn<T>,
    g: ScalarFn<T>,
    /// Obliqueness margin `inf nu.gamma` over sampled boundary points.
    pub delta0: T,
    /// Sampled `sup |gamma|` on the boundary.
    pub gamma_sup: T,
    /// Sampled `sup |g|` on the boundary.
    pub g_sup: T,
}

impl<T: Real> fmt::Debug for ObliqueField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObliqueField")
            .field("delta0", &self.delta0)
            .field("gamma_sup", &self.gamma_sup)
            .field("g_sup", &self.g_sup)
            .finish()
    }
}

/// Result of sampling `nu.gamma` over the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliquenessReport<T> {
    pub margin: T,
    pub witness: Point<T>,
    pub gamma_sup: T,
    pub g_sup: T,
    pub samples: usize,
}

const OBLIQUE_SAMPLES: usize = 256;

impl<T: Real> ObliqueField<T> {
    /// Builds a field from callables and validates obliqueness on `domain`.
    pub fn new(domain: &ImplicitDomain<T>, gamma: VectorFn<T>, g: ScalarFn<T>) -> Result<Self, GeometryError> {
        let mut f = Self { gamma, g, delta0: T::zero(), gamma_sup: T::zero(), g_sup: T::zero() };
        let rep = validate_obliqueness(domain, &f, OBLIQUE_SAMPLES)?;
        f.delta0 = rep.margin;
        f.gamma_sup = rep.gamma_sup;
        f.g_sup = rep.g_sup;
        Ok(f)
    }

    /// The outward normal rotated by `theta` radians, `|theta| < pi/2`.
    pub fn rotated_normal(domain: &ImplicitDomain<T>, theta: T, g: ScalarFn<T>) -> Result<Self, GeometryError> {
        if !(theta.abs() < T::FRAC_PI_2()) {
            return Err(GeometryError::ObliquenessViolated { witness: [f64::NAN; 2], margin: theta.cos().as_f64() });
        }
        if domain.dim() == 1 && theta != T::zero() {
            return Err(GeometryError::InvalidParameter("rotation angle must be 0 in one dimension".into()));
        }
        Self::new(domain, Self::rotated_gamma(domain, theta), g)
    }

    /// The rotated normal as a raw vector field, without validation.
    pub fn rotated_gamma(domain: &ImplicitDomain<T>, theta: T) -> VectorFn<T> {
        let grad = domain.grad_psi.clone();
        let dim = domain.dim();
        Arc::new(move |x| {
            let mut gr = grad(x);
            if dim == 1 {
                gr[1] = T::zero();
            }
            match point::unit(gr) {
                Some(n) => point::rotate(n, theta),
                None => point::zero(),
            }
        })
    }

    /// Normal reflection with zero Neumann data.
    pub fn normal(domain: &ImplicitDomain<T>) -> Result<Self, GeometryError> {
        Self::rotated_normal(domain, T::zero(), Arc::new(|_| T::zero()))
    }

    #[inline]
    pub fn gamma(&self, x: Point<T>) -> Point<T> {
        (self.gamma)(x)
    }

    #[inline]
    pub fn g(&self, x: Point<T>) -> T {
        (self.g)(x)
    }

    /// Same direction field with different boundary data.
    pub fn with_data(&self, domain: &ImplicitDomain<T>, g: ScalarFn<T>) -> Result<Self, GeometryError> {
        Self::new(domain, self.gamma.clone(), g)
    }
}

/// Minimum of `nu.gamma` over `samples` boundary points.
pub fn validate_obliqueness<T: Real>(
    domain: &ImplicitDomain<T>,
    field: &ObliqueField<T>,
    samples: usize,
) -> Result<ObliquenessReport<T>, GeometryError> {
    if samples == 0 {
        return Err(GeometryError::InvalidParameter("samples must be at least 1".into()));
    }
    let pts = domain.boundary_samples(samples);
    if pts.is_empty() {
        return Err(GeometryError::InvalidDomain("no boundary points found".into()));
    }
    let mut margin = T::infinity();
    let mut witness = pts[0];
    let mut gamma_sup = T::zero();
    let mut g_sup = T::zero();
    for &b in &pts {
        let nu = domain
            .normal_at(b)
            .ok_or(GeometryError::DegenerateGradient { x: to_f64(b), norm: 0.0 })?;
        let gam = field.gamma(b);
        let m = point::dot(nu, gam);
        if m < margin {
            margin = m;
            witness = b;
        }
        gamma_sup = gamma_sup.max(point::norm(gam));
        g_sup = g_sup.max(field.g(b).abs());
    }
    if !(margin > T::zero()) {
        return Err(GeometryError::ObliquenessViolated { witness: to_f64(witness), margin: margin.as_f64() });
    }
    Ok(ObliquenessReport { margin, witness, gamma_sup, g_sup, samples: pts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_disk() -> ImplicitDomain<f64> {
        ImplicitDomain::disk([0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn normal_on_unit_disk() {
        let d = unit_disk();
        let n = d.outward_normal([1.0, 0.0]).unwrap();
        assert!((n[0] - 1.0).abs() < 1e-14 && n[1].abs() < 1e-14);
        let n = d.outward_normal([0.0, -1.0]).unwrap();
        assert!(n[0].abs() < 1e-14 && (n[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn normal_on_rounded_box_matches_finite_differences() {
        let d = ImplicitDomain::rounded_box([0.0, 0.0], 1.0, 1.0).unwrap();
        let x = [1.0, 0.0];
        let n = d.outward_normal(x).unwrap();
        let e = 1e-6;
        let fd: [f64; 2] = [
            (d.psi([x[0] + e, x[1]]) - d.psi([x[0] - e, x[1]])) / (2.0 * e),
            (d.psi([x[0], x[1] + e]) - d.psi([x[0], x[1] - e])) / (2.0 * e),
        ];
        let fdn = point::unit(fd).unwrap();
        assert!((n[0] - fdn[0]).abs() < 1e-6 && (n[1] - fdn[1]).abs() < 1e-6);
        assert!((n[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normal_errors() {
        let d = unit_disk();
        assert!(matches!(d.outward_normal([0.5, 0.0]), Err(GeometryError::NotOnBoundary { .. })));
    }

    #[test]
    fn penalty_cap() {
        let d = unit_disk();
        assert_eq!(d.penalty_q(0.1, [0.2, 0.1]), 0.0);
        // psi = 0.3 at |x|^2 = 1.3
        let x = [1.3f64.sqrt(), 0.0];
        assert!((d.penalty_q(0.1, x) - 0.1).abs() < 1e-15);
        let x = [1.05f64.sqrt(), 0.0];
        assert!((d.penalty_q(0.1, x) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let d = unit_disk();
        assert_eq!(d.project_to_closure([0.3, -0.2]).unwrap(), [0.3, -0.2]);
        let y = d.project_to_closure([2.0, 0.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6 && y[1].abs() < 1e-12);
        let x = [1.5, 1.5];
        let y = d.project_to_closure(x).unwrap();
        let r = point::norm(x);
        assert!((y[0] - x[0] / r).abs() < 1e-5 && (y[1] - x[1] / r).abs() < 1e-5);
        assert!(d.psi(y) <= 0.0);
    }

    #[test]
    fn obliqueness_margins() {
        let d = unit_disk();
        let zero: ScalarFn<f64> = Arc::new(|_| 0.0);
        let f = ObliqueField::rotated_normal(&d, 0.0, zero.clone()).unwrap();
        assert!((f.delta0 - 1.0).abs() < 1e-12);
        let f = ObliqueField::rotated_normal(&d, 60f64.to_radians(), zero.clone()).unwrap();
        assert!((f.delta0 - 0.5).abs() < 1e-6);
        let gamma = ObliqueField::rotated_gamma(&d, 95f64.to_radians());
        let err = ObliqueField::new(&d, gamma, zero).unwrap_err();
        assert!(matches!(err, GeometryError::ObliquenessViolated { .. }));
    }

    #[test]
    fn domain_validation_rejects_bad_inputs() {
        // box too small to contain the domain
        let psi: ScalarFn<f64> = Arc::new(|x| x[0] * x[0] + x[1] * x[1] - 1.0);
        let grad: VectorFn<f64> = Arc::new(|x| [2.0 * x[0], 2.0 * x[1]]);
        let bb = BoundingBox::new([-0.5, -0.5], [0.5, 0.5]);
        assert!(ImplicitDomain::new("clipped", psi.clone(), grad.clone(), 2, bb).is_err());
        // two disjoint disks
        let psi2: ScalarFn<f64> = Arc::new(|x| {
            let a = (x[0] - 1.0).powi(2) + x[1] * x[1] - 0.25;
            let b = (x[0] + 1.0).powi(2) + x[1] * x[1] - 0.25;
            a.min(b)
        });
        let bb = BoundingBox::new([-2.0, -1.0], [2.0, 1.0]);
        let err = ImplicitDomain::new("two", psi2, grad, 2, bb).unwrap_err();
        assert!(matches!(err, GeometryError::InvalidDomain(_)));
    }

    #[test]
    fn interval_domain() {
        let d = ImplicitDomain::<f64>::interval(-1.0, 1.0).unwrap();
        assert_eq!(d.dim(), 1);
        let n = d.outward_normal([1.0, 0.0]).unwrap();
        assert_eq!(n, [1.0, 0.0]);
        let n = d.outward_normal([-1.0, 0.0]).unwrap();
        assert_eq!(n, [-1.0, 0.0]);
        let b = d.boundary_samples(4);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn works_in_single_precision() {
        let d = ImplicitDomain::<f32>::disk([0.0, 0.0], 1.0).unwrap();
        let y = d.project_to_closure([2.0, 0.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-5);
    }
}
