//! Convex coercive Hamiltonians, their Legendre transforms and the a priori
//! constants derived from them.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{ImplicitDomain, ScalarFn};
use crate::point::{self, Point};
use crate::scalar::Real;

/// A real number or `+infinity`. Lagrangians may be infinite; the
/// infinite value is never compared arithmetically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> Extended<T> {
    #[inline]
    pub fn finite(self) -> Option<T> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    /// Minimum with the infinite value absorbing nothing.
    #[inline]
    pub fn min(self, other: Self) -> Self {
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a.min(b)),
            (Extended::Finite(a), Extended::Infinite) | (Extended::Infinite, Extended::Finite(a)) => {
                Extended::Finite(a)
            }
            _ => Extended::Infinite,
        }
    }

    #[inline]
    pub fn add(self, c: T) -> Self {
        match self {
            Extended::Finite(a) => Extended::Finite(a + c),
            Extended::Infinite => Extended::Infinite,
        }
    }
}

pub type HamFn<T> = Arc<dyn Fn(Point<T>, Point<T>) -> T + Send + Sync>;
pub type LagFn<T> = Arc<dyn Fn(Point<T>, Point<T>) -> Extended<T> + Send + Sync>;
pub type MatrixFn<T> = Arc<dyn Fn(Point<T>) -> [[T; 2]; 2] + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HamiltonianError {
    #[error("midpoint convexity fails at x = ({}, {}) with defect {defect:e}", x[0], x[1])]
    NotConvex { x: [f64; 2], defect: f64 },
    #[error("H(x, R e) does not grow as R doubles (direction ({}, {}))", dir[0], dir[1])]
    NotCoercive { dir: [f64; 2] },
    #[error("model dimension {model} does not match domain dimension {domain}")]
    DimensionMismatch { model: usize, domain: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Kinetic,
    Mechanical,
    Eikonal,
    Anisotropic,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Kinetic => "kinetic",
            Family::Mechanical => "mechanical",
            Family::Eikonal => "eikonal",
            Family::Anisotropic => "anisotropic",
            Family::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Discretization of the momentum ball used by the numerical transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreConfig {
    pub n_angle: usize,
    pub n_radius: usize,
    pub refine_steps: usize,
    pub max_doublings: usize,
}

impl Default for LegendreConfig {
    fn default() -> Self {
        Self { n_angle: 64, n_radius: 64, refine_steps: 20, max_doublings: 12 }
    }
}

/// `H(x, p) - a` together with its Lagrangian.
#[derive(Clone)]
pub struct HamiltonianModel<T: Real> {
    h: HamFn<T>,
    analytic_l: Option<LagFn<T>>,
    p_radius_hint: T,
    shift: T,
    dim: usize,
    family: Family,
    legendre: LegendreConfig,
}

impl<T: Real> fmt::Debug for HamiltonianModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianModel")
            .field("family", &self.family)
            .field("dim", &self.dim)
            .field("shift", &self.shift)
            .field("analytic_l", &self.analytic_l.is_some())
            .finish()
    }
}

fn check_dim(dim: usize) -> Result<(), HamiltonianError> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(HamiltonianError::InvalidParameter(format!("dimension {dim} not in {{1, 2}}")))
    }
}

#[inline]
fn sq<T: Real>(p: Point<T>) -> T {
    point::dot(p, p)
}

impl<T: Real> HamiltonianModel<T> {
    /// Arbitrary convex coercive `H`, optionally with its exact Lagrangian.
    pub fn custom(dim: usize, h: HamFn<T>, analytic_l: Option<LagFn<T>>) -> Result<Self, HamiltonianError> {
        check_dim(dim)?;
        Ok(Self {
            h,
            analytic_l,
            p_radius_hint: T::one(),
            shift: T::zero(),
            dim,
            family: Family::Custom,
            legendre: LegendreConfig::default(),
        })
    }

    /// `H = |p|^2 / 2`.
    pub fn kinetic(dim: usize) -> Result<Self, HamiltonianError> {
        let mut m = Self::custom(
            dim,
            Arc::new(|_, p| T::half() * sq(p)),
            Some(Arc::new(|_, xi| Extended::Finite(T::half() * sq(xi)))),
        )?;
        m.family = Family::Kinetic;
        Ok(m)
    }

    /// `H = |p|^2 / 2 - V(x)`.
    pub fn mechanical(dim: usize, potential: ScalarFn<T>) -> Result<Self, HamiltonianError> {
        let v1 = potential.clone();
        let v2 = potential;
        let mut m = Self::custom(
            dim,
            Arc::new(move |x, p| T::half() * sq(p) - v1(x)),
            Some(Arc::new(move |x, xi| Extended::Finite(T::half() * sq(xi) + v2(x)))),
        )?;
        m.family = Family::Mechanical;
        Ok(m)
    }

    /// `H = |p| - f(x)`; the Lagrangian is `f(x)` on the unit ball and
    /// infinite outside.
    pub fn eikonal(dim: usize, f: ScalarFn<T>) -> Result<Self, HamiltonianError> {
        let f1 = f.clone();
        let f2 = f;
        let mut m = Self::custom(
            dim,
            Arc::new(move |x, p| point::norm(p) - f1(x)),
            Some(Arc::new(move |x, xi| {
                if point::norm(xi) <= T::one() + T::lit(1e-12) {
                    Extended::Finite(f2(x))
                } else {
                    Extended::Infinite
                }
            })),
        )?;
        m.family = Family::Eikonal;
        Ok(m)
    }

    /// `H = <M(x) p, p> / 2` with `M` symmetric positive definite.
    pub fn anisotropic(dim: usize, metric: MatrixFn<T>) -> Result<Self, HamiltonianError> {
        let m1 = metric.clone();
        let m2 = metric;
        let mut m = Self::custom(
            dim,
            Arc::new(move |x, p| {
                let a = m1(x);
                let mp = [a[0][0] * p[0] + a[0][1] * p[1], a[1][0] * p[0] + a[1][1] * p[1]];
                T::half() * point::dot(mp, p)
            }),
            Some(Arc::new(move |x, xi| {
                let a = m2(x);
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                if dim == 1 {
                    return Extended::Finite(T::half() * xi[0] * xi[0] / a[0][0]);
                }
                let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
                let v = [inv[0][0] * xi[0] + inv[0][1] * xi[1], inv[1][0] * xi[0] + inv[1][1] * xi[1]];
                Extended::Finite(T::half() * point::dot(v, xi))
            })),
        )?;
        m.family = Family::Anisotropic;
        Ok(m)
    }

    /// Same Hamiltonian solved at level `a`, i.e. `H - a`.
    pub fn with_shift(&self, a: T) -> Self {
        let mut m = self.clone();
        m.shift = a;
        m
    }

    /// Drops the analytic Lagrangian so that every evaluation goes through
    /// the numerical transform.
    pub fn without_analytic_lagrangian(&self) -> Self {
        let mut m = self.clone();
        m.analytic_l = None;
        m
    }

    pub fn with_p_radius_hint(mut self, r: T) -> Self {
        self.p_radius_hint = r;
        self
    }

    pub fn with_legendre_config(mut self, cfg: LegendreConfig) -> Self {
        self.legendre = cfg;
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn has_analytic_lagrangian(&self) -> bool {
        self.analytic_l.is_some()
    }

    /// `H(x, p) - a`.
    #[inline]
    pub fn h(&self, x: Point<T>, p: Point<T>) -> T {
        (self.h)(x, self.embed(p)) - self.shift
    }

    #[inline]
    fn embed(&self, p: Point<T>) -> Point<T> {
        if self.dim == 1 {
            [p[0], T::zero()]
        } else {
            p
        }
    }

    /// Fast Lagrangian evaluation: exact when available, otherwise the
    /// numerical transform at a default tolerance.
    #[inline]
    pub fn l(&self, x: Point<T>, xi: Point<T>) -> Extended<T> {
        match &self.analytic_l {
            Some(f) => f(x, self.embed(xi)).add(self.shift),
            None => self.lagrangian(x, xi, T::lit(1e-7)),
        }
    }

    /// `max_{|p| <= m} (xi.p - H(x, p))` on a polar grid followed by
    /// coordinate ascent from the best sample.
    pub fn legendre_truncated(&self, x: Point<T>, xi: Point<T>, m: T) -> T {
        let xi = self.embed(xi);
        let obj = |p: Point<T>| point::dot(xi, p) - self.h(x, p);
        let cfg = self.legendre;
        let mut best_p = point::zero();
        let mut best = obj(best_p);
        let n_ang = if self.dim == 1 { 2 } else { cfg.n_angle };
        for a in 0..n_ang {
            let ang = T::two() * T::PI() * T::from_usize_lossy(a) / T::from_usize_lossy(n_ang);
            let e = if self.dim == 1 {
                [if a == 0 { T::one() } else { -T::one() }, T::zero()]
            } else {
                [ang.cos(), ang.sin()]
            };
            for r in 1..=cfg.n_radius {
                let p = point::scale(e, m * T::from_usize_lossy(r) / T::from_usize_lossy(cfg.n_radius));
                let v = obj(p);
                if v > best {
                    best = v;
                    best_p = p;
                }
            }
        }
        let mut width = m / T::from_usize_lossy(cfg.n_radius);
        let mut ang_width = T::two() * T::PI() / T::from_usize_lossy(n_ang.max(2));
        for _ in 0..cfg.refine_steps {
            // Cartesian coordinates, clamped to the ball chord
            for k in 0..self.dim {
                let other = if self.dim == 2 { best_p[1 - k] } else { T::zero() };
                let half_chord = (m * m - other * other).max(T::zero()).sqrt();
                let lo = (best_p[k] - width).max(-half_chord);
                let hi = (best_p[k] + width).min(half_chord);
                let (s, v) = golden_max(lo, hi, |s| {
                    let mut p = best_p;
                    p[k] = s;
                    obj(p)
                });
                if v > best {
                    best = v;
                    best_p[k] = s;
                }
            }
            // polar coordinates handle the rim of the ball
            if self.dim == 2 {
                let r0 = point::norm(best_p);
                let th0 = best_p[1].atan2(best_p[0]);
                let lo = (r0 - width).max(T::zero());
                let hi = (r0 + width).min(m);
                let (r, v) = golden_max(lo, hi, |r| obj([r * th0.cos(), r * th0.sin()]));
                if v > best {
                    best = v;
                    best_p = [r * th0.cos(), r * th0.sin()];
                }
                let r0 = point::norm(best_p);
                if r0 > T::zero() {
                    let (th, v) = golden_max(th0 - ang_width, th0 + ang_width, |t| obj([r0 * t.cos(), r0 * t.sin()]));
                    if v > best {
                        best = v;
                        best_p = [r0 * th.cos(), r0 * th.sin()];
                    }
                }
            }
            width = width * T::half();
            ang_width = ang_width * T::half();
        }
        best
    }

    /// `sup_p (xi.p - H(x, p))`, which may be infinite.
    ///
    /// Uses the analytic form when present; otherwise doubles the momentum
    /// radius from the hint until two successive truncated values agree to
    /// `tol`, giving up after `max_doublings`.
    pub fn lagrangian(&self, x: Point<T>, xi: Point<T>, tol: T) -> Extended<T> {
        if let Some(f) = &self.analytic_l {
            return f(x, self.embed(xi)).add(self.shift);
        }
        let mut m = self.p_radius_hint.max(T::lit(1e-3));
        let mut prev = self.legendre_truncated(x, xi, m);
        for _ in 0..self.legendre.max_doublings {
            m = m * T::two();
            let cur = self.legendre_truncated(x, xi, m);
            if (cur - prev).abs() < tol {
                return Extended::Finite(cur);
            }
            prev = cur;
        }
        Extended::Infinite
    }

    /// Samples of the closed momentum ball of radius `r` (center, rim and a
    /// polar grid in between).
    pub fn ball_samples(&self, r: T, n_angle: usize, n_radius: usize) -> Vec<Point<T>> {
        let mut out = vec![point::zero()];
        let n_ang = if self.dim == 1 { 2 } else { n_angle };
        for a in 0..n_ang {
            let e = if self.dim == 1 {
                [if a == 0 { T::one() } else { -T::one() }, T::zero()]
            } else {
                let ang = T::two() * T::PI() * T::from_usize_lossy(a) / T::from_usize_lossy(n_ang);
                [ang.cos(), ang.sin()]
            };
            for k in 1..=n_radius {
                out.push(point::scale(e, r * T::from_usize_lossy(k) / T::from_usize_lossy(n_radius)));
            }
        }
        out
    }

    /// `(min H, max H, max |H|)` over sampled closure points and the momentum
    /// ball of radius `r`.
    pub fn extrema(&self, domain: &ImplicitDomain<T>, r: T) -> (T, T, T) {
        let xs = domain.closure_samples(24);
        let ps = self.ball_samples(r, 48, 24);
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for &x in &xs {
            for &p in &ps {
                let v = self.h(x, p);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi, lo.abs().max(hi.abs()))
    }

    /// A priori bound on near-optimal controls against test gradients of
    /// norm at most `r`: `(2 C1 + 1) / r` with `C1 = max |H|` over the closure
    /// times the ball of radius `2r`.
    pub fn control_bound(&self, domain: &ImplicitDomain<T>, r: T) -> T {
        let (_, _, c1) = self.extrema(domain, T::two() * r);
        (T::two() * c1 + T::one()) / r
    }

    /// `C_A = max_x max_{|p| <= A} H(x, p)`, so that
    /// `L(x, xi) >= A |xi| - C_A`.
    pub fn lagrangian_lower_envelope(&self, domain: &ImplicitDomain<T>, a: T) -> T {
        let (_, hi, _) = self.extrema(domain, a);
        hi
    }

    /// Smallest sampled radius `R` such that `H(x, p) > level` whenever
    /// `|p| >= R` (checked on rings up to `8 R`). Subsolutions at `level`
    /// are Lipschitz with this constant.
    pub fn coercivity_radius(&self, domain: &ImplicitDomain<T>, level: T) -> T {
        let xs = domain.closure_samples(16);
        let n_ang = if self.dim == 1 { 2 } else { 48 };
        let ring_min = |r: T| -> T {
            let mut lo = T::infinity();
            for a in 0..n_ang {
                let e = if self.dim == 1 {
                    [if a == 0 { T::one() } else { -T::one() }, T::zero()]
                } else {
                    let ang = T::two() * T::PI() * T::from_usize_lossy(a) / T::from_usize_lossy(n_ang);
                    [ang.cos(), ang.sin()]
                };
                for &x in &xs {
                    lo = lo.min(self.h(x, point::scale(e, r)));
                }
            }
            lo
        };
        let mut r = T::lit(1e-3);
        for _ in 0..60 {
            if ring_min(r) > level {
                // bisect back down between r/2 and r
                let mut lo = r * T::half();
                let mut hi = r;
                for _ in 0..30 {
                    let mid = (lo + hi) * T::half();
                    if ring_min(mid) > level {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return hi;
            }
            r = r * T::two();
        }
        r
    }

    /// Sampled checks of convexity in `p` and coercivity.
    pub fn validate(&self, domain: &ImplicitDomain<T>) -> Result<ModelReport<T>, HamiltonianError> {
        if domain.dim() != self.dim {
            return Err(HamiltonianError::DimensionMismatch { model: self.dim, domain: domain.dim() });
        }
        let xs = domain.closure_samples(8);
        let ps = self.ball_samples(T::lit(4.0) * self.p_radius_hint.max(T::one()), 8, 4);
        let mut worst = T::zero();
        let mut worst_x = xs[0];
        for &x in &xs {
            for (i, &p) in ps.iter().enumerate() {
                for &q in ps.iter().skip(i + 1).step_by(3) {
                    let mid = point::scale(point::add(p, q), T::half());
                    let d = self.h(x, mid) - T::half() * (self.h(x, p) + self.h(x, q));
                    if d > worst {
                        worst = d;
                        worst_x = x;
                    }
                }
            }
        }
        if worst > T::lit(1e-9) {
            return Err(HamiltonianError::NotConvex {
                x: [worst_x[0].as_f64(), worst_x[1].as_f64()],
                defect: worst.as_f64(),
            });
        }
        let n_dir = if self.dim == 1 { 2 } else { 8 };
        for k in 0..n_dir {
            let e: Point<T> = if self.dim == 1 {
                [if k == 0 { T::one() } else { -T::one() }, T::zero()]
            } else {
                let a = T::two() * T::PI() * T::from_usize_lossy(k) / T::from_usize_lossy(n_dir);
                [a.cos(), a.sin()]
            };
            let mut r = self.p_radius_hint.max(T::one());
            let ring = |r: T| xs.iter().map(|&x| self.h(x, point::scale(e, r))).fold(T::infinity(), T::min);
            let mut prev = ring(r);
            for _ in 0..4 {
                r = r * T::two();
                let cur = ring(r);
                if !(cur > prev + T::lit(1e-9) * (T::one() + prev.abs())) {
                    return Err(HamiltonianError::NotCoercive { dir: [e[0].as_f64(), e[1].as_f64()] });
                }
                prev = cur;
            }
        }
        Ok(ModelReport { convexity_defect: worst, samples: xs.len() })
    }
}

/// Outcome of [`HamiltonianModel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport<T> {
    pub convexity_defect: T,
    pub samples: usize,
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_max<T: Real>(lo: T, hi: T, f: impl Fn(T) -> T) -> (T, T) {
    let phi = T::lit(0.618_033_988_749_894_8);
    let (mut a, mut b) = (lo, hi);
    if !(b > a) {
        return (a, f(a));
    }
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..40 {
        if fc > fd {
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
    let mut best = (c, fc);
    for s in [lo, hi, d] {
        let v = f(s);
        if v > best.1 {
            best = (s, v);
        }
    }
    best
}
