//! Points and vectors of R^n for n in {1, 2}.
//!
//! One-dimensional problems embed into the plane with a zero second
//! coordinate, so a single fixed-size type serves both dimensions.

use crate::scalar::Real;

pub type Point<T> = [T; 2];

#[inline]
pub fn pt<T: Real>(x: f64, y: f64) -> Point<T> {
    [T::lit(x), T::lit(y)]
}

#[inline]
pub fn add<T: Real>(a: Point<T>, b: Point<T>) -> Point<T> {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub<T: Real>(a: Point<T>, b: Point<T>) -> Point<T> {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale<T: Real>(a: Point<T>, s: T) -> Point<T> {
    [a[0] * s, a[1] * s]
}

/// `a + s * b`
#[inline]
pub fn axpy<T: Real>(a: Point<T>, s: T, b: Point<T>) -> Point<T> {
    [a[0] + s * b[0], a[1] + s * b[1]]
}

#[inline]
pub fn dot<T: Real>(a: Point<T>, b: Point<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm<T: Real>(a: Point<T>) -> T {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist<T: Real>(a: Point<T>, b: Point<T>) -> T {
    norm(sub(a, b))
}

#[inline]
pub fn neg<T: Real>(a: Point<T>) -> Point<T> {
    [-a[0], -a[1]]
}

/// Counter-clockwise rotation by `angle` radians.
#[inline]
pub fn rotate<T: Real>(a: Point<T>, angle: T) -> Point<T> {
    let (s, c) = angle.sin_cos();
    [c * a[0] - s * a[1], s * a[0] + c * a[1]]
}

/// Unit vector along `a`, or `None` for a (numerically) zero vector.
#[inline]
pub fn unit<T: Real>(a: Point<T>) -> Option<Point<T>> {
    let n = norm(a);
    if n > T::min_positive_value() {
        Some(scale(a, T::one() / n))
    } else {
        None
    }
}

/// Rotation of `a` by +90 degrees.
#[inline]
pub fn perp<T: Real>(a: Point<T>) -> Point<T> {
    [-a[1], a[0]]
}

#[inline]
pub fn zero<T: Real>() -> Point<T> {
    [T::zero(), T::zero()]
}
