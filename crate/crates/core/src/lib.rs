//! Weak KAM theory for convex Hamilton-Jacobi equations with oblique
//! Neumann boundary conditions, on implicit domains in one or two
//! dimensions.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases at the crate root fix it to `f64`.

pub mod extremals;
pub mod geometry;
pub mod hamiltonian;
pub mod lax_oleinik;
pub mod point;
pub mod scalar;
pub mod skorokhod;
pub mod weak_kam;

pub use point::Point;
pub use scalar::Real;

pub type Domain = geometry::ImplicitDomain<f64>;
pub type Field = geometry::ObliqueField<f64>;
pub type Model = hamiltonian::HamiltonianModel<f64>;
pub type Grid = lax_oleinik::Grid<f64>;
pub type GridField = lax_oleinik::GridField<f64>;
