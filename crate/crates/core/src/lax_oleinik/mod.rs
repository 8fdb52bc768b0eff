//! Cauchy problem by semi-Lagrangian dynamic programming, and discrete
//! viscosity checks for stationary fields.

pub mod grid;
pub mod scheme;
pub mod viscosity;

pub use grid::{Grid, GridError, GridField, NodeKind, Stencil};
pub use scheme::{
    check_dpp, default_controls, resolve, solve_cauchy, solve_cauchy_with, step, CauchyDiagnostics, ControlSet,
    DppReport, SchemeConfig, SchemeError, SemiLagrangian, TimeField,
};
pub use viscosity::{
    check_subsolution, check_subsolution_with, check_supersolution, check_supersolution_with, comparison_suite,
    default_tolerance, stability_suite, CheckReport, ComparisonReport, StabilityReport, ViscosityError,
    ViscosityOptions,
};
