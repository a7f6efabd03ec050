//! Solvers and estimators for divergence-form Dirichlet problems on
//! bounded open sets with irregular boundaries.

pub mod coefficients;
pub mod diffusion;
pub mod expr;
pub mod fem;
pub mod geometry;
pub mod harmonic;
pub mod scenario;
pub mod semilinear;
pub mod trace;

pub use coefficients::{CoefficientField, CoefficientSpec};
pub use expr::{Bindings, ExprParser, Expression, Var};
pub use geometry::{BoundaryPoint, Domain, Point, ShapeSpec, Side};
pub use diffusion::{ExitRecord, Scheme, SimConfig, Trackers};
pub use fem::{DiscreteField, FemSystem, Mesh};
