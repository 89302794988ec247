//! Multiscale discontinuous Galerkin methods for the one-dimensional
//! stationary Schrödinger equation
//!
//! ```text
//! -eps^2 u'' - f(x) u = 0  on [a, b],
//! eps u'(a) + i sqrt(f(a)) u(a) = 2 i sqrt(f(a)),   eps u'(b) - i sqrt(f(b)) u(b) = 0,
//! ```
//!
//! written in mixed form `q = eps u'`, `-eps q' - f u = 0` and discretized with
//! plane-wave enriched local spaces (`E^p`, `T^{2p-1}`) or polynomials, coupled
//! through penalized alternating traces.

pub mod assembly;
pub mod basis;
pub mod coefficient;
pub mod error;
pub mod harness;
pub mod linsolve;
pub mod mesh;
pub mod quadrature;
pub mod solution;
pub mod trace;

pub use assembly::{assemble_global, matrix_stats, GlobalSystem, MatrixStats, SolveConfig};
pub use basis::{ElementBasis, Family, QuadratureOptions, QuadratureRule, SpaceKind};
pub use coefficient::Coefficient;
pub use error::{Error, Result};
pub use linsolve::{condition_estimate, solve, CondMethod, ConditionReport};
pub use mesh::MeshPartition;
pub use solution::{DGSolution, ReferenceSolution};
pub use trace::{TraceParams, TraceValues};
