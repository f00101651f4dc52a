//! Numerical symmetric spaces.
//!
//! Models are embedded manifolds given by a membership residual and an
//! atlas. A symmetric space adds an ambient multiplication `μ`, from which
//! the canonical connection, its curvature and the Lie triple system at the
//! base point are computed by finite differences. The `cah` module integrates
//! curvature-intertwining tangent maps to affine maps and morphisms.

pub mod cah;
pub mod connection;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod numjet;
pub mod ode;
pub mod sampling;
pub mod symspace;
pub mod zoo;

pub use connection::{CartanState, CoefficientField, ConnectionModel, CurveLift, PerturbedField, ZeroField};
pub use error::{GeomError, Result};
pub use manifold::{Chart, ChartedModel, ModelId, Point, TangentVector};
pub use numjet::{Jet, Multilinear, SmoothMap, Vector};
pub use symspace::{AxiomReport, LieTripleSystem, SymmetricSpaceModel};
pub use zoo::ModelSpec;
