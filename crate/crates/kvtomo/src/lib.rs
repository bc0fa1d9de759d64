//! Regularization by projected gradient and SQP Newton methods for
//! all-at-once and reduced formulations of impedance-acoustic tomography,
//! electrical impedance tomography and a gradient-field recovery problem,
//! discretized with P2 finite elements and the complete electrode model.

pub mod base;
pub mod conditions;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod functionals;
pub mod solvers;

pub use base::{noise_budget, Bounds, CellField, ConstraintSet, ElectrodeLayout, Excitations, NodalField, State, VectorQuadField};
pub use error::{Error, Result};
