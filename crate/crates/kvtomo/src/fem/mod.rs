//! P2 finite elements on triangles and the complete electrode model.

pub mod cem;
pub mod mesh;
pub mod quadrature;
pub mod space;
pub mod sparse;

pub use cem::{power_density, stream_potential, CemOperator, CemSolution, CemSystem};
pub use mesh::{build_disk_mesh, square_mesh, BoundaryEdge, Mesh, SegmentTag};
pub use space::FemSpace;
