//! Aggregated unfitted finite elements for two-phase interface problems on
//! 2:1-balanced quadtree meshes.

pub mod aggregation;
pub mod assembly;
pub mod bench;
pub mod cutgeom;
pub mod driver;
pub mod fespace;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
