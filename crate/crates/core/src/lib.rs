//! Trivariate free-form deformation of triangle face meshes.
//!
//! A reference mesh is embedded once in a uniform control lattice
//! ([`lattice::parameterize`]), which fixes a sparse coefficient matrix tying
//! every vertex to the control points. Displacing control points then
//! deforms the mesh by one sparse product. On top of that sit weighted
//! vertex/landmark losses and direct least-squares fitting of displacements
//! and a scaled orthographic pose ([`fitting`]), landmark NME evaluation
//! ([`evaluation`]) and the JSON artifacts used by the `ffd` command and the
//! editor bundle ([`formats`]).

pub mod basis;
pub mod commands;
pub mod evaluation;
pub mod fitting;
pub mod formats;
pub mod landmarks;
pub mod lattice;
pub mod mesh;
pub mod projection;
pub mod sample;
pub mod solve;

pub use basis::{BasisKind, KnotVector, TensorBasis};
pub use fitting::{FitConfig, FitTarget, LossReport, LossWeights};
pub use landmarks::{LandmarkScheme, Region};
pub use lattice::{build_lattice, parameterize, ControlGrid, DeformationField, ParameterizedMesh};
pub use mesh::{load_mesh, save_mesh, Mesh};
pub use projection::Pose;
