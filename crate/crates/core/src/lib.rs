//! Finite element assembly for scalar PDEs on triangle meshes, written as
//! batched products `V = Q·X` over all elements at once, plus the tensors,
//! boundary terms and Newton–GMRES machinery for nonlinear transient heat
//! conduction.

pub mod assembly;
pub mod basis;
pub mod bench;
pub mod boundary;
pub mod error;
pub mod gmres;
pub mod gmsh;
pub mod heat;
pub mod mesh;
pub mod quadrature;
pub mod scenario;
pub mod sparse;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
