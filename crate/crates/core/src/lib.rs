//! Immersed (φ-FEM) Poisson solver on level-set domains, dataset generation over
//! random geometries, and a Fourier neural operator surrogate trained on the
//! solver's output.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: level-set, force and boundary-data fields plus their samplers.
//! * [`mesh`]: the Cartesian triangular background mesh, cell/facet classification
//!   and the pixel masks used by the loss.
//! * [`phifem`]: assembly and solution of the stabilized φ-FEM system.
//! * [`tensor`]: a small reverse-mode tape covering exactly what the FNO needs.
//! * [`fno`]: the neural operator and its checkpoint format.
//! * [`training`]: loss, metric, ADAM, plateau scheduler and the epoch loop.
//! * [`dataset`]: end-to-end generation and the on-disk container.
//! * [`hyperelastic`]: the compressible Neo-Hookean constitutive law.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
mod error;
pub mod exec;
pub mod fno;
pub mod geometry;
pub mod hyperelastic;
pub mod linalg;
pub mod mesh;
pub mod phifem;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
pub use mesh::{BackgroundMesh, FieldGrid};
