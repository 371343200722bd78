//! Cone-beam CT reconstruction with plug-and-play priors.
//!
//! The main entry points are [`pipeline::run_reconstruction`] (adaptive
//! regularization weight) and [`pipeline::run_fixed_beta`]. The building
//! blocks are public as well: the matched projector pair, FDK, the CG
//! solver, priors, quality metrics, the weight search and a phantom
//! simulator.

pub mod cgsolver;
pub mod error;
pub mod fdk;
pub mod linalg;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod prior;
pub mod projector;
pub mod quality;
pub mod regsel;

pub use error::{Error, ErrorKind, Result, Stage};
pub use model::{ConeBeamGeometry, ProjectionSet, ReconParams, RegSelParams, ScanMode, Slice, Volume};
