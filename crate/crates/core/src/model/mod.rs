//! Acquisition geometry, image containers, run parameters and file I/O.

mod data;
mod geometry;
pub mod io;
mod params;

pub use data::{ProjectionSet, Slice, Volume};
pub use geometry::{fan_angle, full_scan_angles, short_scan_angles, ConeBeamGeometry, ScanMode};
pub(crate) use params::check_center_rows;
pub use params::{ReconParams, RegSelParams, ScoredSlices, WarmStart};
