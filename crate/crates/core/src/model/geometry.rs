use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular coverage of a circular scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    FullScan,
    ShortScan,
}

/// Circular-orbit cone-beam acquisition with a flat detector.
///
/// Coordinates: the volume is fixed and centered on the rotation axis (z).
/// At view angle `theta` the source sits at `-sod * (cos theta, sin theta, 0)`
/// and the detector center at `(sdd - sod) * (cos theta, sin theta, 0)`.
/// Detector columns run along `(-sin theta, cos theta, 0)` and rows along +z,
/// both centered on the principal ray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeBeamGeometry {
    /// Source to rotation axis (mm).
    pub sod: f64,
    /// Source to detector (mm).
    pub sdd: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    /// Detector pixel pitch (mm), square pixels.
    pub pixel_pitch: f64,
    /// Volume size as (nx, ny, nz).
    pub vol_dims: [usize; 3],
    /// Isotropic voxel edge (mm).
    pub voxel_size: f64,
    /// View angles in radians, strictly increasing.
    pub angles: Vec<f64>,
    pub scan_mode: ScanMode,
}

// Slack for comparing angular spans built from floating point steps.
const SPAN_EPS: f64 = 1e-9;

impl ConeBeamGeometry {
    /// Full fan angle subtended by the detector width at the source.
    pub fn fan_angle(&self) -> f64 {
        fan_angle(self.det_cols, self.pixel_pitch, self.sdd)
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    /// Number of measurements (views x rows x cols).
    pub fn n_measurements(&self) -> usize {
        self.angles.len() * self.det_rows * self.det_cols
    }

    /// Number of voxels.
    pub fn n_voxels(&self) -> usize {
        self.vol_dims.iter().product()
    }

    /// Angular range covered by the stored views.
    pub fn span(&self) -> f64 {
        match (self.angles.first(), self.angles.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Volume edge length that matches the detector footprint at the
    /// rotation axis, split over `nx` voxels.
    pub fn magnified_voxel_size(det_cols: usize, pixel_pitch: f64, sod: f64, sdd: f64, nx: usize) -> f64 {
        det_cols as f64 * pixel_pitch * sod / sdd / nx as f64
    }

    /// Same acquisition with a different set of views.
    pub fn with_angles(&self, angles: Vec<f64>) -> Self {
        ConeBeamGeometry { angles, ..self.clone() }
    }

    /// Keep every `step`-th view, starting with the first.
    pub fn subsample_views(&self, step: usize) -> Self {
        let step = step.max(1);
        self.with_angles(self.angles.iter().copied().step_by(step).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Geometry(msg));
        if !(self.sod.is_finite() && self.sod > 0.0) {
            return fail(format!("sod must be positive, got {}", self.sod));
        }
        if !(self.sdd.is_finite() && self.sdd > self.sod) {
            return fail(format!("sdd must exceed sod (sdd = {}, sod = {})", self.sdd, self.sod));
        }
        if !(self.pixel_pitch.is_finite() && self.pixel_pitch > 0.0) {
            return fail(format!("pixel_pitch must be positive, got {}", self.pixel_pitch));
        }
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return fail(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        if self.det_rows == 0 || self.det_cols == 0 {
            return fail("detector must have at least one row and column".into());
        }
        if self.vol_dims.iter().any(|&n| n == 0) {
            return fail(format!("volume dims must be nonzero, got {:?}", self.vol_dims));
        }
        if self.angles.is_empty() {
            return fail("at least one view angle is required".into());
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return fail("view angles must be finite".into());
        }
        if let Some(i) = self.angles.windows(2).position(|w| w[1] <= w[0]) {
            return fail(format!("angles must be strictly increasing (index {} -> {})", i, i + 1));
        }
        let half_diag = 0.5
            * self.voxel_size
            * ((self.vol_dims[0] as f64).powi(2) + (self.vol_dims[1] as f64).powi(2)).sqrt();
        if half_diag >= self.sod {
            return fail(format!(
                "volume (half diagonal {half_diag:.3} mm) must lie inside the source orbit (sod = {})",
                self.sod
            ));
        }
        let span = self.span();
        match self.scan_mode {
            ScanMode::ShortScan => {
                let needed = PI + self.fan_angle();
                if span + SPAN_EPS < needed {
                    return fail(format!(
                        "short scan spans {:.4} deg but needs at least 180 deg + fan angle = {:.4} deg",
                        span.to_degrees(),
                        needed.to_degrees()
                    ));
                }
            }
            ScanMode::FullScan => {
                if span > 2.0 * PI + SPAN_EPS {
                    return fail(format!("full scan spans {:.4} deg, more than 360 deg", span.to_degrees()));
                }
            }
        }
        Ok(())
    }
}

pub fn fan_angle(det_cols: usize, pixel_pitch: f64, sdd: f64) -> f64 {
    2.0 * (det_cols as f64 * pixel_pitch / (2.0 * sdd)).atan()
}

/// `n` equally spaced angles over a full turn, `[start, start + 2pi)`.
pub fn full_scan_angles(n: usize, start: f64) -> Vec<f64> {
    let step = 2.0 * PI / n as f64;
    (0..n).map(|i| start + step * i as f64).collect()
}

/// `n` equally spaced angles covering `[start, start + span]` inclusive.
pub fn short_scan_angles(n: usize, span: f64, start: f64) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = span / (n - 1) as f64;
    (0..n).map(|i| start + step * i as f64).collect()
}
