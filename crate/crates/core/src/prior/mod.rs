//! The artifact-removal operator applied between data-fit updates.
//!
//! Every prior works on axial slices after mapping a fixed attenuation
//! window `[lo, hi]` onto `[0, 1]`, and maps the result back afterwards.

mod filters;
pub mod plugin;
mod tv;

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Slice, Volume};

pub use filters::{gaussian_kernel, gaussian_smooth, median_filter};
pub(crate) use filters::reflect;
pub use tv::tv_prox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    Identity,
    /// `sigma` in voxels.
    GaussianSmooth { sigma: f64 },
    TvProx { weight: f64, inner_iters: usize },
    /// `radius` in voxels.
    Median { radius: usize },
    /// External process; `command[0]` is the program.
    Plugin {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(flatten)]
    pub kind: PriorKind,
    /// Attenuation window mapped to `[0, 1]`; the pipeline fills it from
    /// the initial reconstruction when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<NormWindow>,
}

impl PriorSpec {
    pub fn new(kind: PriorKind) -> Self {
        PriorSpec { kind, window: None }
    }

    pub fn identity() -> Self {
        Self::new(PriorKind::Identity)
    }

    pub fn with_window(mut self, window: NormWindow) -> Self {
        self.window = Some(window);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match &self.kind {
            PriorKind::Identity => {}
            PriorKind::GaussianSmooth { sigma } if !(sigma.is_finite() && *sigma > 0.0) => {
                return bad(format!("gaussian sigma must be positive, got {sigma}"))
            }
            PriorKind::TvProx { weight, .. } if !(weight.is_finite() && *weight > 0.0) => {
                return bad(format!("tv weight must be positive, got {weight}"))
            }
            PriorKind::Median { radius: 0 } => return bad("median radius must be at least 1".into()),
            PriorKind::Plugin { command, .. } if command.is_empty() => {
                return bad("plugin command is empty".into())
            }
            PriorKind::Plugin { timeout_secs, .. } if !(timeout_secs.is_finite() && *timeout_secs > 0.0) => {
                return bad(format!("plugin timeout must be positive, got {timeout_secs}"))
            }
            _ => {}
        }
        if let Some(w) = &self.window {
            w.validate()?;
        }
        Ok(())
    }
}

/// Affine map of `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct NormWindow {
    pub lo: f64,
    pub hi: f64,
}

impl TryFrom<[f64; 2]> for NormWindow {
    type Error = String;

    fn try_from([lo, hi]: [f64; 2]) -> std::result::Result<Self, String> {
        let w = NormWindow { lo, hi };
        w.validate().map_err(|e| e.to_string())?;
        Ok(w)
    }
}

impl From<NormWindow> for [f64; 2] {
    fn from(w: NormWindow) -> Self {
        [w.lo, w.hi]
    }
}

impl NormWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let w = NormWindow { lo, hi };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidParameter(format!("window needs lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize(&self, v: f32) -> f32 {
        ((v as f64 - self.lo) / (self.hi - self.lo)) as f32
    }

    #[inline]
    pub fn denormalize(&self, u: f32) -> f32 {
        (self.lo + u as f64 * (self.hi - self.lo)) as f32
    }
}

/// Linearly interpolated percentile (`q` in `[0, 1]`) of `data`.
pub fn percentile(data: &[f32], q: f64) -> f64 {
    assert!(!data.is_empty(), "percentile of empty data");
    let mut v = data.to_vec();
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    let (_, a, upper) = v.select_nth_unstable_by(i, |a, b| a.total_cmp(b));
    let a = *a as f64;
    if frac == 0.0 || upper.is_empty() {
        return a;
    }
    let b = upper.iter().copied().min_by(|a, b| a.total_cmp(b)).unwrap() as f64;
    a + frac * (b - a)
}

/// The default window: 0.1% and 99.9% percentiles of `v`. A degenerate
/// (constant) volume gets a unit-width window starting at its value.
pub fn percentile_window(v: &Volume) -> NormWindow {
    percentile_window_with(v, 0.001, 0.999)
}

pub fn percentile_window_with(v: &Volume, q_lo: f64, q_hi: f64) -> NormWindow {
    let lo = percentile(v.data(), q_lo);
    let hi = percentile(v.data(), q_hi);
    if hi > lo {
        NormWindow { lo, hi }
    } else {
        NormWindow { lo, hi: lo + 1.0 }
    }
}

fn builtin(kind: &PriorKind, s: &Slice) -> Slice {
    match kind {
        PriorKind::GaussianSmooth { sigma } => gaussian_smooth(s, *sigma),
        PriorKind::TvProx { weight, inner_iters } => tv_prox(s, *weight, *inner_iters),
        PriorKind::Median { radius } => median_filter(s, *radius),
        PriorKind::Identity | PriorKind::Plugin { .. } => s.clone(),
    }
}

/// Applies the prior slice by slice along z. The window must be set unless
/// the prior is the identity.
pub fn apply_prior(v: &Volume, spec: &PriorSpec) -> Result<Volume> {
    spec.validate()?;
    if spec.kind == PriorKind::Identity {
        return Ok(v.clone());
    }
    let w = spec
        .window
        .ok_or_else(|| Error::InvalidParameter("prior normalization window is not set".into()))?;
    let [nx, ny, nz] = v.dims();
    let plane = nx * ny;
    let normalized = |z: usize| {
        let mut s = v.slice(z);
        s.data.iter_mut().for_each(|x| *x = w.normalize(*x));
        s
    };
    let mut out = Volume::zeros(v.dims(), v.voxel_size());

    match &spec.kind {
        PriorKind::Plugin { command, timeout_secs } => {
            let dims = vec![(nx, ny); nz];
            let data = out.data_mut();
            plugin::run_session(command, Duration::from_secs_f64(*timeout_secs), &dims, &normalized, &mut |z, s| {
                let dst = &mut data[z * plane..(z + 1) * plane];
                for (d, u) in dst.iter_mut().zip(&s.data) {
                    *d = w.denormalize(*u);
                }
                Ok(())
            })?;
        }
        kind => {
            out.data_mut().par_chunks_mut(plane).enumerate().for_each(|(z, dst)| {
                let s = builtin(kind, &normalized(z));
                for (d, u) in dst.iter_mut().zip(&s.data) {
                    *d = w.denormalize(*u);
                }
            });
        }
    }
    if let Some(i) = out.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("prior produced a non-finite value at voxel {i}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_volume() -> Volume {
        let data = (0..6 * 5 * 4).map(|i| (i as f32 * 0.37).sin() * 0.02 + 0.03).collect();
        Volume::from_data([6, 5, 4], 0.1, data).unwrap()
    }

    #[test]
    fn identity_is_bit_exact() {
        let v = ramp_volume();
        assert_eq!(apply_prior(&v, &PriorSpec::identity()).unwrap(), v);
    }

    #[test]
    fn missing_window_is_rejected() {
        let spec = PriorSpec::new(PriorKind::GaussianSmooth { sigma: 1.0 });
        assert!(apply_prior(&ramp_volume(), &spec).is_err());
    }

    #[test]
    fn invalid_parameters() {
        for kind in [
            PriorKind::GaussianSmooth { sigma: 0.0 },
            PriorKind::TvProx { weight: -1.0, inner_iters: 3 },
            PriorKind::Median { radius: 0 },
            PriorKind::Plugin { command: vec![], timeout_secs: 1.0 },
        ] {
            assert!(PriorSpec::new(kind).validate().is_err());
        }
        assert!(NormWindow::new(1.0, 1.0).is_err());
    }

    #[test]
    fn window_round_trip() {
        let w = NormWindow::new(0.01, 0.05).unwrap();
        for v in [0.01f32, 0.02, 0.0333, 0.05] {
            let back = w.denormalize(w.normalize(v));
            assert!(((back - v) / v).abs() < 1e-6);
        }
    }

    #[test]
    fn percentiles() {
        let d: Vec<f32> = (0..101).rev().map(|i| i as f32).collect();
        assert_eq!(percentile(&d, 0.0), 0.0);
        assert_eq!(percentile(&d, 1.0), 100.0);
        assert!((percentile(&d, 0.255) - 25.5).abs() < 1e-9);
        let flat = Volume::filled([3, 3, 3], 1.0, 0.2);
        let w = percentile_window(&flat);
        assert!(w.hi > w.lo);
    }

    #[test]
    fn spec_parses_from_toml() {
        let s: PriorSpec = toml::from_str("kind = \"tv_prox\"\nweight = 0.05\ninner_iters = 40\nwindow = [0.0, 0.2]\n").unwrap();
        assert_eq!(s.kind, PriorKind::TvProx { weight: 0.05, inner_iters: 40 });
        assert_eq!(s.window, Some(NormWindow { lo: 0.0, hi: 0.2 }));
        let p: PriorSpec = toml::from_str("kind = \"plugin\"\ncommand = [\"a\", \"b\"]\n").unwrap();
        assert_eq!(p.kind, PriorKind::Plugin { command: vec!["a".into(), "b".into()], timeout_secs: 30.0 });
        assert!(toml::from_str::<PriorSpec>("kind = \"identity\"\nwindow = [1.0, 0.0]\n").is_err());
        let text = toml::to_string(&s).unwrap();
        assert_eq!(toml::from_str::<PriorSpec>(&text).unwrap(), s);
    }
}
