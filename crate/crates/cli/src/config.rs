//! Run configuration: one TOML file, every field overridable from the
//! command line.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xct_core::fdk::RampFilter;
use xct_core::model::{fan_angle, full_scan_angles, short_scan_angles, ConeBeamGeometry, ReconParams, ScanMode};
use xct_core::phantom::PartSpec;
use xct_core::pipeline::ReconConfig;
use xct_core::prior::PriorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub sod: f64,
    pub sdd: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    pub pixel_pitch: f64,
    pub vol_dims: [usize; 3],
    pub voxel_size: f64,
    pub scan_mode: ScanMode,
    /// Views of the dense scan; ignored when `angles` is given.
    #[serde(default = "default_views")]
    pub n_views: usize,
    /// Explicit view angles (radians).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    /// First view angle (radians).
    #[serde(default)]
    pub start_angle: f64,
    /// Short-scan span (radians); defaults to 180 degrees plus the fan angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<f64>,
    /// Keep every `view_step`-th view of the dense scan.
    #[serde(default = "one")]
    pub view_step: usize,
}

fn default_views() -> usize {
    360
}

fn one() -> usize {
    1
}

impl GeometryConfig {
    pub fn build(&self) -> ConeBeamGeometry {
        let angles = match &self.angles {
            Some(a) => a.clone(),
            None => match self.scan_mode {
                ScanMode::FullScan => full_scan_angles(self.n_views, self.start_angle),
                ScanMode::ShortScan => {
                    let span = self.span.unwrap_or(PI + fan_angle(self.det_cols, self.pixel_pitch, self.sdd));
                    short_scan_angles(self.n_views, span, self.start_angle)
                }
            },
        };
        let g = ConeBeamGeometry {
            sod: self.sod,
            sdd: self.sdd,
            det_rows: self.det_rows,
            det_cols: self.det_cols,
            pixel_pitch: self.pixel_pitch,
            vol_dims: self.vol_dims,
            voxel_size: self.voxel_size,
            angles,
            scan_mode: self.scan_mode,
        };
        g.subsample_views(self.view_step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Unattenuated photons per detector pixel; `inf` disables noise.
    #[serde(default = "default_photons")]
    pub photons: f64,
    /// Quadratic beam-hardening loss coefficient; 0 disables it.
    #[serde(default)]
    pub bh_coeff: f64,
}

fn default_photons() -> f64 {
    f64::INFINITY
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { photons: default_photons(), bh_coeff: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReconSection {
    #[serde(flatten)]
    pub params: ReconParams,
    /// Ascending beam-hardening correction coefficients.
    #[serde(default)]
    pub bh_coeffs: Vec<f64>,
    /// Weight used by `recon-fixed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    /// No-reference model file; the shipped model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// ROI radius as a fraction of the part radius.
    #[serde(default = "default_roi_radius")]
    pub roi_radius: f64,
    /// ROI axial extent as a fraction of the volume height.
    #[serde(default = "default_roi_height")]
    pub roi_height: f64,
}

fn default_roi_radius() -> f64 {
    0.9
}

fn default_roi_height() -> f64 {
    0.5
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { roi_radius: default_roi_radius(), roi_height: default_roi_height() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "p_phantom")]
    pub phantom: PathBuf,
    #[serde(default = "p_projections")]
    pub projections: PathBuf,
    #[serde(default = "p_fdk")]
    pub fdk: PathBuf,
    #[serde(default = "p_recon")]
    pub recon: PathBuf,
    #[serde(default = "p_trace")]
    pub trace: PathBuf,
}

fn p_phantom() -> PathBuf {
    "out/phantom.raw".into()
}
fn p_projections() -> PathBuf {
    "out/projections.raw".into()
}
fn p_fdk() -> PathBuf {
    "out/fdk.raw".into()
}
fn p_recon() -> PathBuf {
    "out/recon.raw".into()
}
fn p_trace() -> PathBuf {
    "out/trace.toml".into()
}

impl Default for Paths {
    fn default() -> Self {
        Paths { phantom: p_phantom(), projections: p_projections(), fdk: p_fdk(), recon: p_recon(), trace: p_trace() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    pub geometry: GeometryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PartSpec>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub recon: ReconSection,
    #[serde(default = "PriorSpec::identity")]
    pub prior: PriorSpec,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub paths: Paths,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg: Config =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        reject_unknown_prior_keys(&text, &cfg.prior).map_err(|message| ConfigError::Parse { path: path.into(), message })?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.phantom,
            &mut cfg.paths.projections,
            &mut cfg.paths.fdk,
            &mut cfg.paths.recon,
            &mut cfg.paths.trace,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(m) = &mut cfg.scorer.model {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn recon_config(&self) -> ReconConfig {
        ReconConfig { params: self.recon.params, prior: self.prior.clone(), bh_coeffs: self.recon.bh_coeffs.clone() }
    }

    /// The effective configuration as a TOML table, for provenance records.
    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes")
    }
}

/// `[prior]` is a flattened tagged enum, which serde cannot check for
/// unknown keys, so compare against what the parsed value serializes to.
fn reject_unknown_prior_keys(text: &str, prior: &PriorSpec) -> Result<(), String> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
    let Some(toml::Value::Table(given)) = raw.get("prior") else { return Ok(()) };
    let known = toml::Table::try_from(prior).map_err(|e| e.to_string())?;
    match given.keys().find(|k| !known.contains_key(*k)) {
        Some(k) => Err(format!("unknown field `{k}` in [prior]")),
        None => Ok(()),
    }
}

pub fn parse_filter(s: &str) -> Result<RampFilter, String> {
    match s {
        "ram_lak" | "ram-lak" => Ok(RampFilter::RamLak),
        "hann" => Ok(RampFilter::Hann),
        other => Err(format!("unknown filter {other:?} (expected ram_lak or hann)")),
    }
}
