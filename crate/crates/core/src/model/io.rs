//! Raw float32 payload files with a TOML sidecar.
//!
//! `scan.raw` holds the samples as little-endian `f32`; `scan.toml` holds the
//! magic (`CRVOL1` or `CRPRJ1`), dims, the physical metadata and a SHA-256 of
//! the payload bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::data::{ProjectionSet, Volume};
use crate::model::geometry::{ConeBeamGeometry, ScanMode};

pub const VOLUME_MAGIC: &str = "CRVOL1";
pub const PROJECTION_MAGIC: &str = "CRPRJ1";
const DTYPE: &str = "float32le";

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    magic: String,
    dtype: String,
    dims: [usize; 3],
    voxel_size: f64,
    sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<toml::Table>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProjectionHeader {
    magic: String,
    dtype: String,
    /// (views, rows, cols)
    dims: [usize; 3],
    pixel_pitch: f64,
    sod: f64,
    sdd: f64,
    scan_mode: ScanMode,
    sha256: String,
    angles: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<toml::Table>,
}

/// Acquisition metadata stored alongside a projection payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanInfo {
    pub sod: f64,
    pub sdd: f64,
    pub pixel_pitch: f64,
    pub scan_mode: ScanMode,
}

impl ScanInfo {
    pub fn from_geometry(g: &ConeBeamGeometry) -> Self {
        ScanInfo { sod: g.sod, sdd: g.sdd, pixel_pitch: g.pixel_pitch, scan_mode: g.scan_mode }
    }

    /// Geometry for reconstructing `p` onto the given grid.
    pub fn geometry(&self, p: &ProjectionSet, vol_dims: [usize; 3], voxel_size: f64) -> ConeBeamGeometry {
        ConeBeamGeometry {
            sod: self.sod,
            sdd: self.sdd,
            det_rows: p.det_rows(),
            det_cols: p.det_cols(),
            pixel_pitch: self.pixel_pitch,
            vol_dims,
            voxel_size,
            angles: p.angles().to_vec(),
            scan_mode: self.scan_mode,
        }
    }
}

/// Sidecar location for a payload path (`x.raw` -> `x.toml`).
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("toml")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

fn check_payload_path(path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "toml") {
        return Err(Error::format(path, "payload path must not use the sidecar extension .toml"));
    }
    Ok(())
}

fn write_pair(path: &Path, payload: &[u8], header: &impl Serialize) -> Result<()> {
    check_payload_path(path)?;
    let text = toml::to_string(header).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

fn read_pair<H: for<'de> Deserialize<'de>>(path: &Path, expected_magic: &str) -> Result<(H, Vec<u8>)> {
    check_payload_path(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
    match table.get("magic").and_then(|m| m.as_str()) {
        Some(m) if m == expected_magic => {}
        m => return Err(Error::format(&side, format!("bad magic {m:?}, expected {expected_magic:?}"))),
    }
    let header: H = table.try_into().map_err(|e: toml::de::Error| Error::format(&side, e.to_string()))?;
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((header, payload))
}

fn verify_payload(path: &Path, magic: &str, expected_magic: &str, dtype: &str, count: usize, payload: &[u8], sha: &str) -> Result<()> {
    if magic != expected_magic {
        return Err(Error::format(path, format!("bad magic {magic:?}, expected {expected_magic:?}")));
    }
    if dtype != DTYPE {
        return Err(Error::format(path, format!("unsupported dtype {dtype:?}")));
    }
    if payload.len() != count * 4 {
        return Err(Error::format(
            path,
            format!("payload size mismatch: header dims need {} bytes, file has {}", count * 4, payload.len()),
        ));
    }
    let actual = sha256_hex(payload);
    if !actual.eq_ignore_ascii_case(sha) {
        return Err(Error::format(path, format!("checksum mismatch: header {sha}, payload {actual}")));
    }
    Ok(())
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_volume_with(v, path, None)
}

/// Writes `v`, recording `provenance` (e.g. the effective run config) in the sidecar.
pub fn write_volume_with(v: &Volume, path: impl AsRef<Path>, provenance: Option<&toml::Table>) -> Result<()> {
    let path = path.as_ref();
    let payload = encode(v.data());
    let header = VolumeHeader {
        magic: VOLUME_MAGIC.into(),
        dtype: DTYPE.into(),
        dims: v.dims(),
        voxel_size: v.voxel_size(),
        sha256: sha256_hex(&payload),
        provenance: provenance.cloned(),
    };
    write_pair(path, &payload, &header)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (h, payload): (VolumeHeader, _) = read_pair(path, VOLUME_MAGIC)?;
    let count = h.dims.iter().product();
    verify_payload(path, &h.magic, VOLUME_MAGIC, &h.dtype, count, &payload, &h.sha256)?;
    if !(h.voxel_size.is_finite() && h.voxel_size > 0.0) {
        return Err(Error::format(path, format!("voxel_size must be positive, got {}", h.voxel_size)));
    }
    Volume::from_data(h.dims, h.voxel_size, decode(&payload)).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_projections(p: &ProjectionSet, scan: &ScanInfo, path: impl AsRef<Path>) -> Result<()> {
    write_projections_with(p, scan, path, None)
}

pub fn write_projections_with(
    p: &ProjectionSet,
    scan: &ScanInfo,
    path: impl AsRef<Path>,
    provenance: Option<&toml::Table>,
) -> Result<()> {
    let path = path.as_ref();
    let payload = encode(p.data());
    let header = ProjectionHeader {
        magic: PROJECTION_MAGIC.into(),
        dtype: DTYPE.into(),
        dims: [p.n_views(), p.det_rows(), p.det_cols()],
        pixel_pitch: scan.pixel_pitch,
        sod: scan.sod,
        sdd: scan.sdd,
        scan_mode: scan.scan_mode,
        sha256: sha256_hex(&payload),
        angles: p.angles().to_vec(),
        provenance: provenance.cloned(),
    };
    write_pair(path, &payload, &header)
}

pub fn read_projections(path: impl AsRef<Path>) -> Result<(ProjectionSet, ScanInfo)> {
    let path = path.as_ref();
    let (h, payload): (ProjectionHeader, _) = read_pair(path, PROJECTION_MAGIC)?;
    let [views, rows, cols] = h.dims;
    verify_payload(path, &h.magic, PROJECTION_MAGIC, &h.dtype, views * rows * cols, &payload, &h.sha256)?;
    if h.angles.len() != views {
        return Err(Error::format(path, format!("{} angles listed for {} views", h.angles.len(), views)));
    }
    let p = ProjectionSet::from_data(h.angles, rows, cols, decode(&payload)).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((p, ScanInfo { sod: h.sod, sdd: h.sdd, pixel_pitch: h.pixel_pitch, scan_mode: h.scan_mode }))
}

/// Reads the provenance table recorded in a sidecar, if any.
pub fn read_provenance(path: impl AsRef<Path>) -> Result<Option<toml::Table>> {
    let side = sidecar_path(path.as_ref());
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
    match table.remove("provenance") {
        Some(toml::Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Error::format(&side, "provenance must be a table")),
        None => Ok(None),
    }
}

/// SHA-256 recorded in a payload's sidecar.
pub fn recorded_checksum(path: impl AsRef<Path>) -> Result<String> {
    let side = sidecar_path(path.as_ref());
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
    table
        .get("sha256")
        .and_then(|v| v.as_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::format(&side, "missing sha256"))
}
