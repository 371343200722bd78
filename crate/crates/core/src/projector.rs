//! Joseph-style ray-driven cone-beam projector and its exact transpose.
//!
//! Each ray is sampled once per voxel plane along whichever transaxial axis
//! it travels fastest; within a plane the volume is bilinearly interpolated
//! in the remaining transaxial axis and z. The back projection walks the
//! same samples with the same weights, so the pair is a matched adjoint.
//! It is evaluated slice by slice (gather form), which keeps every output
//! voxel owned by one worker and the summation order fixed.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;
use crate::model::{check_center_rows, ConeBeamGeometry, ProjectionSet, Volume};

#[derive(Debug, Clone, Copy)]
struct ViewFrame {
    // Source position, voxel index units.
    src: [f64; 3],
    // Detector center, voxel index units.
    det: [f64; 3],
    // Detector column direction (unit vector, transaxial).
    ecol: [f64; 2],
}

/// Ray samples `k = k_lo..k_hi` at `(other = b0 + k*db, z = z0 + k*dz)`.
#[derive(Debug, Clone, Copy)]
struct Ray {
    along_x: bool,
    b0: f64,
    db: f64,
    z0: f64,
    dz: f64,
    step: f64,
    k_lo: isize,
    k_hi: isize,
}

/// Half-open integer range of `k` with `lo < c0 + k*dc < hi`.
fn k_window(c0: f64, dc: f64, lo: f64, hi: f64) -> (isize, isize) {
    if dc == 0.0 {
        return if c0 > lo && c0 < hi { (isize::MIN / 4, isize::MAX / 4) } else { (0, 0) };
    }
    let (a, b) = ((lo - c0) / dc, (hi - c0) / dc);
    let (kmin, kmax) = if a < b { (a, b) } else { (b, a) };
    (kmin.floor() as isize + 1, kmax.ceil() as isize)
}

/// Matched forward/back projection pair for one geometry.
#[derive(Debug, Clone)]
pub struct ConeProjector {
    geometry: ConeBeamGeometry,
    frames: Vec<ViewFrame>,
}

impl ConeProjector {
    pub fn new(g: &ConeBeamGeometry) -> Result<Self> {
        g.validate()?;
        let [nx, ny, nz] = g.vol_dims;
        let vs = g.voxel_size;
        let to_index = |p: [f64; 3]| {
            [
                p[0] / vs + (nx as f64 - 1.0) * 0.5,
                p[1] / vs + (ny as f64 - 1.0) * 0.5,
                p[2] / vs + (nz as f64 - 1.0) * 0.5,
            ]
        };
        let frames = g
            .angles
            .iter()
            .map(|&theta| {
                let (s, c) = theta.sin_cos();
                ViewFrame {
                    src: to_index([-g.sod * c, -g.sod * s, 0.0]),
                    det: to_index([(g.sdd - g.sod) * c, (g.sdd - g.sod) * s, 0.0]),
                    ecol: [-s, c],
                }
            })
            .collect();
        Ok(ConeProjector { geometry: g.clone(), frames })
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        &self.geometry
    }

    fn det_offsets(&self, row: usize, col: usize) -> (f64, f64) {
        let g = &self.geometry;
        let scale = g.pixel_pitch / g.voxel_size;
        let u = (col as f64 - (g.det_cols as f64 - 1.0) * 0.5) * scale;
        let v = (row as f64 - (g.det_rows as f64 - 1.0) * 0.5) * scale;
        (u, v)
    }

    #[inline]
    fn ray(&self, view: usize, row: usize, col: usize) -> Option<Ray> {
        let [nx, ny, nz] = self.geometry.vol_dims;
        let f = &self.frames[view];
        let (u, v) = self.det_offsets(row, col);
        let px = f.det[0] + u * f.ecol[0];
        let py = f.det[1] + u * f.ecol[1];
        let pz = f.det[2] + v;
        let d = [px - f.src[0], py - f.src[1], pz - f.src[2]];
        let along_x = d[0].abs() >= d[1].abs();
        let (a, b, na, nb) = if along_x { (0, 1, nx, ny) } else { (1, 0, ny, nx) };
        let db = d[b] / d[a];
        let dz = d[2] / d[a];
        let b0 = f.src[b] - f.src[a] * db;
        let z0 = f.src[2] - f.src[a] * dz;
        let step = self.geometry.voxel_size * (1.0 + db * db + dz * dz).sqrt();
        let (bl, bh) = k_window(b0, db, -1.0, nb as f64);
        let (zl, zh) = k_window(z0, dz, -1.0, nz as f64);
        let k_lo = bl.max(zl).max(0);
        let k_hi = bh.min(zh).min(na as isize);
        if k_lo >= k_hi {
            return None;
        }
        Some(Ray { along_x, b0, db, z0, dz, step, k_lo, k_hi })
    }

    fn forward_ray(&self, ray: &Ray, x: &[f64]) -> f64 {
        let [nx, ny, nz] = self.geometry.vol_dims;
        let nb = if ray.along_x { ny } else { nx };
        let mut acc = 0.0;
        for k in ray.k_lo..ray.k_hi {
            let b = ray.b0 + k as f64 * ray.db;
            let z = ray.z0 + k as f64 * ray.dz;
            let (fb, fz) = (b.floor(), z.floor());
            let (wb, wz) = (b - fb, z - fz);
            let (ib, iz) = (fb as isize, fz as isize);
            let k = k as usize;
            let mut s = 0.0;
            for (dzi, wzv) in [(0isize, 1.0 - wz), (1, wz)] {
                let zz = iz + dzi;
                if zz < 0 || zz >= nz as isize {
                    continue;
                }
                for (dbi, wbv) in [(0isize, 1.0 - wb), (1, wb)] {
                    let bb = ib + dbi;
                    if bb < 0 || bb >= nb as isize {
                        continue;
                    }
                    let idx = voxel_index(ray.along_x, k, bb as usize, zz as usize, nx, ny);
                    s += wzv * wbv * x[idx];
                }
            }
            acc += s;
        }
        acc * ray.step
    }

    /// Scatters `value` along `ray` into the slab `[z_lo, z_hi)` of `out`,
    /// which holds only those slices.
    fn adjoint_ray_into_slab(&self, ray: &Ray, value: f64, z_lo: usize, z_hi: usize, out: &mut [f64]) {
        let [nx, ny, _] = self.geometry.vol_dims;
        let nb = if ray.along_x { ny } else { nx };
        let (zl, zh) = k_window(ray.z0, ray.dz, z_lo as f64 - 1.0, z_hi as f64);
        let k_lo = ray.k_lo.max(zl);
        let k_hi = ray.k_hi.min(zh);
        let w = value * ray.step;
        for k in k_lo..k_hi {
            let b = ray.b0 + k as f64 * ray.db;
            let z = ray.z0 + k as f64 * ray.dz;
            let (fb, fz) = (b.floor(), z.floor());
            let (wb, wz) = (b - fb, z - fz);
            let (ib, iz) = (fb as isize, fz as isize);
            let k = k as usize;
            for (dzi, wzv) in [(0isize, 1.0 - wz), (1, wz)] {
                let zz = iz + dzi;
                if zz < z_lo as isize || zz >= z_hi as isize {
                    continue;
                }
                for (dbi, wbv) in [(0isize, 1.0 - wb), (1, wb)] {
                    let bb = ib + dbi;
                    if bb < 0 || bb >= nb as isize {
                        continue;
                    }
                    let idx = voxel_index(ray.along_x, k, bb as usize, zz as usize - z_lo, nx, ny);
                    out[idx] += w * wzv * wbv;
                }
            }
        }
    }

    /// Detector rows whose rays can touch voxel slices `[z_lo, z_hi)`.
    fn rows_touching(&self, z_lo: usize, z_hi: usize) -> std::ops::Range<usize> {
        let g = &self.geometry;
        let [nx, ny, nz] = g.vol_dims;
        let half_diag = 0.5 * g.voxel_size * ((nx * nx + ny * ny) as f64).sqrt();
        let t_near = ((g.sod - half_diag) / g.sdd).max(0.0);
        let t_far = (g.sod + half_diag) / g.sdd;
        let zc = (nz as f64 - 1.0) * 0.5;
        let scale = g.pixel_pitch / g.voxel_size;
        let rc = (g.det_rows as f64 - 1.0) * 0.5;
        // z index along a ray through row r lies in (r - rc)*scale*[t_near, t_far] + zc.
        let touches = |r: usize| {
            let v = (r as f64 - rc) * scale;
            let (a, b) = (v * t_near + zc, v * t_far + zc);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            hi > z_lo as f64 - 1.0 - 1e-9 && lo < z_hi as f64 + 1e-9
        };
        let first = (0..g.det_rows).find(|&r| touches(r));
        match first {
            None => 0..0,
            Some(f) => {
                let last = (f..g.det_rows).rev().find(|&r| touches(r)).unwrap_or(f);
                f..last + 1
            }
        }
    }

    /// Forward projection of a flat `f64` volume into `out`.
    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.geometry;
        assert_eq!(x.len(), g.n_voxels());
        assert_eq!(out.len(), g.n_measurements());
        let (rows, cols) = (g.det_rows, g.det_cols);
        out.par_chunks_mut(cols).enumerate().for_each(|(line, dst)| {
            let (view, row) = (line / rows, line % rows);
            for (col, o) in dst.iter_mut().enumerate() {
                *o = match self.ray(view, row, col) {
                    Some(ray) => self.forward_ray(&ray, x),
                    None => 0.0,
                };
            }
        });
    }

    /// `out += scale * A^T y`
    pub fn adjoint_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        let g = &self.geometry;
        assert_eq!(y.len(), g.n_measurements());
        assert_eq!(out.len(), g.n_voxels());
        let [nx, ny, _] = g.vol_dims;
        let plane = nx * ny;
        let (rows, cols) = (g.det_rows, g.det_cols);
        out.par_chunks_mut(plane).enumerate().for_each_init(
            || vec![0.0; plane],
            |acc, (z, dst)| {
                acc.fill(0.0);
                for view in 0..g.n_views() {
                    for row in self.rows_touching(z, z + 1) {
                        let base = (view * rows + row) * cols;
                        for col in 0..cols {
                            let value = y[base + col];
                            if value == 0.0 {
                                continue;
                            }
                            if let Some(ray) = self.ray(view, row, col) {
                                self.adjoint_ray_into_slab(&ray, value, z, z + 1, acc);
                            }
                        }
                    }
                }
                for (d, a) in dst.iter_mut().zip(acc.iter()) {
                    *d += scale * a;
                }
            },
        );
    }
}

#[inline]
fn voxel_index(along_x: bool, k: usize, b: usize, z: usize, nx: usize, ny: usize) -> usize {
    if along_x {
        (z * ny + b) * nx + k
    } else {
        (z * ny + k) * nx + b
    }
}

impl LinearOperator for ConeProjector {
    fn domain_len(&self) -> usize {
        self.geometry.n_voxels()
    }

    fn range_len(&self) -> usize {
        self.geometry.n_measurements()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.forward(x, out)
    }

    fn apply_adjoint_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        self.adjoint_add(y, scale, out)
    }
}

/// Line integrals of `v` for every detector pixel of `g`.
pub fn forward_project(v: &Volume, g: &ConeBeamGeometry) -> Result<ProjectionSet> {
    v.check_dims(g.vol_dims)?;
    let proj = ConeProjector::new(g)?;
    let mut out = vec![0.0; g.n_measurements()];
    proj.forward(&v.to_f64(), &mut out);
    ProjectionSet::from_f64(g, &out)
}

/// Transpose of [`forward_project`].
pub fn back_project(p: &ProjectionSet, g: &ConeBeamGeometry) -> Result<Volume> {
    p.check_geometry(g)?;
    let proj = ConeProjector::new(g)?;
    let mut out = vec![0.0; g.n_voxels()];
    proj.adjoint_add(&p.to_f64(), 1.0, &mut out);
    Volume::from_f64(g.vol_dims, g.voxel_size, &out)
}

/// Center detector rows and the axial slab of the volume they see.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterRestriction {
    /// Geometry with `center_rows` detector rows and the slab as volume.
    pub geometry: ConeBeamGeometry,
    /// First retained detector row.
    pub row_offset: usize,
    /// First volume slice of the slab.
    pub slab_offset: usize,
}

impl CenterRestriction {
    pub fn new(g: &ConeBeamGeometry, center_rows: usize) -> Result<Self> {
        g.validate()?;
        check_center_rows(center_rows, g.det_rows)?;
        let [nx, ny, nz] = g.vol_dims;
        let half_diag = 0.5 * g.voxel_size * ((nx * nx + ny * ny) as f64).sqrt();
        // Rows fan out with distance from the source; size the slab for the far edge.
        let footprint = center_rows as f64 * g.pixel_pitch * (g.sod + half_diag) / g.sdd;
        let mut nz_slab = (footprint / g.voxel_size).ceil() as usize + 2;
        if nz_slab % 2 != nz % 2 {
            nz_slab += 1;
        }
        let nz_slab = nz_slab.min(nz);
        let geometry = ConeBeamGeometry {
            det_rows: center_rows,
            vol_dims: [nx, ny, nz_slab],
            ..g.clone()
        };
        Ok(CenterRestriction { geometry, row_offset: (g.det_rows - center_rows) / 2, slab_offset: (nz - nz_slab) / 2 })
    }

    pub fn center_rows(&self) -> usize {
        self.geometry.det_rows
    }

    pub fn slab_depth(&self) -> usize {
        self.geometry.vol_dims[2]
    }

    /// Retained detector rows of every view.
    pub fn extract_rows(&self, p: &ProjectionSet) -> Result<ProjectionSet> {
        let rows = self.center_rows();
        if p.det_rows() < self.row_offset + rows || p.det_cols() != self.geometry.det_cols {
            return Err(Error::Dimension(format!(
                "projections with {} rows x {} cols cannot supply rows {}..{}",
                p.det_rows(),
                p.det_cols(),
                self.row_offset,
                self.row_offset + rows
            )));
        }
        let cols = p.det_cols();
        let mut data = Vec::with_capacity(p.n_views() * rows * cols);
        for v in 0..p.n_views() {
            let start = p.index(v, self.row_offset, 0);
            data.extend_from_slice(&p.data()[start..start + rows * cols]);
        }
        ProjectionSet::from_data(p.angles().to_vec(), rows, cols, data)
    }

    /// The slab of a full volume.
    pub fn slab_of(&self, v: &Volume) -> Volume {
        v.slab(self.slab_offset, self.slab_depth())
    }

    /// Flat-vector version of [`Self::slab_of`].
    pub fn slab_of_f64(&self, full: &[f64]) -> Vec<f64> {
        let [nx, ny, _] = self.geometry.vol_dims;
        let plane = nx * ny;
        full[self.slab_offset * plane..(self.slab_offset + self.slab_depth()) * plane].to_vec()
    }
}

/// Center `center_rows` rows of `p` together with the reduced geometry.
pub fn restrict_center(p: &ProjectionSet, g: &ConeBeamGeometry, center_rows: usize) -> Result<(ProjectionSet, CenterRestriction)> {
    p.check_geometry(g)?;
    let r = CenterRestriction::new(g, center_rows)?;
    Ok((r.extract_rows(p)?, r))
}
