//! Synthetic parts and scan simulation.
//!
//! A part is a solid cylinder on the rotation axis with spherical pores and
//! optionally a square lattice of axial channels. Scans are simulated from
//! exact projector line integrals with an optional quadratic beam-hardening
//! loss and Poisson counting noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{full_scan_angles, short_scan_angles, ConeBeamGeometry, ProjectionSet, ScanMode, Volume};
use crate::projector::forward_project;

/// Axial channels on a square grid, clipped to the part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Center-to-center spacing (mm).
    pub spacing: f64,
    /// Channel radius (mm).
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    /// Cylinder radius (mm).
    pub radius: f64,
    /// Cylinder length along z (mm); `None` fills the volume.
    #[serde(default)]
    pub height: Option<f64>,
    /// Attenuation of the material (1/mm).
    pub mu: f64,
    #[serde(default)]
    pub pore_count: usize,
    /// Pore radius range (mm), sampled uniformly.
    #[serde(default = "default_pore_radius")]
    pub pore_radius: [f64; 2],
    #[serde(default)]
    pub lattice: Option<Lattice>,
}

fn default_pore_radius() -> [f64; 2] {
    [0.1, 0.2]
}

impl PartSpec {
    pub fn cylinder(radius: f64, mu: f64) -> Self {
        PartSpec { radius, height: None, mu, pore_count: 0, pore_radius: default_pore_radius(), lattice: None }
    }

    /// The standard test part for an `n`-voxel cube: a cylinder filling 80%
    /// of the width, with pores of 2 to 5 voxels radius.
    pub fn desk(n: usize, voxel_size: f64) -> Self {
        let extent = n as f64 * voxel_size;
        PartSpec {
            radius: 0.4 * extent,
            height: None,
            mu: 0.15,
            pore_count: ((n as f64 / 128.0).powi(3) * 120.0).round().max(4.0) as usize,
            pore_radius: [2.0 * voxel_size, 5.0 * voxel_size],
            lattice: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("part radius", self.radius)?;
        positive("part mu", self.mu)?;
        if let Some(h) = self.height {
            positive("part height", h)?;
        }
        if self.pore_count > 0 {
            positive("pore radius", self.pore_radius[0])?;
            if self.pore_radius[1] < self.pore_radius[0] {
                return Err(Error::InvalidParameter("pore radius range is reversed".into()));
            }
        }
        if let Some(l) = &self.lattice {
            positive("lattice spacing", l.spacing)?;
            positive("lattice radius", l.radius)?;
            if 2.0 * l.radius >= l.spacing {
                return Err(Error::InvalidParameter("lattice channels overlap".into()));
            }
        }
        Ok(())
    }
}

/// A spherical pore (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pore {
    pub center: [f64; 3],
    pub radius: f64,
}

fn channel_centers(l: &Lattice, r_part: f64) -> Vec<[f64; 2]> {
    let n = (r_part / l.spacing).ceil() as i64;
    let mut out = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            let c = [i as f64 * l.spacing, j as f64 * l.spacing];
            if (c[0] * c[0] + c[1] * c[1]).sqrt() + l.radius < r_part {
                out.push(c);
            }
        }
    }
    out
}

/// Places `spec.pore_count` pores by seeded rejection sampling. Pores lie
/// fully inside the part and touch neither each other nor any channel.
pub fn place_pores(spec: &PartSpec, half_height: f64, seed: u64) -> Result<Vec<Pore>> {
    let channels = spec.lattice.as_ref().map(|l| channel_centers(l, spec.radius)).unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pores: Vec<Pore> = Vec::with_capacity(spec.pore_count);
    let max_attempts = 2000 * spec.pore_count.max(1);
    let mut attempts = 0;
    while pores.len() < spec.pore_count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidParameter(format!(
                "could only place {} of {} pores inside the part",
                pores.len(),
                spec.pore_count
            )));
        }
        let [rmin, rmax] = spec.pore_radius;
        let r = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
        let reach = spec.radius - r;
        if reach <= 0.0 || half_height - r <= 0.0 {
            continue;
        }
        let x = rng.random_range(-reach..reach);
        let y = rng.random_range(-reach..reach);
        let z = rng.random_range(-(half_height - r)..(half_height - r));
        if (x * x + y * y).sqrt() > reach {
            continue;
        }
        let gap = |a: f64, b: f64| a > b;
        if let Some(l) = &spec.lattice {
            if channels.iter().any(|c| !gap(((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt(), r + l.radius)) {
                continue;
            }
        }
        let p = Pore { center: [x, y, z], radius: r };
        if pores.iter().any(|q| {
            let d2: f64 = (0..3).map(|k| (q.center[k] - p.center[k]).powi(2)).sum();
            !gap(d2.sqrt(), q.radius + p.radius)
        }) {
            continue;
        }
        pores.push(p);
    }
    Ok(pores)
}

/// Voxelizes the part by testing voxel centers. Values are exactly 0 or `mu`.
pub fn make_part_phantom(dims: [usize; 3], voxel_size: f64, seed: u64, spec: &PartSpec) -> Result<Volume> {
    spec.validate()?;
    if !(voxel_size.is_finite() && voxel_size > 0.0) || dims.iter().any(|&n| n == 0) {
        return Err(Error::InvalidParameter(format!("bad volume grid {dims:?} x {voxel_size} mm")));
    }
    let extent_z = dims[2] as f64 * voxel_size;
    let half_height = spec.height.map_or(extent_z, |h| h.min(extent_z)) * 0.5;
    let pores = place_pores(spec, half_height, seed)?;
    let channels = spec.lattice.as_ref().map(|l| channel_centers(l, spec.radius)).unwrap_or_default();
    let channel_r2 = spec.lattice.as_ref().map_or(0.0, |l| l.radius * l.radius);
    let mut v = Volume::zeros(dims, voxel_size);
    let [nx, ny, _] = dims;
    let mu = spec.mu as f32;
    let center = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) * 0.5) * voxel_size;
    v.data_mut().par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
        let z = center(k, dims[2]);
        if z.abs() > half_height {
            return;
        }
        for j in 0..ny {
            let y = center(j, ny);
            for i in 0..nx {
                let x = center(i, nx);
                if x * x + y * y > spec.radius * spec.radius {
                    continue;
                }
                if channels.iter().any(|c| (x - c[0]).powi(2) + (y - c[1]).powi(2) <= channel_r2) {
                    continue;
                }
                let in_pore = pores.iter().any(|p| {
                    (x - p.center[0]).powi(2) + (y - p.center[1]).powi(2) + (z - p.center[2]).powi(2)
                        <= p.radius * p.radius
                });
                if !in_pore {
                    plane[j * nx + i] = mu;
                }
            }
        }
    });
    Ok(v)
}

/// Voxels whose centers lie within `radius` of the axis and `half_height` of
/// the midplane (both in mm).
pub fn cylinder_mask(dims: [usize; 3], voxel_size: f64, radius: f64, half_height: f64) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let center = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) * 0.5) * voxel_size;
    let mut m = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        let z = center(k, nz);
        for j in 0..ny {
            let y = center(j, ny);
            for i in 0..nx {
                let x = center(i, nx);
                m.push(z.abs() <= half_height && x * x + y * y <= radius * radius);
            }
        }
    }
    m
}

/// Quadratic loss `t' = t - c t^2` on line integrals, held at its maximum
/// beyond `t = 1/(2c)` so it stays monotone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamHardening {
    pub coeff: f64,
}

impl BeamHardening {
    pub fn new(coeff: f64) -> Result<Self> {
        if !(coeff.is_finite() && coeff >= 0.0) {
            return Err(Error::InvalidParameter(format!("beam-hardening coefficient must be >= 0, got {coeff}")));
        }
        Ok(BeamHardening { coeff })
    }

    pub fn apply(&self, t: f64) -> f64 {
        let c = self.coeff;
        if c == 0.0 {
            return t;
        }
        let t = t.min(0.5 / c);
        t - c * t * t
    }

    /// Exact inverse on `[0, 1/(4c)]`.
    pub fn invert(&self, tp: f64) -> f64 {
        let c = self.coeff;
        if c == 0.0 {
            return tp;
        }
        let disc = (1.0 - 4.0 * c * tp).max(0.0);
        // Rationalized root, stable for small c*tp.
        2.0 * tp / (1.0 + disc.sqrt())
    }

    /// Least-squares polynomial (ascending coefficients) of `degree` mapping
    /// hardened integrals on `[0, apply(t_max)]` back to true integrals.
    pub fn fit_correction(&self, t_max: f64, degree: usize) -> Result<Vec<f64>> {
        let hi = self.apply(t_max);
        let samples: Vec<(f64, f64)> = (0..=200)
            .map(|i| {
                let tp = hi * i as f64 / 200.0;
                (tp, self.invert(tp))
            })
            .collect();
        polyfit(&samples, degree)
    }
}

/// Least squares via normal equations; fine for the low degrees used here.
pub fn polyfit(samples: &[(f64, f64)], degree: usize) -> Result<Vec<f64>> {
    let n = degree + 1;
    if samples.len() < n {
        return Err(Error::InvalidParameter("not enough samples for polynomial fit".into()));
    }
    let mut a = vec![vec![0.0; n + 1]; n];
    for &(x, y) in samples {
        let pw: Vec<f64> = (0..n).map(|k| x.powi(k as i32)).collect();
        for r in 0..n {
            for c in 0..n {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][n] += pw[r] * y;
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::Numerical("singular polynomial fit".into()));
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok((0..n).map(|r| a[r][n] / a[r][r]).collect())
}

/// Simulates log-normalized measurements of `v`.
///
/// `photons` is the unattenuated count per detector pixel; an infinite value
/// disables noise. Each view draws from its own stream keyed by `seed` and
/// the view angle, so a subset of views reproduces the same noise.
pub fn simulate_scan(
    v: &Volume,
    g: &ConeBeamGeometry,
    photons: f64,
    bh: Option<BeamHardening>,
    seed: u64,
) -> Result<ProjectionSet> {
    if photons.is_nan() || photons <= 0.0 {
        return Err(Error::InvalidParameter(format!("photons per ray must be positive, got {photons}")));
    }
    let mut p = forward_project(v, g)?;
    let noiseless = photons.is_infinite();
    let bh = bh.filter(|b| b.coeff > 0.0);
    if noiseless && bh.is_none() {
        return Ok(p);
    }
    let view_len = g.det_rows * g.det_cols;
    let angles = g.angles.clone();
    let failed = std::sync::atomic::AtomicBool::new(false);
    p.data_mut().par_chunks_mut(view_len).zip(angles.par_iter()).for_each(|(view, &angle)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(angle.to_bits());
        for t in view.iter_mut() {
            let tp = match bh {
                Some(b) => b.apply(*t as f64),
                None => *t as f64,
            };
            if noiseless {
                *t = tp as f32;
                continue;
            }
            let lambda = photons * (-tp).exp();
            let counts = if lambda > 0.0 {
                match Poisson::new(lambda) {
                    Ok(d) => d.sample(&mut rng),
                    Err(_) => {
                        failed.store(true, std::sync::atomic::Ordering::Relaxed);
                        0.0
                    }
                }
            } else {
                0.0
            };
            *t = (-(counts.max(0.5) / photons).ln()) as f32;
        }
    });
    if failed.into_inner() {
        return Err(Error::Numerical("invalid Poisson rate in scan simulation".into()));
    }
    Ok(p)
}

/// A magnification-2 geometry whose isocenter pixel matches `voxel_size`,
/// with an `n`-voxel cube covered by `n x n` detector pixels.
pub fn desk_geometry(n: usize, voxel_size: f64, n_views: usize, scan_mode: ScanMode) -> ConeBeamGeometry {
    let sod = 8.0 * n as f64 * voxel_size;
    let sdd = 2.0 * sod;
    let pixel_pitch = 2.0 * voxel_size;
    let fan = crate::model::fan_angle(n, pixel_pitch, sdd);
    let angles = match scan_mode {
        ScanMode::FullScan => full_scan_angles(n_views, 0.0),
        ScanMode::ShortScan => short_scan_angles(n_views, std::f64::consts::PI + fan, 0.0),
    };
    ConeBeamGeometry {
        sod,
        sdd,
        det_rows: n,
        det_cols: n,
        pixel_pitch,
        vol_dims: [n, n, n],
        voxel_size,
        angles,
        scan_mode,
    }
}
