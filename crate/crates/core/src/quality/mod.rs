//! Full-reference metrics and the no-reference score used to rank candidate
//! reconstructions.

mod model;
mod nss;

use crate::error::{Error, Result};
use crate::model::{Slice, Volume};
use crate::prior::reflect;

pub use model::{NoRefModel, DEFAULT_MODEL_TOML};
pub use nss::{aggd_fit, brisque_features, ggd_fit, intensity_normalize, mscn, N_FEATURES};

/// Anything that can rank a slice; lower is better.
pub trait SliceScorer: Sync {
    fn score(&self, s: &Slice) -> Result<f64>;
}

/// Adapts a closure into a [`SliceScorer`].
pub struct FnScorer<F>(pub F);

impl<F: Fn(&Slice) -> Result<f64> + Sync> SliceScorer for FnScorer<F> {
    fn score(&self, s: &Slice) -> Result<f64> {
        (self.0)(s)
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("metric inputs differ in size: {a} vs {b}")));
    }
    Ok(())
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
    }
    Ok(())
}

pub fn mse(x: &[f32], reference: &[f32]) -> Result<f64> {
    check_len(x.len(), reference.len())?;
    let s: f64 = x.iter().zip(reference).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(s / x.len().max(1) as f64)
}

/// Mean squared error over the voxels where `mask` is set.
pub fn mse_masked(x: &[f32], reference: &[f32], mask: &[bool]) -> Result<f64> {
    check_len(x.len(), reference.len())?;
    check_len(x.len(), mask.len())?;
    let (mut s, mut n) = (0.0, 0usize);
    for ((&a, &b), &m) in x.iter().zip(reference).zip(mask) {
        if m {
            s += (a as f64 - b as f64).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter("empty mask".into()));
    }
    Ok(s / n as f64)
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR in dB; identical inputs give `+inf`.
pub fn psnr(x: &[f32], reference: &[f32], peak: f64) -> Result<f64> {
    check_peak(peak)?;
    Ok(psnr_from_mse(mse(x, reference)?, peak))
}

pub fn psnr_masked(x: &[f32], reference: &[f32], mask: &[bool], peak: f64) -> Result<f64> {
    check_peak(peak)?;
    Ok(psnr_from_mse(mse_masked(x, reference, mask)?, peak))
}

const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window() -> Vec<f64> {
    let mut w: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let d = i as f64 - SSIM_RADIUS as f64;
            (-0.5 * d * d / (SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable filtering with reflected borders.
pub(crate) fn filter2(img: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * img[y * w + reflect(x as isize + j as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[reflect(y as isize + j as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Per-pixel SSIM map (11x11 Gaussian window, sigma 1.5).
pub fn ssim_map(x: &Slice, reference: &Slice, data_range: f64) -> Result<Vec<f64>> {
    if x.width != reference.width || x.height != reference.height {
        return Err(Error::Dimension(format!(
            "ssim of {}x{} against {}x{}",
            x.width, x.height, reference.width, reference.height
        )));
    }
    check_peak(data_range)?;
    let (w, h) = (x.width, x.height);
    let k = ssim_window();
    let a: Vec<f64> = x.data.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = reference.data.iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let mu_a = filter2(&a, w, h, &k);
    let mu_b = filter2(&b, w, h, &k);
    let aa = filter2(&prod(&a, &a), w, h, &k);
    let bb = filter2(&prod(&b, &b), w, h, &k);
    let ab = filter2(&prod(&a, &b), w, h, &k);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    Ok((0..w * h)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect())
}

pub fn ssim(x: &Slice, reference: &Slice, data_range: f64) -> Result<f64> {
    let m = ssim_map(x, reference, data_range)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Mean SSIM over axial slices, restricted to `mask` when given. The data
/// range is that of the whole reference volume.
pub fn ssim_volume(x: &Volume, reference: &Volume, mask: Option<&[bool]>) -> Result<f64> {
    reference.check_dims(x.dims())?;
    if let Some(m) = mask {
        check_len(m.len(), x.len())?;
    }
    let (lo, hi) = reference
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = if hi > lo { (hi - lo) as f64 } else { 1.0 };
    let plane = x.slice_len();
    let (mut s, mut n) = (0.0, 0usize);
    for z in 0..x.dims()[2] {
        let sm = match mask {
            Some(m) if !m[z * plane..(z + 1) * plane].iter().any(|&b| b) => continue,
            _ => ssim_map(&x.slice(z), &reference.slice(z), range)?,
        };
        for (i, v) in sm.iter().enumerate() {
            if mask.is_none_or(|m| m[z * plane + i]) {
                s += v;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter("empty mask".into()));
    }
    Ok(s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Slice {
        let data = (0..w * h).map(|i| ((i * 2654435761) % 1000) as f32 / 500.0 + ((i / w) as f32 * 0.17).cos()).collect();
        Slice { width: w, height: h, data }
    }

    #[test]
    fn psnr_of_identical_is_infinite() {
        let a = [0.1f32, 0.5, 0.9];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_constant_offset() {
        let r = vec![0.25f32; 100];
        let x: Vec<f32> = r.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&x, &r, 1.0).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&x, &r[..50], 1.0).is_err());
        assert!(psnr(&x, &r, 0.0).is_err());
    }

    #[test]
    fn masked_psnr_ignores_outside() {
        let r = vec![0.0f32; 4];
        let x = [0.1f32, 0.1, 5.0, 5.0];
        let m = [true, true, false, false];
        assert!((psnr_masked(&x, &r, &m, 1.0).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr_masked(&x, &r, &[false; 4], 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_sign() {
        let s = textured(24, 20);
        assert_eq!(ssim(&s, &s, 2.0).unwrap(), 1.0);
        let neg = Slice { data: s.data.iter().map(|v| -v).collect(), ..s.clone() };
        assert!(ssim(&neg, &s, 2.0).unwrap() < 1.0);
    }

    #[test]
    fn ssim_volume_matches_single_slice() {
        let s = textured(16, 16);
        let v = Volume::from_data([16, 16, 1], 1.0, s.data.clone()).unwrap();
        let mut noisy = v.clone();
        noisy.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x += ((i * 7919) % 13) as f32 * 0.01);
        let range = {
            let (lo, hi) = s.data.iter().fold((f32::MAX, f32::MIN), |(l, h), &x| (l.min(x), h.max(x)));
            (hi - lo) as f64
        };
        let a = ssim_volume(&noisy, &v, None).unwrap();
        let b = ssim(&noisy.slice(0), &s, range).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
