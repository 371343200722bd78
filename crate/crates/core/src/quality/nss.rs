//! Natural-scene statistics of mean-subtracted contrast-normalized (MSCN)
//! coefficients: a generalized Gaussian fit of the coefficients and
//! asymmetric generalized Gaussian fits of their products with four
//! neighbours, at two scales.

use std::sync::OnceLock;

use libm::tgamma;

use crate::error::{Error, Result};
use crate::model::Slice;
use crate::quality::filter2;

pub const N_FEATURES: usize = 36;

const MSCN_RADIUS: usize = 3;
const MSCN_SIGMA: f64 = 7.0 / 6.0;
/// Stabilizer for intensities on a 0..255 scale.
const MSCN_C: f64 = 1.0;
const MIN_SIDE: usize = 16;

/// Shape parameters are searched on `SHAPE_MIN..=SHAPE_MAX` in steps of
/// `SHAPE_STEP`, with linear interpolation between grid points.
const SHAPE_MIN: f64 = 0.2;
const SHAPE_MAX: f64 = 10.0;
const SHAPE_STEP: f64 = 0.001;

/// Percentiles mapped to 0 and 255 before computing features.
const NORM_LO: f64 = 0.01;
const NORM_HI: f64 = 0.99;

fn mscn_window() -> Vec<f64> {
    let mut w: Vec<f64> = (0..=2 * MSCN_RADIUS)
        .map(|i| {
            let d = i as f64 - MSCN_RADIUS as f64;
            (-0.5 * d * d / (MSCN_SIGMA * MSCN_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn check_slice(s: &Slice) -> Result<()> {
    if s.width < MIN_SIDE || s.height < MIN_SIDE {
        return Err(Error::Dimension(format!(
            "slice {}x{} is below the {MIN_SIDE}x{MIN_SIDE} minimum",
            s.width, s.height
        )));
    }
    if s.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite pixel in scored slice".into()));
    }
    Ok(())
}

/// Maps the 1st and 99th intensity percentiles to 0 and 255 (no clipping).
/// A flat slice maps to all zeros.
pub fn intensity_normalize(s: &Slice) -> Slice {
    let lo = crate::prior::percentile(&s.data, NORM_LO);
    let hi = crate::prior::percentile(&s.data, NORM_HI);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let data = s.data.iter().map(|&v| ((v as f64 - lo) * scale) as f32).collect();
    Slice { width: s.width, height: s.height, data }
}

fn mscn_f64(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = mscn_window();
    let mu = filter2(img, w, h, &k);
    let sq: Vec<f64> = img.iter().map(|v| v * v).collect();
    let m2 = filter2(&sq, w, h, &k);
    (0..w * h)
        .map(|i| {
            let sigma = (m2[i] - mu[i] * mu[i]).max(0.0).sqrt();
            (img[i] - mu[i]) / (sigma + MSCN_C)
        })
        .collect()
}

/// MSCN coefficients `(I - mu) / (sigma + 1)` with a 7x7 Gaussian window
/// (sigma 7/6). Expects intensities on a 0..255 scale.
pub fn mscn(s: &Slice) -> Result<Vec<f64>> {
    check_slice(s)?;
    let img: Vec<f64> = s.data.iter().map(|&v| v as f64).collect();
    Ok(mscn_f64(&img, s.width, s.height))
}

/// `Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a))`, increasing in `a`.
fn shape_ratio(a: f64) -> f64 {
    let g2 = tgamma(2.0 / a);
    g2 * g2 / (tgamma(1.0 / a) * tgamma(3.0 / a))
}

fn ratio_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((SHAPE_MAX - SHAPE_MIN) / SHAPE_STEP).round() as usize + 1;
        (0..n).map(|i| shape_ratio(SHAPE_MIN + i as f64 * SHAPE_STEP)).collect()
    })
}

/// Inverts [`shape_ratio`] on the lookup grid, clamping to its ends.
fn invert_shape_ratio(rho: f64) -> f64 {
    let t = ratio_table();
    if !(rho > t[0]) {
        return SHAPE_MIN;
    }
    if rho >= t[t.len() - 1] {
        return SHAPE_MAX;
    }
    let j = t.partition_point(|&v| v < rho);
    let (r0, r1) = (t[j - 1], t[j]);
    let frac = if r1 > r0 { (rho - r0) / (r1 - r0) } else { 0.0 };
    SHAPE_MIN + (j - 1) as f64 * SHAPE_STEP + frac * SHAPE_STEP
}

/// Generalized Gaussian fit by moment matching: `(shape, variance)`.
/// All-zero input gives `(SHAPE_MAX, 0)`.
pub fn ggd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len().max(1) as f64;
    let m1 = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n;
    if m2 <= 0.0 {
        return (SHAPE_MAX, 0.0);
    }
    (invert_shape_ratio(m1 * m1 / m2), m2)
}

/// Asymmetric generalized Gaussian fit: `(shape, mean, left var, right var)`.
pub fn aggd_fit(x: &[f64]) -> (f64, f64, f64, f64) {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in x {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    let lvar = if ln > 0 { ls / ln as f64 } else { 0.0 };
    let rvar = if rn > 0 { rs / rn as f64 } else { 0.0 };
    let n = x.len().max(1) as f64;
    let m1 = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n;
    if m2 <= 0.0 {
        return (SHAPE_MAX, 0.0, 0.0, 0.0);
    }
    let g = lvar.sqrt() / rvar.sqrt().max(1e-12);
    let r = m1 * m1 / m2;
    let rn_hat = r * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let shape = invert_shape_ratio(rn_hat);
    let k = (tgamma(1.0 / shape) / tgamma(3.0 / shape)).sqrt();
    let (bl, br) = (lvar.sqrt() * k, rvar.sqrt() * k);
    let mean = (br - bl) * tgamma(2.0 / shape) / tgamma(1.0 / shape);
    (shape, mean, lvar, rvar)
}

fn scale_features(m: &[f64], w: usize, h: usize, out: &mut Vec<f64>) {
    let (shape, var) = ggd_fit(m);
    out.extend([shape, var]);
    for (dy, dx) in [(0isize, 1isize), (1, 0), (1, 1), (1, -1)] {
        let mut prod = Vec::with_capacity(w * h);
        for y in 0..h as isize - dy {
            for x in 0..w as isize {
                let (x2, y2) = (x + dx, y + dy);
                if x2 < 0 || x2 >= w as isize {
                    continue;
                }
                prod.push(m[(y * w as isize + x) as usize] * m[(y2 * w as isize + x2) as usize]);
            }
        }
        let (a, mean, l, r) = aggd_fit(&prod);
        out.extend([a, mean, l, r]);
    }
}

fn downsample2(img: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (w / 2, h / 2);
    let mut out = vec![0.0; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            let i = 2 * y * w + 2 * x;
            out[y * w2 + x] = 0.25 * (img[i] + img[i + 1] + img[i + w] + img[i + w + 1]);
        }
    }
    (out, w2, h2)
}

/// The 36-element feature vector: 18 per scale, the second scale being a
/// 2x2 box-averaged copy. Intensities are normalized first, so the result
/// does not depend on a positive gain or an offset.
pub fn brisque_features(s: &Slice) -> Result<Vec<f64>> {
    check_slice(s)?;
    let norm = intensity_normalize(s);
    let img: Vec<f64> = norm.data.iter().map(|&v| v as f64).collect();
    let (w, h) = (s.width, s.height);
    let mut f = Vec::with_capacity(N_FEATURES);
    scale_features(&mscn_f64(&img, w, h), w, h, &mut f);
    let (half, w2, h2) = downsample2(&img, w, h);
    scale_features(&mscn_f64(&half, w2, h2), w2, h2, &mut f);
    debug_assert_eq!(f.len(), N_FEATURES);
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn shape_ratio_known_values() {
        // Gaussian: 2/pi; Laplacian: 1/2.
        assert!((shape_ratio(2.0) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!((shape_ratio(1.0) - 0.5).abs() < 1e-12);
        assert!((invert_shape_ratio(0.5) - 1.0).abs() < 1e-6);
        assert!((invert_shape_ratio(2.0 / std::f64::consts::PI) - 2.0).abs() < 1e-6);
        assert_eq!(invert_shape_ratio(0.0), SHAPE_MIN);
        assert_eq!(invert_shape_ratio(1.0), SHAPE_MAX);
    }

    #[test]
    fn ggd_recovers_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 2.0).unwrap();
        let x: Vec<f64> = (0..200_000).map(|_| n.sample(&mut rng)).collect();
        let (shape, var) = ggd_fit(&x);
        assert!((shape - 2.0).abs() < 0.05, "{shape}");
        assert!((var - 4.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn aggd_of_symmetric_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..100_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (shape, mean, l, r) = aggd_fit(&x);
        assert!(mean.abs() < 0.02);
        assert!((l - r).abs() < 0.02);
        assert!(shape > 2.0, "uniform is flatter than gaussian: {shape}");
    }

    #[test]
    fn constant_slice() {
        let s = Slice { width: 20, height: 18, data: vec![3.0; 360] };
        let m = mscn(&s).unwrap();
        assert_eq!(m.len(), 360);
        assert!(m.iter().all(|&v| v.abs() < 1e-9));
        let f = brisque_features(&s).unwrap();
        assert_eq!(f.len(), N_FEATURES);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn small_or_bad_slices_rejected() {
        assert!(mscn(&Slice::zeros(8, 32)).is_err());
        let mut s = Slice::zeros(16, 16);
        s.data[5] = f32::NAN;
        assert!(brisque_features(&s).is_err());
    }
}
