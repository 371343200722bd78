//! Slice-wise smoothing filters. Borders use symmetric reflection
//! (`c b a | a b c`), so constant images pass through unchanged.

use crate::model::Slice;

/// Maps any integer index into `0..n` by whole-sample symmetric reflection.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Sampled, unit-sum Gaussian of half-width `ceil(4 sigma)` (at least 1).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = ((4.0 * sigma).ceil() as usize).max(1);
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian smoothing, rows then columns, in `f64`.
pub fn gaussian_smooth(img: &Slice, sigma: f64) -> Slice {
    let (w, h) = (img.width, img.height);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                s += kv * row[reflect(x as isize + j as isize - r, w)] as f64;
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                s += kv * tmp[reflect(y as isize + j as isize - r, h) * w + x];
            }
            out[y * w + x] = s as f32;
        }
    }
    Slice { width: w, height: h, data: out }
}

/// Median over the `(2r+1) x (2r+1)` window around each pixel.
pub fn median_filter(img: &Slice, radius: usize) -> Slice {
    let (w, h) = (img.width, img.height);
    let r = radius as isize;
    let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            window.clear();
            for dy in -r..=r {
                let yy = reflect(y as isize + dy, h);
                for dx in -r..=r {
                    window.push(img.data[yy * w + reflect(x as isize + dx, w)]);
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            out[y * w + x] = *m;
        }
    }
    Slice { width: w, height: h, data: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect(-1, 1), 0);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel(1.3);
        assert_eq!(k.len(), 2 * 6 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_removes_impulse() {
        let mut s = Slice::zeros(7, 7);
        s.data[3 * 7 + 3] = 100.0;
        let m = median_filter(&s, 1);
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_is_preserved() {
        let s = Slice { width: 9, height: 5, data: vec![0.37; 45] };
        for v in gaussian_smooth(&s, 2.5).data {
            assert!((v - 0.37).abs() < 1e-6);
        }
        assert_eq!(median_filter(&s, 2).data, s.data);
    }
}
