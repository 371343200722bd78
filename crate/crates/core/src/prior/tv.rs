//! Isotropic total-variation proximal map via Chambolle's dual projection
//! iteration: `argmin_u 1/2 |u - f|^2 + weight * TV(u)`.

use crate::model::Slice;

// 1/4 is the usual practical step; convergence is only proven up to 1/8.
const TAU: f64 = 0.25;

fn gradient(u: &[f64], w: usize, h: usize, gx: &mut [f64], gy: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = if x + 1 < w { px[i] } else { 0.0 } - if x > 0 { px[i - 1] } else { 0.0 };
            let dy = if y + 1 < h { py[i] } else { 0.0 } - if y > 0 { py[i - w] } else { 0.0 };
            out[i] = dx + dy;
        }
    }
}

pub fn tv_prox(img: &Slice, weight: f64, iters: usize) -> Slice {
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let f: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut div = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut arg = vec![0.0; n];
    for _ in 0..iters {
        divergence(&px, &py, w, h, &mut div);
        for i in 0..n {
            arg[i] = div[i] - f[i] / weight;
        }
        gradient(&arg, w, h, &mut gx, &mut gy);
        for i in 0..n {
            let norm = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            let denom = 1.0 + TAU * norm;
            px[i] = (px[i] + TAU * gx[i]) / denom;
            py[i] = (py[i] + TAU * gy[i]) / denom;
        }
    }
    divergence(&px, &py, w, h, &mut div);
    let data = f.iter().zip(&div).map(|(fv, dv)| (fv - weight * dv) as f32).collect();
    Slice { width: w, height: h, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let (w, h) = (5, 4);
        let u: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let px: Vec<f64> = (0..20).map(|i| ((i * 3) % 5) as f64 - 2.0).collect();
        let py: Vec<f64> = (0..20).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let (mut gx, mut gy, mut d) = (vec![0.0; 20], vec![0.0; 20], vec![0.0; 20]);
        gradient(&u, w, h, &mut gx, &mut gy);
        divergence(&px, &py, w, h, &mut d);
        let lhs: f64 = gx.iter().zip(&px).chain(gy.iter().zip(&py)).map(|(a, b)| a * b).sum();
        let rhs: f64 = -u.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn constant_is_fixed_point() {
        let s = Slice { width: 6, height: 6, data: vec![0.5; 36] };
        assert_eq!(tv_prox(&s, 0.1, 20).data, s.data);
    }
}
