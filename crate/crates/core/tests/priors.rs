use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xct_core::model::Slice;
use xct_core::phantom::{make_part_phantom, PartSpec};
use xct_core::prior::{apply_prior, gaussian_smooth, median_filter, percentile_window, tv_prox, NormWindow, PriorKind, PriorSpec};
use xct_core::Volume;

/// Smooth random texture plus a sharp disc, values roughly in [0, 1].
fn test_slice(seed: u64, w: usize, h: usize) -> Slice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> =
        (0..6).map(|_| (rng.random_range(0.05..0.4), rng.random_range(0.05..0.4), rng.random_range(0.0..6.28))).collect();
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let t: f64 = waves.iter().map(|(a, b, p)| (a * x + b * y + p).sin()).sum::<f64>() / 12.0 + 0.5;
            let disc = if (x - w as f64 / 2.0).hypot(y - h as f64 / 2.0) < w as f64 / 4.0 { 0.3 } else { 0.0 };
            (t + disc + rng.random_range(-0.05..0.05)) as f32
        })
        .collect();
    Slice { width: w, height: h, data }
}

fn total_variation(s: &Slice) -> f64 {
    let (w, h) = (s.width, s.height);
    let mut tv = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = s.get(x, y) as f64;
            let dx = if x + 1 < w { s.get(x + 1, y) as f64 - v } else { 0.0 };
            let dy = if y + 1 < h { s.get(x, y + 1) as f64 - v } else { 0.0 };
            tv += dx.hypot(dy);
        }
    }
    tv
}

fn mean(s: &Slice) -> f64 {
    s.data.iter().map(|&v| v as f64).sum::<f64>() / s.data.len() as f64
}

fn rms(a: &[f32]) -> f64 {
    (a.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gaussian_semigroup(seed in any::<u64>(), sigma in 0.8f64..3.0) {
        let s = test_slice(seed, 48, 40);
        let twice = gaussian_smooth(&gaussian_smooth(&s, sigma), sigma);
        let once = gaussian_smooth(&s, sigma * 2f64.sqrt());
        let diff: Vec<f32> = twice.data.iter().zip(&once.data).map(|(a, b)| a - b).collect();
        prop_assert!(rms(&diff) <= 0.02 * rms(&once.data), "{} vs {}", rms(&diff), rms(&once.data));
    }

    #[test]
    fn gaussian_preserves_mean(seed in any::<u64>(), sigma in 0.3f64..4.0) {
        let s = test_slice(seed, 33, 21);
        prop_assert!((mean(&gaussian_smooth(&s, sigma)) - mean(&s)).abs() < 1e-5);
    }

    #[test]
    fn tv_prox_lowers_tv_and_keeps_mean(seed in any::<u64>(), weight in 0.005f64..0.3) {
        let s = test_slice(seed, 40, 40);
        let u = tv_prox(&s, weight, 60);
        prop_assert!(total_variation(&u) <= total_variation(&s));
        prop_assert!((mean(&u) - mean(&s)).abs() < 1e-5);
        // u is a better point of the prox objective than f itself.
        let fid: f64 = u.data.iter().zip(&s.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() * 0.5;
        prop_assert!(fid + weight * total_variation(&u) <= weight * total_variation(&s) * (1.0 + 1e-6));
    }

    #[test]
    fn constants_pass_through(c in -5.0f32..5.0, sigma in 0.3f64..3.0, radius in 1usize..4) {
        let s = Slice { width: 17, height: 12, data: vec![c; 17 * 12] };
        for out in [gaussian_smooth(&s, sigma), tv_prox(&s, 0.1, 20), median_filter(&s, radius)] {
            prop_assert!(out.data.iter().all(|&v| (v - c).abs() <= 1e-5 * c.abs().max(1.0)));
        }
    }
}

#[test]
fn median_is_idempotent_on_step_edge() {
    let (w, h) = (20, 10);
    let data = (0..w * h).map(|i| if i % w < 9 { 0.0 } else { 1.0 }).collect();
    let s = Slice { width: w, height: h, data };
    assert_eq!(median_filter(&s, 2), s);
}

fn phantom() -> Volume {
    make_part_phantom([32, 32, 8], 0.05, 2, &PartSpec::desk(32, 0.05)).unwrap()
}

#[test]
fn volume_prior_is_slicewise_in_window_units() {
    let v = phantom();
    let w = NormWindow::new(-0.01, 0.2).unwrap();
    let spec = PriorSpec::new(PriorKind::GaussianSmooth { sigma: 1.2 }).with_window(w);
    let out = apply_prior(&v, &spec).unwrap();
    for z in [0, 3, 7] {
        let mut s = v.slice(z);
        s.data.iter_mut().for_each(|x| *x = w.normalize(*x));
        let mut expect = gaussian_smooth(&s, 1.2);
        expect.data.iter_mut().for_each(|x| *x = w.denormalize(*x));
        let got = out.slice(z);
        for (a, b) in got.data.iter().zip(&expect.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn prior_output_is_independent_of_window_for_linear_filters() {
    // Gaussian smoothing commutes with the affine normalization.
    let v = phantom();
    let kind = PriorKind::GaussianSmooth { sigma: 0.9 };
    let a = apply_prior(&v, &PriorSpec::new(kind.clone()).with_window(percentile_window(&v))).unwrap();
    let b = apply_prior(&v, &PriorSpec::new(kind).with_window(NormWindow::new(-1.0, 3.0).unwrap())).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn tv_weight_is_relative_to_window() {
    // A narrow window magnifies contrasts in normalized units, so the same
    // weight removes relatively less.
    let v = phantom();
    let kind = PriorKind::TvProx { weight: 0.05, inner_iters: 40 };
    let tv_of = |vol: &Volume| (0..8).map(|z| total_variation(&vol.slice(z))).sum::<f64>();
    let wide = apply_prior(&v, &PriorSpec::new(kind.clone()).with_window(NormWindow::new(0.0, 1.5).unwrap())).unwrap();
    let narrow = apply_prior(&v, &PriorSpec::new(kind).with_window(NormWindow::new(0.0, 0.15).unwrap())).unwrap();
    assert!(tv_of(&wide) < tv_of(&narrow));
    assert!(tv_of(&narrow) < tv_of(&v));
}
