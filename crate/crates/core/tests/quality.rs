use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use xct_core::model::Slice;
use xct_core::phantom::{make_part_phantom, PartSpec};
use xct_core::quality::{brisque_features, intensity_normalize, mscn, psnr, ssim, NoRefModel, SliceScorer, N_FEATURES};

fn phantom_slice(seed: u64, n: usize) -> Slice {
    make_part_phantom([n, n, n], 0.05, seed, &PartSpec::desk(n, 0.05)).unwrap().slice(n / 2)
}

fn add_noise(s: &Slice, sigma: f64, seed: u64) -> Slice {
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Slice { data: s.data.iter().map(|&v| v + normal.sample(&mut rng) as f32).collect(), ..s.clone() }
}

fn range(s: &Slice) -> f64 {
    let (lo, hi) = s.data.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    (hi - lo) as f64
}

#[test]
fn noisier_slices_score_higher() {
    let model = NoRefModel::default();
    let mut ordered = 0;
    let mut pairs = 0;
    for seed in 0..20 {
        let clean = phantom_slice(seed, 64);
        let r = range(&clean);
        let scores: Vec<f64> = [0.0, 0.05, 0.15]
            .iter()
            .map(|&f| {
                let s = if f == 0.0 { clean.clone() } else { add_noise(&clean, f * r, seed) };
                model.score(&s).unwrap()
            })
            .collect();
        for s in &scores {
            assert!((0.0..=100.0).contains(s));
        }
        for i in 0..scores.len() {
            for j in i + 1..scores.len() {
                pairs += 1;
                ordered += (scores[j] > scores[i]) as usize;
            }
        }
    }
    assert!(ordered * 10 >= pairs * 9, "{ordered}/{pairs} pairs ordered");
}

#[test]
fn median_score_rises_with_noise_level() {
    let model = NoRefModel::default();
    let mut medians = Vec::new();
    for level in [0.01, 0.03, 0.05, 0.10] {
        let mut scores: Vec<f64> = (0..20)
            .map(|seed| {
                let clean = phantom_slice(seed, 64);
                model.score(&add_noise(&clean, level * range(&clean), 1000 + seed)).unwrap()
            })
            .collect();
        scores.sort_by(f64::total_cmp);
        medians.push(0.5 * (scores[9] + scores[10]));
    }
    assert!(medians.windows(2).all(|w| w[1] >= w[0]), "{medians:?}");
}

#[test]
fn mscn_of_textured_slice_is_standardized() {
    // Pores plus mild noise: MSCN coefficients of a natural-looking image
    // are close to zero-mean, unit-variance.
    let s = add_noise(&phantom_slice(3, 128), 0.01, 1);
    let c = mscn(&intensity_normalize(&s)).unwrap();
    let m = c.iter().sum::<f64>() / c.len() as f64;
    let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64;
    assert!(m.abs() < 0.05, "mean {m}");
    assert!(var > 0.5 && var < 1.5, "variance {var}");
}

#[test]
fn psnr_decreases_with_noise_variance() {
    let clean = phantom_slice(5, 64);
    let mut last = f64::INFINITY;
    for sigma in [0.001, 0.003, 0.01, 0.03, 0.1] {
        let p = psnr(&add_noise(&clean, sigma, 17).data, &clean.data, 0.15).unwrap();
        assert!(p < last, "sigma {sigma}: {p}");
        last = p;
    }
}

#[test]
fn ssim_decreases_with_noise_variance() {
    let clean = phantom_slice(6, 64);
    let mut last = 1.0 + 1e-12;
    for sigma in [0.001, 0.01, 0.05] {
        let s = ssim(&add_noise(&clean, sigma, 2), &clean, 0.15).unwrap();
        assert!(s < last);
        last = s;
    }
}

#[test]
fn features_are_finite_for_assorted_inputs() {
    for seed in 0..5 {
        let s = add_noise(&phantom_slice(seed, 32), 0.02, seed);
        let f = brisque_features(&s).unwrap();
        assert_eq!(f.len(), N_FEATURES);
        assert!(f.iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn score_is_affine_invariant(seed in 0u64..50, a in 0.1f64..20.0, b in -5.0f64..5.0) {
        let model = NoRefModel::default();
        let s = add_noise(&phantom_slice(seed, 48), 0.01, seed);
        let t = Slice { data: s.data.iter().map(|&v| (a * v as f64 + b) as f32).collect(), ..s.clone() };
        let (x, y) = (model.score(&s).unwrap(), model.score(&t).unwrap());
        prop_assert!((x - y).abs() <= 0.5, "{x} vs {y}");
    }

    #[test]
    fn scores_are_bounded(seed in any::<u64>(), sigma in 0.0f64..1.0) {
        let model = NoRefModel::default();
        let s = add_noise(&phantom_slice(seed % 8, 32), sigma, seed);
        let v = model.score(&s).unwrap();
        prop_assert!((0.0..=100.0).contains(&v));
    }
}
