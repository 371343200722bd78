use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xct_core::fdk::{column_fan_angle, fdk_reconstruct, parker_weights, RampFilter};
use xct_core::phantom::{cylinder_mask, desk_geometry, make_part_phantom, simulate_scan, PartSpec};
use xct_core::projector::forward_project;
use xct_core::quality::psnr_masked;
use xct_core::{ProjectionSet, ScanMode};

mod support;
use support::weight_at;

#[test]
fn parker_conjugate_sums_on_sampled_rays() {
    let g = desk_geometry(64, 0.05, 721, ScanMode::ShortScan);
    let t = parker_weights(&g);
    let nc = g.det_cols;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let view = rng.random_range(0..g.n_views());
        let col = rng.random_range(0..nc);
        let gamma = column_fan_angle(&g, col);
        // The conjugate of (beta, gamma) is (beta +- pi + 2 gamma, -gamma);
        // -gamma is the mirrored column.
        let mirror = nc - 1 - col;
        assert!((column_fan_angle(&g, mirror) + gamma).abs() < 1e-12);
        let beta = g.angles[view] - g.angles[0];
        let sum = t.get(view, col)
            + weight_at(&t, &g, beta + PI + 2.0 * gamma, mirror)
            + weight_at(&t, &g, beta - PI + 2.0 * gamma, mirror);
        assert!((0.99..=1.01).contains(&sum), "view {view} col {col}: {sum}");
    }
}

#[test]
fn full_scan_weights_are_exactly_one() {
    let g = desk_geometry(32, 0.05, 90, ScanMode::FullScan);
    assert!(parker_weights(&g).data.iter().all(|&w| w == 1.0));
}

fn cylinder_psnr(n: usize, views: usize, mode: ScanMode) -> f64 {
    let g = desk_geometry(n, 0.05, views, mode);
    let spec = PartSpec::cylinder(0.4 * n as f64 * 0.05, 0.02);
    let v = make_part_phantom(g.vol_dims, 0.05, 0, &spec).unwrap();
    let p = forward_project(&v, &g).unwrap();
    let x = fdk_reconstruct(&p, &g, RampFilter::RamLak).unwrap();
    let mask = cylinder_mask(g.vol_dims, 0.05, 0.9 * spec.radius, 0.25 * n as f64 * 0.05);
    psnr_masked(x.data(), v.data(), &mask, spec.mu).unwrap()
}

#[test]
fn uniform_cylinder_full_scan() {
    let psnr = cylinder_psnr(64, 360, ScanMode::FullScan);
    assert!(psnr > 30.0, "{psnr}");
}

#[test]
fn uniform_cylinder_short_scan() {
    let psnr = cylinder_psnr(64, 240, ScanMode::ShortScan);
    assert!(psnr > 30.0, "{psnr}");
}

#[test]
fn linearity() {
    let g = desk_geometry(24, 0.05, 40, ScanMode::ShortScan);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = ProjectionSet::for_geometry(&g);
    let mut q = ProjectionSet::for_geometry(&g);
    p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    q.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    let (a, b) = (0.75f32, -2.5f32);
    let sum = ProjectionSet::from_data(
        g.angles.clone(),
        g.det_rows,
        g.det_cols,
        p.data().iter().zip(q.data()).map(|(x, y)| a * x + b * y).collect(),
    )
    .unwrap();
    let xp = fdk_reconstruct(&p, &g, RampFilter::Hann).unwrap();
    let xq = fdk_reconstruct(&q, &g, RampFilter::Hann).unwrap();
    let xs = fdk_reconstruct(&sum, &g, RampFilter::Hann).unwrap();
    let scale = xs.data().iter().fold(0f32, |m, v| m.max(v.abs()));
    for ((s, x), y) in xs.data().iter().zip(xp.data()).zip(xq.data()) {
        assert!((s - (a * x + b * y)).abs() <= 1e-5 * scale);
    }
}

#[test]
fn fewer_views_lower_psnr() {
    let n = 48;
    let g = desk_geometry(n, 0.05, 360, ScanMode::FullScan);
    let spec = PartSpec::desk(n, 0.05);
    let v = make_part_phantom(g.vol_dims, 0.05, 4, &spec).unwrap();
    let p = simulate_scan(&v, &g, f64::INFINITY, None, 0).unwrap();
    let mask = cylinder_mask(g.vol_dims, 0.05, 0.9 * spec.radius, 0.25 * n as f64 * 0.05);
    let mut last = f64::INFINITY;
    for step in [1, 4, 12] {
        let gs = g.subsample_views(step);
        let x = fdk_reconstruct(&p.subsample_views(step), &gs, RampFilter::RamLak).unwrap();
        let psnr = psnr_masked(x.data(), v.data(), &mask, spec.mu).unwrap();
        assert!(psnr < last, "step {step}: {psnr} dB after {last} dB");
        last = psnr;
    }
}
