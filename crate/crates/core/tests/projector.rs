use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xct_core::linalg::{dot, LinearOperator};
use xct_core::model::{full_scan_angles, short_scan_angles};
use xct_core::phantom::desk_geometry;
use xct_core::projector::{forward_project, restrict_center, ConeProjector, CenterRestriction};
use xct_core::{ConeBeamGeometry, ScanMode, Volume};

mod support;
use support::dense_oracle;

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn check_against_oracle(g: &ConeBeamGeometry, seed: u64) {
    let m = dense_oracle(g);
    let op = ConeProjector::new(g).unwrap();
    assert_eq!(m.len(), op.range_len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..3 {
        let x = random_vec(op.domain_len(), &mut rng);
        let expect: Vec<f64> = m.iter().map(|row| dot(row, &x)).collect();
        let mut got = vec![0.0; op.range_len()];
        op.apply(&x, &mut got);
        assert!(rel_err(&got, &expect) < 1e-5, "forward: {}", rel_err(&got, &expect));

        let y = random_vec(op.range_len(), &mut rng);
        let mut expect = vec![0.0; op.domain_len()];
        for (row, yi) in m.iter().zip(&y) {
            for (e, a) in expect.iter_mut().zip(row) {
                *e += a * yi;
            }
        }
        let mut got = vec![0.0; op.domain_len()];
        op.apply_adjoint(&y, &mut got);
        assert!(rel_err(&got, &expect) < 1e-5, "adjoint: {}", rel_err(&got, &expect));
    }
}

#[test]
fn dense_oracle_full_scan_8() {
    check_against_oracle(&desk_geometry(8, 0.05, 12, ScanMode::FullScan), 1);
}

#[test]
fn dense_oracle_short_scan_8() {
    check_against_oracle(&desk_geometry(8, 0.05, 10, ScanMode::ShortScan), 2);
}

#[test]
fn dense_oracle_anisotropic_grid() {
    // Non-cubic volume, detector wider than tall, odd counts, oblique angles.
    let g = ConeBeamGeometry {
        sod: 3.0,
        sdd: 5.0,
        det_rows: 7,
        det_cols: 11,
        pixel_pitch: 0.09,
        vol_dims: [8, 6, 5],
        voxel_size: 0.05,
        angles: full_scan_angles(9, 0.3),
        scan_mode: ScanMode::FullScan,
    };
    check_against_oracle(&g, 3);
}

#[test]
fn adjoint_dot_product_100_trials() {
    let g = desk_geometry(32, 0.05, 24, ScanMode::FullScan);
    let op = ConeProjector::new(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut ax = vec![0.0; op.range_len()];
    let mut aty = vec![0.0; op.domain_len()];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = random_vec(op.domain_len(), &mut rng);
        let y = random_vec(op.range_len(), &mut rng);
        op.apply(&x, &mut ax);
        op.apply_adjoint(&y, &mut aty);
        let (l, r) = (dot(&ax, &y), dot(&x, &aty));
        worst = worst.max((l - r).abs() / l.abs().max(r.abs()));
    }
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn rotated_volume_matches_rotated_views() {
    // Rotating the object by +90 degrees about z is the same as rotating
    // the gantry by -90 degrees.
    let n = 16;
    let g = desk_geometry(n, 0.05, 8, ScanMode::FullScan);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<f32> = (0..n * n * n).map(|_| rng.random_range(0.0..1.0)).collect();
    let v = Volume::from_data([n, n, n], 0.05, data).unwrap();
    let mut rot = Volume::zeros([n, n, n], 0.05);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                // (x, y) -> (-y, x) in centered coordinates.
                let (xr, yr) = (n - 1 - y, x);
                let i = rot.index(xr, yr, z);
                rot.data_mut()[i] = v.get(x, y, z);
            }
        }
    }
    let shifted = g.with_angles(g.angles.iter().map(|a| a + std::f64::consts::FRAC_PI_2).collect());
    let p0 = forward_project(&v, &g).unwrap();
    let p1 = forward_project(&rot, &shifted).unwrap();
    let a: Vec<f64> = p0.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = p1.data().iter().map(|&v| v as f64).collect();
    assert!(rel_err(&b, &a) < 1e-5, "{}", rel_err(&b, &a));
}

fn slab_fixture() -> (ConeBeamGeometry, CenterRestriction) {
    let g = desk_geometry(32, 0.05, 24, ScanMode::FullScan);
    let r = CenterRestriction::new(&g, 8).unwrap();
    (g, r)
}

#[test]
fn restriction_matches_full_projection_for_slab_support() {
    let (g, r) = slab_fixture();
    let [nx, ny, nz] = g.vol_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut full = vec![0.0; nx * ny * nz];
    let plane = nx * ny;
    for v in &mut full[r.slab_offset * plane..(r.slab_offset + r.slab_depth()) * plane] {
        *v = rng.random_range(0.0..1.0);
    }
    let op = ConeProjector::new(&g).unwrap();
    let mut p_full = vec![0.0; op.range_len()];
    op.apply(&full, &mut p_full);
    let p_full = xct_core::ProjectionSet::from_f64(&g, &p_full).unwrap();
    let expect: Vec<f64> = r.extract_rows(&p_full).unwrap().to_f64();

    let op_c = ConeProjector::new(&r.geometry).unwrap();
    let mut got = vec![0.0; op_c.range_len()];
    op_c.apply(&r.slab_of_f64(&full), &mut got);
    assert!(rel_err(&got, &expect) < 1e-6);
}

#[test]
fn center_rows_do_not_see_outside_the_slab() {
    // Rows the restriction keeps must not depend on voxels it drops.
    let (g, r) = slab_fixture();
    let [nx, ny, nz] = g.vol_dims;
    let plane = nx * ny;
    let mut outside = vec![1.0; nx * ny * nz];
    for v in &mut outside[r.slab_offset * plane..(r.slab_offset + r.slab_depth()) * plane] {
        *v = 0.0;
    }
    let op = ConeProjector::new(&g).unwrap();
    let mut p = vec![0.0; op.range_len()];
    op.apply(&outside, &mut p);
    let p = xct_core::ProjectionSet::from_f64(&g, &p).unwrap();
    let rows = r.extract_rows(&p).unwrap();
    assert!(rows.data().iter().all(|&v| v == 0.0));
}

#[test]
fn restrict_center_pairs_rows_with_geometry() {
    let g = desk_geometry(32, 0.05, 6, ScanMode::FullScan);
    let p = forward_project(&Volume::filled(g.vol_dims, 0.05, 1.0), &g).unwrap();
    let (y_c, r) = restrict_center(&p, &g, 16).unwrap();
    assert_eq!(r.row_offset, 8);
    assert_eq!(y_c.det_rows(), 16);
    y_c.check_geometry(&r.geometry).unwrap();
    assert!(restrict_center(&p, &g, 15).is_err());
}

#[test]
fn short_scan_angles_cover_span() {
    let a = short_scan_angles(10, 4.0, 0.5);
    assert_eq!(a.len(), 10);
    assert_eq!(a[0], 0.5);
    assert!((a[9] - 4.5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = desk_geometry(12, 0.05, 6, ScanMode::FullScan);
        let op = ConeProjector::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_vec(op.domain_len(), &mut rng);
        let y = random_vec(op.domain_len(), &mut rng);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (mut px, mut py, mut pc) = (vec![0.0; op.range_len()], vec![0.0; op.range_len()], vec![0.0; op.range_len()]);
        op.apply(&x, &mut px);
        op.apply(&y, &mut py);
        op.apply(&combo, &mut pc);
        let expect: Vec<f64> = px.iter().zip(&py).map(|(p, q)| a * p + b * q).collect();
        let scale = expect.iter().chain(&px).map(|v| v.abs()).fold(1e-12, f64::max);
        for (g, e) in pc.iter().zip(&expect) {
            prop_assert!((g - e).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn nonnegative_volume_gives_nonnegative_projections(seed in any::<u64>(), views in 2usize..8) {
        let g = desk_geometry(10, 0.05, views, ScanMode::ShortScan);
        let op = ConeProjector::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..op.domain_len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut p = vec![0.0; op.range_len()];
        op.apply(&x, &mut p);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        let mut back = vec![0.0; op.domain_len()];
        op.apply_adjoint(&p, &mut back);
        prop_assert!(back.iter().all(|&v| v >= 0.0));
    }
}
