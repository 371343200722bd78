//! Fits the no-reference quality model shipped as the default scorer.
//!
//! Reference statistics come from clean slices of seeded part phantoms at
//! 64³ and 128³; the distance scale from the same slices with Gaussian
//! noise at 10% of their range.
//!
//! `cargo run --release -p xct-core --example calibrate_noref [OUT]`
//! (default `crates/core/src/quality/default_model.toml`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use xct_core::model::Slice;
use xct_core::phantom::{make_part_phantom, PartSpec};
use xct_core::quality::{brisque_features, NoRefModel};

const VOXEL: f64 = 0.05;
const NOISE: f64 = 0.10;
const SCALE_FLOOR: f64 = 0.05;

fn with_noise(s: &Slice, frac: f64, seed: u64) -> Slice {
    let (lo, hi) = s.data.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let normal = Normal::new(0.0, frac * (hi - lo) as f64).expect("valid sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Slice { data: s.data.iter().map(|&v| v + normal.sample(&mut rng) as f32).collect(), ..s.clone() }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "crates/core/src/quality/default_model.toml".into());
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for n in [64usize, 128] {
        for seed in 0..20u64 {
            // Seeds 1000+ keep the calibration set apart from test phantoms.
            let v = make_part_phantom([n, n, n], VOXEL, 1000 + seed, &PartSpec::desk(n, VOXEL))?;
            for z in [n / 2, n / 3, 2 * n / 3] {
                let s = v.slice(z);
                clean.push(brisque_features(&s)?);
                noisy.push(brisque_features(&with_noise(&s, NOISE, seed * 7 + z as u64))?);
            }
        }
    }
    let mut model = NoRefModel::fit(&clean, &noisy, SCALE_FLOOR)?;
    model.note = format!(
        "calibrate_noref: {} clean / {} noisy slices, part phantoms 64^3 and 128^3, noise {NOISE} of range, scale floor {SCALE_FLOOR}",
        clean.len(),
        noisy.len()
    );
    let max_clean = clean.iter().map(|f| model.score_features(f)).fold(0.0, f64::max);
    let min_noisy = noisy.iter().map(|f| model.score_features(f)).fold(100.0, f64::min);
    println!("d_scale = {:.4}, clean max score {max_clean:.2}, noisy min score {min_noisy:.2}", model.d_scale);
    std::fs::write(&out, model.to_toml())?;
    println!("wrote {out}");
    Ok(())
}
