//! The full reconstruction: beam-hardening correction, FDK start, then `K`
//! rounds of prior, weight selection and regularized CG update.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cgsolver::{solve_regularized, CgReport};
use crate::error::{Error, Result, Stage};
use crate::fdk::fdk_reconstruct;
use crate::model::{ConeBeamGeometry, ProjectionSet, ReconParams, Volume, WarmStart};
use crate::prior::{apply_prior, percentile_window, NormWindow, PriorSpec};
use crate::projector::{CenterRestriction, ConeProjector};
use crate::quality::{psnr_masked, ssim_volume, SliceScorer};
use crate::regsel::{self, Candidate};

/// Evaluates the polynomial `coeffs[0] + coeffs[1] t + ...` (Horner).
pub fn poly_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn poly_derivative(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, c)| acc * t + k as f64 * c)
}

/// Maps every measurement through the correction polynomial. The polynomial
/// must be strictly increasing over the observed data range; an empty list
/// is the identity.
pub fn correct_beam_hardening(p: &ProjectionSet, coeffs: &[f64]) -> Result<ProjectionSet> {
    if coeffs.is_empty() || coeffs == [0.0, 1.0] {
        return Ok(p.clone());
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("beam-hardening coefficients must be finite".into()));
    }
    let (lo, hi) = p
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v as f64), h.max(v as f64)));
    if lo.is_finite() {
        // A polynomial of degree d changes monotonicity at most d - 1 times;
        // a dense sampling of the derivative catches any sign change.
        const SAMPLES: usize = 4096;
        for i in 0..=SAMPLES {
            let t = lo + (hi - lo) * i as f64 / SAMPLES as f64;
            if poly_derivative(coeffs, t) <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "correction polynomial is not increasing at {t:.4} (data range [{lo:.4}, {hi:.4}])"
                )));
            }
        }
    }
    Ok(p.map_values(|v| poly_eval(coeffs, v as f64) as f32))
}

/// How each outer iteration chooses its regularization weight.
#[derive(Clone, Copy)]
pub enum BetaPolicy<'a> {
    Adaptive(&'a dyn SliceScorer),
    Fixed(f64),
}

/// Ground truth for per-iteration metrics.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub volume: &'a Volume,
    /// Voxels included in the metrics; all when absent.
    pub mask: Option<&'a [bool]>,
    pub peak: f64,
}

impl Reference<'_> {
    pub fn metrics(&self, x: &Volume) -> Result<Metrics> {
        self.volume.check_dims(x.dims())?;
        let all;
        let mask = match self.mask {
            Some(m) => m,
            None => {
                all = vec![true; x.len()];
                &all
            }
        };
        Ok(Metrics {
            psnr: psnr_masked(x.data(), self.volume.data(), mask, self.peak)?,
            ssim: ssim_volume(x, self.volume, self.mask)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
}

/// Wall-clock seconds per stage of one outer iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub prior: f64,
    pub selection: f64,
    pub update: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub beta: f64,
    /// True when selection failed and `beta` is the fallback value.
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Candidate>,
    pub cg: CgReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    pub seconds: StageTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub window: [f64; 2],
    pub fdk_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_metrics: Option<Metrics>,
    pub iterations: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn betas(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.beta).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("trace serializes")
    }
}

/// Everything that shapes a run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    #[serde(default)]
    pub params: ReconParams,
    pub prior: PriorSpec,
    /// Ascending beam-hardening correction coefficients; empty = identity.
    #[serde(default)]
    pub bh_coeffs: Vec<f64>,
}

/// Beam-hardening correction followed by FDK: the starting image.
pub fn initial_reconstruction(p_raw: &ProjectionSet, g: &ConeBeamGeometry, cfg: &ReconConfig) -> Result<(ProjectionSet, Volume)> {
    let p = correct_beam_hardening(p_raw, &cfg.bh_coeffs).map_err(|e| e.in_stage(Stage::BeamHardening))?;
    let x0 = fdk_reconstruct(&p, g, cfg.params.filter).map_err(|e| e.in_stage(Stage::Fdk))?;
    Ok((p, x0))
}

/// Runs the alternation with the given weight policy. `on_iteration` sees
/// each iterate and its record as soon as it is available.
pub fn reconstruct_with(
    p_raw: &ProjectionSet,
    g: &ConeBeamGeometry,
    cfg: &ReconConfig,
    policy: BetaPolicy<'_>,
    reference: Option<Reference<'_>>,
    on_iteration: &mut dyn FnMut(usize, &Volume, &IterationRecord),
) -> Result<(Volume, IterationTrace)> {
    let validate = || -> Result<()> {
        g.validate()?;
        p_raw.check_geometry(g)?;
        cfg.params.validate(g.det_rows)?;
        cfg.prior.validate()?;
        if let BetaPolicy::Fixed(b) = policy {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::InvalidParameter(format!("fixed beta must be finite and >= 0, got {b}")));
            }
        }
        Ok(())
    };
    validate().map_err(|e| e.in_stage(Stage::Validation))?;
    let params = &cfg.params;

    let t0 = Instant::now();
    let (p, mut x) = initial_reconstruction(p_raw, g, cfg)?;
    let fdk_seconds = t0.elapsed().as_secs_f64();
    let window: NormWindow = cfg.prior.window.unwrap_or_else(|| percentile_window(&x));
    let prior = cfg.prior.clone().with_window(window);
    let mut trace = IterationTrace {
        window: [window.lo, window.hi],
        fdk_seconds,
        initial_metrics: reference.map(|r| r.metrics(&x)).transpose()?,
        iterations: Vec::with_capacity(params.outer_iters),
    };
    if params.outer_iters == 0 {
        return Ok((x, trace));
    }

    let restriction = CenterRestriction::new(g, params.center_rows).map_err(|e| e.in_stage(Stage::Validation))?;
    let y_c = restriction.extract_rows(&p).map_err(|e| e.in_stage(Stage::Validation))?;
    let op = ConeProjector::new(g)?;
    let y = p.to_f64();
    drop(p);
    let grid = params.regsel.grid();
    let mut prev_beta: Option<f64> = None;

    for k in 0..params.outer_iters {
        let mut seconds = StageTimes::default();
        let t = Instant::now();
        let z = apply_prior(&x, &prior).map_err(|e| e.in_stage(Stage::Prior))?;
        seconds.prior = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let (beta, fallback, candidates) = match policy {
            BetaPolicy::Fixed(b) => (b, false, Vec::new()),
            BetaPolicy::Adaptive(scorer) => {
                let cands = regsel::evaluate_candidates(&z, &restriction, &y_c, &params.regsel, params.cg_iters, scorer)
                    .map_err(|e| e.in_stage(Stage::Selection))?;
                match regsel::select(cands.clone(), &restriction, &params.regsel) {
                    Ok(sel) => (sel.beta, false, sel.candidates),
                    Err(Error::Selection(_)) => {
                        let fb = prev_beta.unwrap_or(*grid.last().expect("grid is not empty"));
                        (fb, true, cands)
                    }
                    Err(e) => return Err(e.in_stage(Stage::Selection)),
                }
            }
        };
        seconds.selection = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let x_start = match params.warm_start {
            WarmStart::Previous => Some(x.to_f64()),
            WarmStart::Prior => None,
        };
        drop(x);
        let z64 = z.to_f64();
        drop(z);
        let x_start = x_start.unwrap_or_else(|| z64.clone());
        let (x_new, cg) =
            solve_regularized(&op, &y, &z64, beta, x_start, params.cg_iters).map_err(|e| e.in_stage(Stage::Update))?;
        drop(z64);
        x = Volume::from_f64(g.vol_dims, g.voxel_size, &x_new).map_err(|e| e.in_stage(Stage::Update))?;
        drop(x_new);
        seconds.update = t.elapsed().as_secs_f64();

        let record = IterationRecord {
            beta,
            fallback,
            candidates,
            cg,
            metrics: reference.map(|r| r.metrics(&x)).transpose()?,
            seconds,
        };
        on_iteration(k, &x, &record);
        trace.iterations.push(record);
        prev_beta = Some(beta);
    }
    Ok((x, trace))
}

/// Adaptive reconstruction: the weight of every outer iteration is chosen
/// on the center slab by `scorer`.
pub fn run_reconstruction(
    p_raw: &ProjectionSet,
    g: &ConeBeamGeometry,
    cfg: &ReconConfig,
    scorer: &dyn SliceScorer,
) -> Result<(Volume, IterationTrace)> {
    reconstruct_with(p_raw, g, cfg, BetaPolicy::Adaptive(scorer), None, &mut |_, _, _| {})
}

/// The same alternation with a constant weight.
pub fn run_fixed_beta(p_raw: &ProjectionSet, g: &ConeBeamGeometry, cfg: &ReconConfig, beta: f64) -> Result<(Volume, IterationTrace)> {
    reconstruct_with(p_raw, g, cfg, BetaPolicy::Fixed(beta), None, &mut |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proj(values: Vec<f32>) -> ProjectionSet {
        let n = values.len();
        ProjectionSet::from_data(vec![0.0], 1, n, values).unwrap()
    }

    #[test]
    fn polynomial_evaluation() {
        assert_eq!(poly_eval(&[0.0, 1.0, 0.2], 1.0), 1.2);
        assert_eq!(poly_eval(&[], 3.0), 0.0);
        assert_eq!(poly_derivative(&[5.0, 1.0, 0.5], 2.0), 3.0);
    }

    #[test]
    fn identity_and_quadratic_correction() {
        let p = proj(vec![0.0, 0.5, 1.0, 2.0]);
        assert_eq!(correct_beam_hardening(&p, &[0.0, 1.0]).unwrap(), p);
        assert_eq!(correct_beam_hardening(&p, &[]).unwrap(), p);
        let c = correct_beam_hardening(&p, &[0.0, 1.0, 0.2]).unwrap();
        assert!((c.data()[2] - 1.2).abs() < 1e-6);
    }

    #[test]
    fn non_monotone_correction_rejected() {
        let p = proj(vec![0.0, 1.0, 3.0]);
        let err = correct_beam_hardening(&p, &[0.0, 1.0, -0.25]).unwrap_err();
        assert!(err.to_string().contains("not increasing"));
        // Same polynomial is fine where it is still increasing.
        assert!(correct_beam_hardening(&proj(vec![0.0, 1.5]), &[0.0, 1.0, -0.25]).is_ok());
    }
}
