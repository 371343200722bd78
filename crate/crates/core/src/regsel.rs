//! Grid search for the regularization weight on the center slab.
//!
//! Every grid value `mu_i = a r^(i-1)` gets a short CG reconstruction of the
//! slab, regularized towards the prior output; the slab's middle slice is
//! scored and the first strict improvement over the running best wins.

use serde::{Deserialize, Serialize};

use crate::cgsolver::solve_regularized;
use crate::error::{Error, Result};
use crate::model::{ProjectionSet, RegSelParams, ScoredSlices, Slice, Volume};
use crate::projector::{CenterRestriction, ConeProjector};
use crate::quality::SliceScorer;

/// Outcome for one grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub mu: f64,
    /// Absent when the candidate failed; see `error`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub cg_iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub beta: f64,
    /// Zero-based grid index of `beta`.
    pub index: usize,
    pub candidates: Vec<Candidate>,
    /// Voxel updates spent, `evaluated candidates x slab voxels`.
    pub voxels_processed: usize,
}

impl Selection {
    /// Diagnostics as a TOML table (`[[candidates]]` rows).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("selection serializes")
    }
}

/// Index of the middle slice of the slab, in slab coordinates.
pub fn scored_slice(restriction: &CenterRestriction) -> usize {
    restriction.slab_depth() / 2
}

/// The selection rule: walk the scores in grid order and keep the first
/// strict improvement over `initial`. Failed candidates (`None`) are skipped.
pub fn pick(scores: &[Option<f64>], initial: f64) -> Option<usize> {
    let mut best = initial;
    let mut chosen = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if s < best {
                best = s;
                chosen = Some(i);
            }
        }
    }
    chosen
}

/// Reconstructs and scores every grid candidate, one at a time.
///
/// A candidate whose solve or scoring fails is recorded with its error and
/// excluded; the call fails only when every candidate fails.
pub fn evaluate_candidates(
    z: &Volume,
    restriction: &CenterRestriction,
    y_c: &ProjectionSet,
    params: &RegSelParams,
    cg_iters: usize,
    scorer: &dyn SliceScorer,
) -> Result<Vec<Candidate>> {
    params.validate()?;
    let g = &restriction.geometry;
    y_c.check_geometry(g)?;
    // The slab is centered, so the full depth follows from its offset.
    let full_dims = [g.vol_dims[0], g.vol_dims[1], 2 * restriction.slab_offset + restriction.slab_depth()];
    z.check_dims(full_dims)?;
    let op = ConeProjector::new(g)?;
    let r_c = restriction.slab_of(z).to_f64();
    let y = y_c.to_f64();
    let [nx, ny, nz] = g.vol_dims;
    let plane = nx * ny;
    let slices = match params.scored {
        ScoredSlices::Center => {
            let k = scored_slice(restriction);
            k..k + 1
        }
        ScoredSlices::SlabMean => 0..nz,
    };

    let mut out = Vec::with_capacity(params.grid_size);
    let mut first_error = None;
    for mu in params.grid() {
        let result = solve_regularized(&op, &y, &r_c, mu, r_c.clone(), cg_iters).and_then(|(v, rep)| {
            let mut s = 0.0;
            for k in slices.clone() {
                let data = v[k * plane..(k + 1) * plane].iter().map(|&x| x as f32).collect();
                s += scorer.score(&Slice { width: nx, height: ny, data })?;
            }
            let s = s / slices.len() as f64;
            if !s.is_finite() {
                return Err(Error::Numerical(format!("non-finite score for mu = {mu}")));
            }
            Ok((s, rep))
        });
        match result {
            Ok((s, rep)) => out.push(Candidate {
                mu,
                score: Some(s),
                cg_iterations: rep.iterations,
                initial_residual: rep.initial_residual,
                final_residual: rep.final_residual,
                error: None,
            }),
            Err(e) => {
                out.push(Candidate {
                    mu,
                    score: None,
                    cg_iterations: 0,
                    initial_residual: f64::NAN,
                    final_residual: f64::NAN,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if out.iter().all(|c| c.score.is_none()) {
        return Err(first_error.expect("grid is not empty"));
    }
    Ok(out)
}

/// Picks the regularization weight for the current outer iteration.
///
/// Fails with [`Error::Selection`] when no candidate scores below
/// `params.initial_score`.
pub fn regularization_selection(
    z: &Volume,
    restriction: &CenterRestriction,
    y_c: &ProjectionSet,
    params: &RegSelParams,
    cg_iters: usize,
    scorer: &dyn SliceScorer,
) -> Result<Selection> {
    let candidates = evaluate_candidates(z, restriction, y_c, params, cg_iters, scorer)?;
    select(candidates, restriction, params)
}

pub(crate) fn select(candidates: Vec<Candidate>, restriction: &CenterRestriction, params: &RegSelParams) -> Result<Selection> {
    let scores: Vec<Option<f64>> = candidates.iter().map(|c| c.score).collect();
    let evaluated = scores.iter().filter(|s| s.is_some()).count();
    let index = pick(&scores, params.initial_score).ok_or_else(|| {
        Error::Selection(format!("no candidate scored below {}", params.initial_score))
    })?;
    Ok(Selection {
        beta: candidates[index].mu,
        index,
        voxels_processed: evaluated * restriction.geometry.n_voxels(),
        candidates,
    })
}
