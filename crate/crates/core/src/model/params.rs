use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdk::RampFilter;

/// Geometric grid of candidate regularization weights, `a * r^(i-1)` for
/// `i = 1..=n`, and the score that a candidate has to beat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegSelParams {
    pub first_term: f64,
    pub ratio: f64,
    pub grid_size: usize,
    pub initial_score: f64,
    pub scored: ScoredSlices,
}

/// Which slab slices a candidate's score is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoredSlices {
    /// The middle slice of the slab.
    #[default]
    Center,
    /// Mean of the scores of every slab slice.
    SlabMean,
}

impl Default for RegSelParams {
    fn default() -> Self {
        RegSelParams { first_term: 2.0, ratio: 0.5, grid_size: 14, initial_score: 100.0, scored: ScoredSlices::Center }
    }
}

impl RegSelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.first_term.is_finite() && self.first_term > 0.0) {
            return Err(Error::InvalidParameter(format!("grid first term must be positive, got {}", self.first_term)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidParameter(format!("grid ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if self.grid_size == 0 {
            return Err(Error::InvalidParameter("grid size must be at least 1".into()));
        }
        if !self.initial_score.is_finite() {
            return Err(Error::InvalidParameter("initial score must be finite".into()));
        }
        Ok(())
    }

    /// The candidate weights in sweep order (largest first).
    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid_size).map(|i| self.first_term * self.ratio.powi(i as i32)).collect()
    }
}

/// Where each image-update CG solve starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Start from the prior output of the current iteration.
    #[default]
    Prior,
    /// Start from the previous iterate.
    Previous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconParams {
    pub outer_iters: usize,
    pub cg_iters: usize,
    pub regsel: RegSelParams,
    pub center_rows: usize,
    pub filter: RampFilter,
    pub warm_start: WarmStart,
}

impl Default for ReconParams {
    fn default() -> Self {
        ReconParams {
            outer_iters: 3,
            cg_iters: 10,
            regsel: RegSelParams::default(),
            center_rows: 16,
            filter: RampFilter::RamLak,
            warm_start: WarmStart::Prior,
        }
    }
}

impl ReconParams {
    pub fn validate(&self, det_rows: usize) -> Result<()> {
        if self.cg_iters == 0 {
            return Err(Error::InvalidParameter("cg_iters must be at least 1".into()));
        }
        check_center_rows(self.center_rows, det_rows)?;
        self.regsel.validate()
    }
}

pub(crate) fn check_center_rows(center_rows: usize, det_rows: usize) -> Result<()> {
    if center_rows == 0 || center_rows > det_rows {
        return Err(Error::InvalidParameter(format!(
            "center_rows must lie in 1..={det_rows}, got {center_rows}"
        )));
    }
    if center_rows % 2 != det_rows % 2 {
        return Err(Error::InvalidParameter(format!(
            "center_rows ({center_rows}) must have the same parity as det_rows ({det_rows})"
        )));
    }
    Ok(())
}
