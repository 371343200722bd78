use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Slice;
use crate::quality::nss::{brisque_features, N_FEATURES};
use crate::quality::SliceScorer;

/// Model shipped with the crate; regenerate with the `calibrate_noref` example.
pub const DEFAULT_MODEL_TOML: &str = include_str!("default_model.toml");

/// Distance-based no-reference score.
///
/// Each feature is standardized by reference statistics; the RMS of the
/// standardized deviations `d` maps to `100 (1 - exp(-d / d_scale))`, so
/// 0 is a perfect match to the reference population and the score grows
/// towards 100 as the slice departs from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoRefModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub d_scale: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl Default for NoRefModel {
    fn default() -> Self {
        Self::from_toml(DEFAULT_MODEL_TOML).expect("shipped model is valid")
    }
}

impl NoRefModel {
    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != N_FEATURES || self.scale.len() != N_FEATURES {
            return Err(Error::InvalidParameter(format!(
                "model needs {N_FEATURES} means and scales, got {} and {}",
                self.mean.len(),
                self.scale.len()
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) || self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter("model means must be finite and scales positive".into()));
        }
        if !(self.d_scale.is_finite() && self.d_scale > 0.0) {
            return Err(Error::InvalidParameter(format!("d_scale must be positive, got {}", self.d_scale)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: NoRefModel = toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("no-ref model: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Fits reference statistics on `clean` feature vectors, then picks
    /// `d_scale` halfway (geometrically) between the largest clean distance
    /// mapped to a score of 20 and the smallest `degraded` distance mapped to 60.
    pub fn fit(clean: &[Vec<f64>], degraded: &[Vec<f64>], scale_floor: f64) -> Result<Self> {
        if clean.len() < 2 || degraded.is_empty() {
            return Err(Error::InvalidParameter("fit needs at least two clean and one degraded sample".into()));
        }
        let n = clean.len() as f64;
        let mut mean = vec![0.0; N_FEATURES];
        for f in clean {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let scale: Vec<f64> = (0..N_FEATURES)
            .map(|i| {
                let var = clean.iter().map(|f| (f[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
                var.sqrt().max(scale_floor * mean[i].abs()).max(1e-6)
            })
            .collect();
        let mut model = NoRefModel { mean, scale, d_scale: 1.0, note: String::new() };
        let d_clean = clean.iter().map(|f| model.distance(f)).fold(0.0, f64::max);
        let d_bad = degraded.iter().map(|f| model.distance(f)).fold(f64::INFINITY, f64::min);
        // score(d) = 20 at d = 0.2231 s, 60 at d = 0.9163 s.
        let s_hi = d_clean / (1.0f64 / 0.8).ln();
        let s_lo = d_bad / 2.5f64.ln();
        model.d_scale = (s_hi.max(1e-9) * s_lo.max(1e-9)).sqrt();
        model.validate()?;
        Ok(model)
    }

    /// RMS standardized distance of a feature vector to the reference.
    pub fn distance(&self, f: &[f64]) -> f64 {
        let s: f64 = f
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), sc)| ((v - m) / sc).powi(2))
            .sum();
        (s / N_FEATURES as f64).sqrt()
    }

    pub fn score_features(&self, f: &[f64]) -> f64 {
        let d = self.distance(f);
        if !d.is_finite() {
            return 100.0;
        }
        (100.0 * (1.0 - (-d / self.d_scale).exp())).clamp(0.0, 100.0)
    }

    pub fn score_slice(&self, s: &Slice) -> Result<f64> {
        Ok(self.score_features(&brisque_features(s)?))
    }
}

impl SliceScorer for NoRefModel {
    fn score(&self, s: &Slice) -> Result<f64> {
        self.score_slice(s)
    }
}
