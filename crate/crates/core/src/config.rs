use serde::{Deserialize, Serialize};

/// Numeric tolerances threaded explicitly through every operation.
///
/// There is no global state; callers construct one of these (usually
/// [`NumericConfig::default`]) and pass it down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericConfig {
    /// Relative tolerance for rank decisions: singular values below
    /// `tol_rank * max(1, sigma_max)` count as zero.
    pub tol_rank: f64,
    /// Relative residual threshold for accepting a regression solution.
    pub residual_tol: f64,
    /// Euclidean distance below which two reconstructed points merge.
    pub dedup_tol: f64,
    /// Absolute slack allowed on safe-set margin checks.
    pub tol_margin_abs: f64,
    /// Relative slack allowed on safe-set margin checks.
    pub tol_margin_rel: f64,
    /// Measurement-noise standard deviation assumed by the estimator.
    /// Widens the residual acceptance threshold by `2 * noise_std * sqrt(rows)`
    /// so that noise-level least-squares residuals are not mistaken for
    /// attack-inconsistent combinations. Zero recovers the exact test.
    pub noise_std: f64,
    /// Number of sampled states used when falsifying barrier feasibility.
    pub feasibility_samples: usize,
    /// Iteration budget for the quadratic-program solver.
    pub qp_max_iter: usize,
    /// Feasibility/optimality tolerance for the quadratic-program solver.
    pub qp_tol: f64,
}

impl Default for NumericConfig {
    fn default() -> Self {
        Self {
            tol_rank: 1e-8,
            residual_tol: 1e-3,
            dedup_tol: 1e-2,
            tol_margin_abs: 1e-9,
            tol_margin_rel: 1e-9,
            noise_std: 0.0,
            feasibility_samples: 200,
            qp_max_iter: 200,
            qp_tol: 1e-10,
        }
    }
}

impl NumericConfig {
    /// Margin slack for a check whose natural magnitude is `scale`.
    pub fn margin_slack(&self, scale: f64) -> f64 {
        self.tol_margin_abs + self.tol_margin_rel * scale.abs()
    }
}
