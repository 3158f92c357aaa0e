//! Input-uncertainty decomposition: calibrate per-feature input variances
//! so the predictive variance reaches a target multiple `t·β*` with weights
//! frozen, then score each feature by the area under its calibration
//! trajectory.
//!
//! For a query `x` the baseline `(ŷ*, β*)` is the prediction at the uniform
//! input prior `δ`. For each factor `t`, the per-feature input variances
//! `σ_j = δ·e^{ρ_j}` are adjusted by Adam on the closed-form Gaussian
//! KL divergence `KL(N(ŷ(σ), β(σ)) ‖ N(ŷ*, t·β*))`, whose mean term keeps
//! the predictive mean pinned while the variance term pulls `β(σ)` to the
//! target. Features the variance head ignores have identically zero
//! gradient, so their `σ` stays at `δ` exactly.
//!
//! The gap score of feature `j` is the trapezoidal area under the curve of
//! calibrated `σ̂_t^{(j)}` against achieved `β_t`, anchored at the `t = 1`
//! point `(β*, δ)`. Scores are raw (unnormalized by the `β` span); rankings
//! are invariant to a common positive scaling of the abscissa.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{backward, forward_cached, ModelError, NetworkConfig, Parameters};
use crate::train::{adam_step, AdamState};

/// Settings for the calibration sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapConfig {
    /// Target variance factors, strictly ascending, each ≥ 1. The `t = 1`
    /// anchor is implicit and always prepended to the profile.
    pub factors: Vec<f64>,
    /// Start each factor's optimization from the previous factor's
    /// calibrated state instead of from `ρ = 0`.
    pub warm_start: bool,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Relative tolerance on `β/(t·β*) − 1` that counts as converged.
    pub tolerance: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            factors: vec![1.1, 1.25, 1.5, 1.75, 2.0, 2.5],
            warm_start: true,
            learning_rate: 0.01,
            max_iterations: 500,
            tolerance: 0.01,
        }
    }
}

impl GapConfig {
    pub fn validate(&self) -> Result<(), GapError> {
        if self.factors.is_empty() {
            return Err(GapError::InvalidConfig("factor list must not be empty"));
        }
        let mut prev = 1.0;
        for (i, &t) in self.factors.iter().enumerate() {
            if !(t >= 1.0 && t.is_finite()) {
                return Err(GapError::InvalidConfig("factors must be finite and at least 1"));
            }
            if i > 0 && t <= prev {
                return Err(GapError::InvalidConfig("factors must be strictly ascending"));
            }
            prev = t;
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GapError::InvalidConfig("learning_rate must be positive and finite"));
        }
        if self.max_iterations == 0 {
            return Err(GapError::InvalidConfig("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(GapError::InvalidConfig("tolerance must be positive and finite"));
        }
        Ok(())
    }
}

/// Calibration failures (non-convergence is a flag, not an error).
#[derive(Debug, Clone, PartialEq)]
pub enum GapError {
    InvalidConfig(&'static str),
    Model(ModelError),
}

impl core::fmt::Display for GapError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GapError::InvalidConfig(msg) => write!(f, "invalid gap config: {msg}"),
            GapError::Model(e) => write!(f, "model error: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GapError {}

impl From<ModelError> for GapError {
    fn from(e: ModelError) -> Self {
        GapError::Model(e)
    }
}

/// Outcome of one factor's calibration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Calibration {
    /// Calibrated per-feature input variances `σ̂_j = δ·e^{ρ_j}`.
    pub sigma: Vec<f64>,
    /// Log-scale coordinates of `sigma` (the optimizer's state).
    pub rho: Vec<f64>,
    /// Predictive variance at `sigma`.
    pub achieved_beta: f64,
    /// Predictive mean at `sigma`.
    pub achieved_mean: f64,
    /// Final KL divergence to the target distribution.
    pub kl: f64,
    pub iterations: usize,
    /// Whether the stopping tolerance was met; when false the fields carry
    /// the best iterate seen (smallest `|β/(t·β*) − 1|`).
    pub converged: bool,
}

/// Closed-form KL divergence between univariate Gaussians,
/// `KL(N(μ, v) ‖ N(μ*, v*))`.
pub fn kl_divergence(mean: f64, var: f64, target_mean: f64, target_var: f64) -> f64 {
    let dm = mean - target_mean;
    0.5 * (crate::fmath::ln(target_var / var) + (var + dm * dm) / target_var - 1.0)
}

/// Calibrates per-feature input variances at one factor `t`, holding the
/// parameters frozen. `warm_rho` seeds the log-scale coordinates (used by
/// the sweep's warm start); `None` starts at `ρ = 0`, i.e. `σ = δ`.
pub fn calibrate_sigma(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
    t: f64,
    gap: &GapConfig,
    warm_rho: Option<&[f64]>,
) -> Result<Calibration, GapError> {
    config.validate()?;
    gap.validate()?;
    if !(t >= 1.0 && t.is_finite()) {
        return Err(GapError::InvalidConfig("factor t must be finite and at least 1"));
    }
    let d = config.input_dim;
    if x.len() != d {
        return Err(GapError::Model(ModelError::DimensionMismatch { expected: d, got: x.len() }));
    }
    if let Some(r) = warm_rho {
        if r.len() != d {
            return Err(GapError::Model(ModelError::DimensionMismatch {
                expected: d,
                got: r.len(),
            }));
        }
    }
    let delta = config.input_prior;
    let baseline_var = vec![delta; d];
    let (base, _) = forward_cached(params, config, x, &baseline_var, None);
    let target_mean = base.mean;
    let target_var = t * base.variance;

    let mut rho: Vec<f64> = warm_rho.map(|r| r.to_vec()).unwrap_or_else(|| vec![0.0; d]);
    let mut sigma: Vec<f64> = rho.iter().map(|&r| delta * crate::fmath::exp(r)).collect();
    let mut state = AdamState::new(d);
    let mut grads = vec![0.0; d];

    let mut best: Option<(f64, Calibration)> = None;
    for iter in 0..=gap.max_iterations {
        let (pred, cache) = forward_cached(params, config, x, &sigma, None);
        let ratio_err = (pred.variance / target_var - 1.0).abs();
        let kl = kl_divergence(pred.mean, pred.variance, target_mean, target_var);
        let snapshot = |converged: bool| Calibration {
            sigma: sigma.clone(),
            rho: rho.clone(),
            achieved_beta: pred.variance,
            achieved_mean: pred.mean,
            kl,
            iterations: iter,
            converged,
        };
        if ratio_err < gap.tolerance {
            return Ok(snapshot(true));
        }
        if best.as_ref().map(|(e, _)| ratio_err < *e).unwrap_or(true) {
            best = Some((ratio_err, snapshot(false)));
        }
        if iter == gap.max_iterations {
            break;
        }
        // KL partials in the predictive moments, chained through the
        // network to the input variances and onto the log scale.
        let g_mean = (pred.mean - target_mean) / target_var;
        let g_var = 0.5 / target_var - 0.5 / pred.variance;
        let (_, g_input_var) = backward(params, config, &cache, g_mean, g_var, None);
        for j in 0..d {
            grads[j] = g_input_var[j] * sigma[j];
        }
        adam_step(&mut rho, &grads, &mut state, gap.learning_rate, 0.9, 0.999, 1e-8);
        for j in 0..d {
            sigma[j] = delta * crate::fmath::exp(rho[j]);
        }
    }
    Ok(best.expect("loop records at least one iterate").1)
}

/// One query's calibration sweep and per-feature gap scores.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapProfile {
    /// Variance factors, with the `t = 1` anchor first.
    pub factors: Vec<f64>,
    /// Achieved predictive variance per factor (`β*` first).
    pub achieved_beta: Vec<f64>,
    /// Calibrated input variances, one row per factor (`[δ; d]` first).
    pub calibrated_sigma: Vec<Vec<f64>>,
    /// Convergence flag per factor (anchor always true).
    pub converged: Vec<bool>,
    /// Optimizer iterations per factor (anchor 0).
    pub iterations: Vec<usize>,
    /// Baseline predictive mean `ŷ*`.
    pub baseline_mean: f64,
    /// Per-feature area under `σ̂` against `β`.
    pub gap: Vec<f64>,
}

/// Trapezoidal area under `(abscissae, ordinates)` points sorted here by
/// abscissa.
pub fn trapezoid_auc(abscissae: &[f64], ordinates: &[f64]) -> f64 {
    debug_assert_eq!(abscissae.len(), ordinates.len());
    let mut idx: Vec<usize> = (0..abscissae.len()).collect();
    idx.sort_by(|&a, &b| {
        abscissae[a].partial_cmp(&abscissae[b]).unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut area = 0.0;
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        area += 0.5 * (ordinates[i] + ordinates[j]) * (abscissae[j] - abscissae[i]);
    }
    area
}

/// Runs the full factor sweep for one query point and scores each feature
/// by the area under its calibrated-variance trajectory.
pub fn gap_scores(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
    gap: &GapConfig,
) -> Result<GapProfile, GapError> {
    config.validate()?;
    gap.validate()?;
    let d = config.input_dim;
    if x.len() != d {
        return Err(GapError::Model(ModelError::DimensionMismatch { expected: d, got: x.len() }));
    }
    let delta = config.input_prior;
    let baseline_var = vec![delta; d];
    let (base, _) = forward_cached(params, config, x, &baseline_var, None);

    let n_points = gap.factors.len() + 1;
    let mut factors = Vec::with_capacity(n_points);
    let mut betas = Vec::with_capacity(n_points);
    let mut sigmas = Vec::with_capacity(n_points);
    let mut converged = Vec::with_capacity(n_points);
    let mut iterations = Vec::with_capacity(n_points);
    factors.push(1.0);
    betas.push(base.variance);
    sigmas.push(baseline_var.clone());
    converged.push(true);
    iterations.push(0);

    let mut warm: Option<Vec<f64>> = None;
    for &t in &gap.factors {
        let cal = calibrate_sigma(params, config, x, t, gap, warm.as_deref())?;
        if gap.warm_start {
            warm = Some(cal.rho.clone());
        }
        factors.push(t);
        betas.push(cal.achieved_beta);
        sigmas.push(cal.sigma);
        converged.push(cal.converged);
        iterations.push(cal.iterations);
    }

    let mut scores = Vec::with_capacity(d);
    let mut column = vec![0.0; n_points];
    for j in 0..d {
        for (i, row) in sigmas.iter().enumerate() {
            column[i] = row[j];
        }
        scores.push(trapezoid_auc(&betas, &column));
    }
    Ok(GapProfile {
        factors,
        achieved_beta: betas,
        calibrated_sigma: sigmas,
        converged,
        iterations,
        baseline_mean: base.mean,
        gap: scores,
    })
}
