//! Moment-matching filters over diagonal Gaussian activations.
//!
//! A [`GaussianTensor`] is a vector of per-unit means `μ` and variances `ν`,
//! treated as an independent (diagonal) Gaussian. Each filter maps the input
//! moments to the exact first and second moments of the layer output under
//! that input distribution, then re-assumes independence:
//!
//! * dense: `μ' = Wμ + b`, `ν' = (W∘W)ν`
//! * relu: `μ' = μΦ(α) + √ν φ(α)` with `α = μ/√ν`, and
//!   `ν' = (μ² + ν)Φ(α) + μ√ν φ(α) − μ'²`
//! * leaky-relu: the relu moments of `x` and `−x` composed through
//!   `leaky(x) = relu(x) − c·relu(−x)`
//! * dropout: Bernoulli keep-mask with inverted scaling on kept units
//!
//! Variances are floored at [`VARIANCE_FLOOR`] before forming `α` so the
//! filters stay finite for degenerate inputs, and output variances are clamped
//! at zero to absorb float cancellation in the `−μ'²` term.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::fmath;

/// Variances below this are treated as this value when forming `α = μ/√ν`.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// `1/√(2π)`, the standard normal density at zero.
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// `1/√2`, used to express Φ through the complementary error function.
const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Standard normal density `φ(x) = exp(−x²/2)/√(2π)`.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * fmath::exp(-0.5 * x * x)
}

/// Standard normal CDF `Φ(x)`, computed as `erfc(−x/√2)/2`.
///
/// The erfc route keeps absolute error near machine precision across the
/// whole axis, including the far tails where `1 − Φ(−x)` would cancel.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * fmath::erfc(-x * INV_SQRT_2)
}

/// A batch-less diagonal Gaussian activation vector: per-unit means and
/// variances of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTensor {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianTensor {
    /// Builds a tensor, checking that the two vectors agree in length and
    /// that no variance is negative.
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self, GaussError> {
        if mean.len() != var.len() {
            return Err(GaussError::LengthMismatch {
                means: mean.len(),
                vars: var.len(),
            });
        }
        // `is_nan` is checked explicitly so NaN variances are rejected too.
        if let Some(idx) = var.iter().position(|v| v.is_nan() || *v < 0.0) {
            return Err(GaussError::NegativeVariance {
                index: idx,
                value: var[idx],
            });
        }
        Ok(Self { mean, var })
    }

    /// A deterministic point: zero variance on every unit.
    pub fn point(mean: Vec<f64>) -> Self {
        let var = vec![0.0; mean.len()];
        Self { mean, var }
    }

    /// Constant variance on every unit.
    pub fn with_uniform_var(mean: Vec<f64>, var: f64) -> Result<Self, GaussError> {
        let n = mean.len();
        Self::new(mean, vec![var; n])
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Errors from the moment-matching filters.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussError {
    /// Mean and variance vectors disagree in length.
    LengthMismatch { means: usize, vars: usize },
    /// A variance entry was negative (or NaN).
    NegativeVariance { index: usize, value: f64 },
    /// Weight matrix shape does not match the input width.
    ShapeMismatch {
        rows: usize,
        cols: usize,
        input: usize,
        bias: usize,
    },
    /// Leaky slope outside `[0, 1)`.
    InvalidSlope { slope: f64 },
    /// Dropout rate outside `[0, 1)`.
    InvalidRate { rate: f64 },
    /// Dropout mask length does not match the input width.
    MaskLengthMismatch { mask: usize, input: usize },
}

impl core::fmt::Display for GaussError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GaussError::LengthMismatch { means, vars } => {
                write!(f, "mean/variance length mismatch: {means} means vs {vars} variances")
            }
            GaussError::NegativeVariance { index, value } => {
                write!(f, "negative variance {value} at unit {index}")
            }
            GaussError::ShapeMismatch { rows, cols, input, bias } => write!(
                f,
                "dense shape mismatch: {rows}x{cols} weights, bias {bias}, input width {input}"
            ),
            GaussError::InvalidSlope { slope } => {
                write!(f, "leaky slope {slope} outside [0, 1)")
            }
            GaussError::InvalidRate { rate } => {
                write!(f, "dropout rate {rate} outside [0, 1)")
            }
            GaussError::MaskLengthMismatch { mask, input } => {
                write!(f, "dropout mask length {mask} does not match input width {input}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GaussError {}

/// Dense layer on moments: means through `Wμ + b`, variances through the
/// element-wise squared weights `(W∘W)ν`.
///
/// `weights` is row-major with `rows × cols` entries; `cols` must equal the
/// input width and `bias` must have `rows` entries.
pub fn filter_dense(
    weights: &[f64],
    bias: &[f64],
    input: &GaussianTensor,
) -> Result<GaussianTensor, GaussError> {
    let cols = input.len();
    let rows = bias.len();
    if cols == 0 || weights.len() != rows * cols {
        return Err(GaussError::ShapeMismatch {
            rows,
            cols: weights.len().checked_div(rows).unwrap_or(0),
            input: cols,
            bias: rows,
        });
    }
    let mut mean = Vec::with_capacity(rows);
    let mut var = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &weights[r * cols..(r + 1) * cols];
        let mut m = bias[r];
        let mut v = 0.0;
        for (w, (mu, nu)) in row.iter().zip(input.mean.iter().zip(input.var.iter())) {
            m += w * mu;
            v += w * w * nu;
        }
        mean.push(m);
        var.push(v);
    }
    Ok(GaussianTensor { mean, var })
}

/// Exact relu output moments for a single Gaussian unit `(μ, ν)`.
///
/// Returns `(mean, raw second moment, Φ(α), φ(α), √ν_f)` where `ν_f` is the
/// floored variance; callers assemble variances from the second moment so the
/// leaky composition can reuse the pieces.
#[inline]
fn relu_moments(mu: f64, nu: f64) -> (f64, f64, f64, f64, f64) {
    let nu_f = if nu > VARIANCE_FLOOR { nu } else { VARIANCE_FLOOR };
    let sd = fmath::sqrt(nu_f);
    let alpha = mu / sd;
    let cdf = std_normal_cdf(alpha);
    let pdf = std_normal_pdf(alpha);
    let mean = mu * cdf + sd * pdf;
    // E[relu(x)²] = (μ² + ν)Φ(α) + μ√ν φ(α)
    let second = (mu * mu + nu_f) * cdf + mu * sd * pdf;
    (mean, second, cdf, pdf, sd)
}

/// Relu filter: per-unit Gaussian moments clipped at zero.
///
/// `μ' = μΦ(α) + √ν φ(α)` and `ν' = (μ² + ν)Φ(α) + μ√ν φ(α) − μ'²`, with
/// `α = μ/√ν` on the floored variance. Output variances are clamped at zero.
pub fn filter_relu(input: &GaussianTensor) -> GaussianTensor {
    let n = input.len();
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for (&mu, &nu) in input.mean.iter().zip(input.var.iter()) {
        let (m, second, ..) = relu_moments(mu, nu);
        mean.push(m);
        var.push((second - m * m).max(0.0));
    }
    GaussianTensor { mean, var }
}

/// Leaky-relu filter with negative-side slope `c ∈ [0, 1)`.
///
/// Uses `leaky(x) = relu(x) − c·relu(−x)` and the fact that the two branches
/// never fire together (their product is identically zero), so
///
/// ```text
/// μ' = μ₊ − c·μ₋
/// ν' = ν₊ + c²·ν₋ + 2c·μ₊·μ₋
/// ```
///
/// where `(μ₊, ν₊)` are the relu moments of `(μ, ν)` and `(μ₋, ν₋)` those of
/// `(−μ, ν)`.
pub fn filter_leaky_relu(input: &GaussianTensor, slope: f64) -> Result<GaussianTensor, GaussError> {
    if !(0.0..1.0).contains(&slope) {
        return Err(GaussError::InvalidSlope { slope });
    }
    let n = input.len();
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for (&mu, &nu) in input.mean.iter().zip(input.var.iter()) {
        let (m_pos, s_pos, ..) = relu_moments(mu, nu);
        let (m_neg, s_neg, ..) = relu_moments(-mu, nu);
        let v_pos = s_pos - m_pos * m_pos;
        let v_neg = s_neg - m_neg * m_neg;
        mean.push(m_pos - slope * m_neg);
        var.push((v_pos + slope * slope * v_neg + 2.0 * slope * m_pos * m_neg).max(0.0));
    }
    Ok(GaussianTensor { mean, var })
}

/// Per-unit leaky-relu output moments plus their four partial derivatives,
/// used by the vectorized backward pass in the model module.
///
/// Returns `(μ', ν', ∂μ'/∂μ, ∂μ'/∂ν, ∂ν'/∂μ, ∂ν'/∂ν)`. The partials follow
/// from `∂μ₊/∂μ = Φ(α)`, `∂μ₊/∂ν = φ(α)/(2√ν)`, `∂E[relu²]/∂μ = 2μ₊`, and
/// `∂E[relu²]/∂ν = Φ(α)`. Below the variance floor the ν-derivatives are
/// zero, matching the clamp.
#[inline]
pub(crate) fn leaky_relu_moments_with_grad(
    mu: f64,
    nu: f64,
    slope: f64,
) -> (f64, f64, f64, f64, f64, f64) {
    let floored = nu <= VARIANCE_FLOOR;
    let (m_pos, s_pos, cdf_pos, pdf, sd) = relu_moments(mu, nu);
    let (m_neg, s_neg, cdf_neg, _, _) = relu_moments(-mu, nu);
    let v_pos = s_pos - m_pos * m_pos;
    let v_neg = s_neg - m_neg * m_neg;

    let mean = m_pos - slope * m_neg;
    let raw_var = v_pos + slope * slope * v_neg + 2.0 * slope * m_pos * m_neg;
    let var = raw_var.max(0.0);

    // dμ₊/dμ = Φ(α); dμ₋/dμ = −Φ(−α); both share dμ/dν = φ(α)/(2√ν).
    let dmean_dmu = cdf_pos + slope * cdf_neg;
    let half_pdf_over_sd = 0.5 * pdf / sd;
    let dmean_dnu = if floored { 0.0 } else { (1.0 - slope) * half_pdf_over_sd };

    // dν₊/dμ = 2μ₊(1 − Φ(α)); dν₋/dμ = −2μ₋(1 − Φ(−α)).
    // dν₊/dν = Φ(α) − μ₊·φ(α)/√ν (and symmetrically for the − branch).
    let dvar_dmu = 2.0 * m_pos * (1.0 - cdf_pos) - slope * slope * 2.0 * m_neg * (1.0 - cdf_neg)
        + 2.0 * slope * (cdf_pos * m_neg - m_pos * cdf_neg);
    let dvar_dnu = if floored {
        0.0
    } else {
        cdf_pos - 2.0 * m_pos * half_pdf_over_sd
            + slope * slope * (cdf_neg - 2.0 * m_neg * half_pdf_over_sd)
            + 2.0 * slope * (half_pdf_over_sd * m_neg + m_pos * half_pdf_over_sd)
    };
    let (dvar_dmu, dvar_dnu) = if raw_var < 0.0 { (0.0, 0.0) } else { (dvar_dmu, dvar_dnu) };

    (mean, var, dmean_dmu, dmean_dnu, dvar_dmu, dvar_dnu)
}

/// Dropout filter in training mode: each unit is kept with probability
/// `1 − rate`; kept units scale mean by `1/(1−rate)` and variance by
/// `1/(1−rate)²`, dropped units zero both. In evaluation mode the filter is
/// the identity — callers simply skip it.
///
/// The mask is supplied explicitly so training, gradient checks, and replays
/// see the same draw; [`draw_dropout_mask`] produces one from an RNG.
pub fn filter_dropout(
    input: &GaussianTensor,
    mask: &[bool],
    rate: f64,
) -> Result<GaussianTensor, GaussError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(GaussError::InvalidRate { rate });
    }
    if mask.len() != input.len() {
        return Err(GaussError::MaskLengthMismatch {
            mask: mask.len(),
            input: input.len(),
        });
    }
    let scale = 1.0 / (1.0 - rate);
    let scale_sq = scale * scale;
    let n = input.len();
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for ((&keep, &m), &v) in mask.iter().zip(&input.mean).zip(&input.var) {
        if keep {
            mean.push(m * scale);
            var.push(v * scale_sq);
        } else {
            mean.push(0.0);
            var.push(0.0);
        }
    }
    Ok(GaussianTensor { mean, var })
}

/// Draws a keep-mask of length `n` where each unit survives with probability
/// `1 − rate`.
pub fn draw_dropout_mask<R: Rng + ?Sized>(rng: &mut R, n: usize, rate: f64) -> Vec<bool> {
    (0..n).map(|_| rng.gen::<f64>() >= rate).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Simpson integration of the standard normal density over [a, b].
    fn integrate_pdf(a: f64, b: f64, steps: usize) -> f64 {
        let h = (b - a) / steps as f64;
        let mut acc = std_normal_pdf(a) + std_normal_pdf(b);
        for i in 1..steps {
            let x = a + i as f64 * h;
            acc += std_normal_pdf(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn pdf_matches_closed_form_points() {
        assert!((std_normal_pdf(0.0) - 0.3989422804014327).abs() < 1e-12);
        assert!((std_normal_pdf(1.0) - 0.2419707245191434).abs() < 1e-12);
        assert!((std_normal_pdf(-1.0) - std_normal_pdf(1.0)).abs() == 0.0);
    }

    #[test]
    fn cdf_consistent_with_integrated_pdf() {
        // Independent oracle: Φ(x) − Φ(a) must equal ∫ₐˣ φ for any pair; the
        // far-left anchor makes Φ(a) negligible at double precision.
        for &x in &[-2.0, -0.5, 0.0, 0.37, 1.0, 2.5] {
            let oracle = integrate_pdf(-9.0, x, 20_000) + std_normal_cdf(-9.0);
            assert!(
                (std_normal_cdf(x) - oracle).abs() < 1e-12,
                "cdf({x}) = {} vs integral {oracle}",
                std_normal_cdf(x)
            );
        }
        assert!((std_normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-12);
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cdf_tails_and_symmetry() {
        assert!(std_normal_cdf(-40.0) >= 0.0);
        assert!(std_normal_cdf(-40.0) < 1e-300);
        assert!((std_normal_cdf(40.0) - 1.0).abs() < 1e-15);
        for &x in &[0.3, 1.7, 5.0] {
            let s = std_normal_cdf(x) + std_normal_cdf(-x);
            assert!((s - 1.0).abs() < 1e-14, "Φ({x}) + Φ(−{x}) = {s}");
        }
    }

    #[test]
    fn dense_fixture_and_identity() {
        // W = [[1, 2]], b = [1], μ = (1, −1), ν = (0.1, 0.2):
        // mean 1·1 + 2·(−1) + 1 = 0, variance 1·0.1 + 4·0.2 = 0.9.
        let g = GaussianTensor::new(vec![1.0, -1.0], vec![0.1, 0.2]).unwrap();
        let out = filter_dense(&[1.0, 2.0], &[1.0], &g).unwrap();
        assert!((out.mean[0] - 0.0).abs() < 1e-15);
        assert!((out.var[0] - 0.9).abs() < 1e-15);

        // Identity weights, zero bias: the tensor passes through unchanged.
        let id = [1.0, 0.0, 0.0, 1.0];
        let through = filter_dense(&id, &[0.0, 0.0], &g).unwrap();
        assert_eq!(through, g);
    }

    #[test]
    fn dense_zero_variance_input_stays_deterministic() {
        let g = GaussianTensor::point(vec![3.0, -2.0, 0.5]);
        let out = filter_dense(&[0.3, -1.0, 2.0], &[0.7], &g).unwrap();
        assert_eq!(out.var[0], 0.0);
    }

    #[test]
    fn dense_shape_errors() {
        let g = GaussianTensor::point(vec![1.0, 2.0]);
        assert!(matches!(
            filter_dense(&[1.0, 2.0, 3.0], &[0.0], &g),
            Err(GaussError::ShapeMismatch { .. })
        ));
        let empty = GaussianTensor::point(vec![]);
        assert!(filter_dense(&[], &[0.0], &empty).is_err());
    }

    #[test]
    fn relu_fixture_at_standard_normal() {
        // (μ=0, ν=1): mean φ(0) = 1/√(2π), variance 1/2 − 1/(2π).
        let g = GaussianTensor::new(vec![0.0], vec![1.0]).unwrap();
        let out = filter_relu(&g);
        assert!((out.mean[0] - 0.3989422804014327).abs() < 1e-9);
        assert!((out.var[0] - 0.3408450569081046).abs() < 1e-9);
    }

    #[test]
    fn relu_degenerate_limits() {
        // Far-positive unit passes through; far-negative unit dies.
        let g = GaussianTensor::new(vec![10.0, -10.0], vec![1e-4, 1e-4]).unwrap();
        let out = filter_relu(&g);
        assert!((out.mean[0] - 10.0).abs() < 1e-9);
        assert!((out.var[0] - 1e-4).abs() < 1e-9);
        assert!(out.mean[1].abs() < 1e-12);
        assert!(out.var[1].abs() < 1e-12);
    }

    #[test]
    fn leaky_fixture_and_mean_identity() {
        let g = GaussianTensor::new(vec![0.0], vec![1.0]).unwrap();
        let out = filter_leaky_relu(&g, 0.01).unwrap();
        // Composition of the relu fixtures: μ' = (1−c)·φ(0),
        // ν' = (1+c²)(1/2 − 1/(2π)) + 2c/(2π) = 0.34406224027563336.
        assert!((out.mean[0] - 0.3949528575974184).abs() < 1e-9);
        assert!((out.var[0] - 0.3440622402756334).abs() < 1e-9);

        // μ_relu(μ,ν) − μ_relu(−μ,ν) = μ: slope 1 would reduce the mean to
        // the identity; verified through the relu filter directly since the
        // public slope domain is [0, 1).
        for &(mu, nu) in &[(0.7, 0.4), (-1.3, 2.0), (0.0, 1.0), (2.5, 0.01)] {
            let pos = filter_relu(&GaussianTensor::new(vec![mu], vec![nu]).unwrap());
            let neg = filter_relu(&GaussianTensor::new(vec![-mu], vec![nu]).unwrap());
            assert!(
                (pos.mean[0] - neg.mean[0] - mu).abs() < 1e-12,
                "identity failed at ({mu}, {nu})"
            );
        }
    }

    #[test]
    fn leaky_slope_domain() {
        let g = GaussianTensor::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(
            filter_leaky_relu(&g, 1.0),
            Err(GaussError::InvalidSlope { .. })
        ));
        assert!(filter_leaky_relu(&g, -0.1).is_err());
        assert!(filter_leaky_relu(&g, 0.0).is_ok());
    }

    #[test]
    fn monte_carlo_oracle_on_random_single_blocks() {
        // Dense → leaky-relu on independent Gaussian inputs: per-unit output
        // marginals are exactly Gaussian into the activation, so the filter
        // moments are exact and Monte-Carlo must agree to sampling error.
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
        let samples = 200_000usize;
        for case in 0..8 {
            let d_in = 1 + (case % 4);
            let d_out = 1 + (case % 3);
            let mut w = Vec::with_capacity(d_in * d_out);
            for _ in 0..d_in * d_out {
                w.push(rng.gen_range(-1.0..1.0));
            }
            let b: Vec<f64> = (0..d_out).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mu: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let nu: Vec<f64> = (0..d_in).map(|_| rng.gen_range(0.05..1.0)).collect();
            let slope = 0.01;

            let input = GaussianTensor::new(mu.clone(), nu.clone()).unwrap();
            let adf = filter_leaky_relu(&filter_dense(&w, &b, &input).unwrap(), slope).unwrap();

            let mut sums = vec![0.0f64; d_out];
            let mut sq = vec![0.0f64; d_out];
            for _ in 0..samples {
                for r in 0..d_out {
                    let mut z = b[r];
                    for c in 0..d_in {
                        let draw: f64 = StandardNormal.sample(&mut rng);
                        z += w[r * d_in + c] * (mu[c] + draw * nu[c].sqrt());
                    }
                    let a = if z > 0.0 { z } else { slope * z };
                    sums[r] += a;
                    sq[r] += a * a;
                }
            }
            for r in 0..d_out {
                let m = sums[r] / samples as f64;
                let v = sq[r] / samples as f64 - m * m;
                let se_mean = (v / samples as f64).sqrt();
                assert!(
                    (adf.mean[r] - m).abs() < 4.0 * se_mean,
                    "case {case} unit {r}: mean {} vs MC {m} (se {se_mean})",
                    adf.mean[r]
                );
                assert!(
                    (adf.var[r] - v).abs() < 0.05 * v.max(1e-12),
                    "case {case} unit {r}: var {} vs MC {v}",
                    adf.var[r]
                );
            }
        }
    }

    #[test]
    fn dropout_moments_match_averaged_masks() {
        // Averaging filtered moments over many masks recovers the input mean
        // (inverted scaling is unbiased): E[mask·μ/(1−p)] = μ.
        let rate = 0.3;
        let g = GaussianTensor::new(vec![1.0, -2.0, 0.5], vec![0.2, 0.4, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
        let trials = 100_000usize;
        let mut acc = [0.0f64; 3];
        for _ in 0..trials {
            let mask = draw_dropout_mask(&mut rng, 3, rate);
            let out = filter_dropout(&g, &mask, rate).unwrap();
            for (a, m) in acc.iter_mut().zip(out.mean.iter()) {
                *a += m;
            }
        }
        for (i, (&a, &m)) in acc.iter().zip(&g.mean).enumerate() {
            let est = a / trials as f64;
            // SE of the masked mean: |μ|·√(p/(1−p))/√N, ≈ 0.0065·|μ| here.
            let se = m.abs() * (rate / (1.0 - rate)).sqrt() / (trials as f64).sqrt();
            assert!((est - m).abs() < 4.0 * se + 1e-12, "unit {i}: averaged mean {est} vs {m}");
        }
    }

    #[test]
    fn dropout_eval_mode_is_identity_by_skipping() {
        // Evaluation skips the filter; an all-keep mask at rate 0 is the same.
        let g = GaussianTensor::new(vec![1.0, 2.0], vec![0.3, 0.4]).unwrap();
        let out = filter_dropout(&g, &[true, true], 0.0).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn dropout_zeroes_dropped_units_and_rejects_bad_rates() {
        let g = GaussianTensor::new(vec![1.0, 2.0], vec![0.3, 0.4]).unwrap();
        let out = filter_dropout(&g, &[false, true], 0.5).unwrap();
        assert_eq!(out.mean[0], 0.0);
        assert_eq!(out.var[0], 0.0);
        assert!((out.mean[1] - 4.0).abs() < 1e-15);
        assert!((out.var[1] - 1.6).abs() < 1e-15);
        assert!(matches!(
            filter_dropout(&g, &[true, true], 1.0),
            Err(GaussError::InvalidRate { .. })
        ));
        assert!(filter_dropout(&g, &[true], 0.3).is_err());
    }

    #[test]
    fn variance_monotone_in_input_variance() {
        // Raising any input variance never lowers any output variance of a
        // dropout-free dense → leaky stack (all propagation coefficients are
        // nonnegative).
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
        for _ in 0..50 {
            let d_in = rng.gen_range(1..5usize);
            let d_out = rng.gen_range(1..5usize);
            let w: Vec<f64> = (0..d_in * d_out).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let b: Vec<f64> = (0..d_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mu: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let nu: Vec<f64> = (0..d_in).map(|_| rng.gen_range(0.0..1.0)).collect();
            let base = GaussianTensor::new(mu.clone(), nu.clone()).unwrap();
            let out0 =
                filter_leaky_relu(&filter_dense(&w, &b, &base).unwrap(), 0.01).unwrap();
            let j = rng.gen_range(0..d_in);
            let mut nu2 = nu.clone();
            nu2[j] += rng.gen_range(0.1..1.0);
            let bumped = GaussianTensor::new(mu, nu2).unwrap();
            let out1 =
                filter_leaky_relu(&filter_dense(&w, &b, &bumped).unwrap(), 0.01).unwrap();
            for r in 0..d_out {
                assert!(
                    out1.var[r] >= out0.var[r] - 1e-12,
                    "variance dropped from {} to {} after bumping input {j}",
                    out0.var[r],
                    out1.var[r]
                );
            }
        }
    }

    #[test]
    fn leaky_grad_helper_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
        let h = 1e-6;
        for _ in 0..200 {
            let mu = rng.gen_range(-2.0..2.0);
            let nu = rng.gen_range(0.05..1.5);
            let slope = if rng.gen::<bool>() { 0.01 } else { 0.2 };
            let (m, v, dm_dmu, dm_dnu, dv_dmu, dv_dnu) =
                leaky_relu_moments_with_grad(mu, nu, slope);
            let probe = |mu: f64, nu: f64| {
                let g = GaussianTensor::new(vec![mu], vec![nu]).unwrap();
                let out = filter_leaky_relu(&g, slope).unwrap();
                (out.mean[0], out.var[0])
            };
            let (m0, v0) = probe(mu, nu);
            assert!((m - m0).abs() < 1e-14 && (v - v0).abs() < 1e-14);
            let (mp, vp) = probe(mu + h, nu);
            let (mm, vm) = probe(mu - h, nu);
            assert!((dm_dmu - (mp - mm) / (2.0 * h)).abs() < 1e-6);
            assert!((dv_dmu - (vp - vm) / (2.0 * h)).abs() < 1e-5);
            let (mp, vp) = probe(mu, nu + h);
            let (mm, vm) = probe(mu, nu - h);
            assert!((dm_dnu - (mp - mm) / (2.0 * h)).abs() < 1e-6);
            assert!((dv_dnu - (vp - vm) / (2.0 * h)).abs() < 1e-5);
        }
    }

    #[test]
    fn deterministic_limit_reduces_to_pointwise_leaky() {
        // ν → 0: the filter collapses to the plain activation value.
        for &mu in &[-3.0, -0.4, 0.2, 1.8] {
            let g = GaussianTensor::new(vec![mu], vec![0.0]).unwrap();
            let out = filter_leaky_relu(&g, 0.01).unwrap();
            let expect = if mu > 0.0 { mu } else { 0.01 * mu };
            assert!(
                (out.mean[0] - expect).abs() < 1e-6,
                "ν→0 mean {} vs {expect}",
                out.mean[0]
            );
            assert!(out.var[0] < 1e-6);
        }
    }
}
