//! Loss and attribution math: the heteroscedastic likelihood loss, the
//! three per-feature relevance measures, and the entropy penalty over
//! relevance — in both immediate (hand-differentiated) and tape form.
//!
//! The per-sample loss is `ln β + ((y − ŷ)²/β)^k`. Its reported value is
//! exact; the differentiable paths (hand gradients and the tape node)
//! smooth the squared residual to `(y − ŷ)² + ε²` with
//! [`crate::graph::ABS_SMOOTH_EPSILON`] so the `k < 1` power stays
//! differentiable at zero residual. The discrepancy is bounded by
//! `(ε²/r²)^k`-scale terms and is far below optimizer noise.
//!
//! Relevance of feature `j` at a point `x`:
//! * probabilistic: `(x_j ∂ŷ/∂x_j)² + (x_j ∂β/∂x_j)²`, gradients taken with
//!   respect to the input means with input variances held at the prior `δ`,
//!   dropout inactive;
//! * gradient-squared baseline: `(∂f/∂x_j)²` on the deterministic network;
//! * Taylor-decomposition baseline: `(x_j ∂f/∂x_j)²` on the deterministic
//!   network (root point at the origin).
//!
//! The entropy penalty normalizes a relevance vector to a probability
//! vector (after adding [`RELEVANCE_EPSILON`]) and returns its Shannon
//! entropy; training subtracts concentration by *minimizing* it, weighted
//! by the configured `λ`.

use alloc::vec::Vec;

use crate::graph::{GraphError, NodeId, Tape, ABS_SMOOTH_EPSILON};
use crate::model::{
    backward, det_backward, det_forward_cached, forward_cached, build_tape, NetworkConfig,
    ModelError, Parameters, PredictiveDistribution, TapeModel,
};

/// Additive stabilizer applied to every relevance score before the entropy
/// normalization, so all-zero vectors resolve to the uniform distribution.
pub const RELEVANCE_EPSILON: f64 = 1e-12;

/// Which definition produced a relevance vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RelevanceMethod {
    /// Probabilistic scores from the moment-filtering network (mean and
    /// variance channels).
    Lpn,
    /// Squared raw gradient of the deterministic network.
    GradientSquared,
    /// Input-weighted squared gradient (first-order Taylor) of the
    /// deterministic network.
    TaylorDecomposition,
}

/// Per-feature attribution scores; all entries nonnegative and finite.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelevanceVector {
    pub scores: Vec<f64>,
    pub method: RelevanceMethod,
}

/// Per-sample likelihood loss `ln β + ((y − ŷ)²/β)^k`, evaluated exactly.
/// Batch losses are means over samples.
pub fn nll_loss(y: f64, pred: &PredictiveDistribution, k: f64) -> f64 {
    let r = y - pred.mean;
    crate::fmath::ln(pred.variance) + crate::fmath::powf(r * r / pred.variance, k)
}

/// Partials of the (residual-smoothed) loss with respect to the predictive
/// mean and variance.
pub(crate) fn nll_grads(y: f64, pred: &PredictiveDistribution, k: f64) -> (f64, f64) {
    let beta = pred.variance;
    let r = y - pred.mean;
    let s = r * r + ABS_SMOOTH_EPSILON * ABS_SMOOTH_EPSILON;
    let pw = crate::fmath::powf(s / beta, k - 1.0);
    let d_mean = -2.0 * k * r / beta * pw;
    let d_beta = 1.0 / beta - k * s / (beta * beta) * pw;
    (d_mean, d_beta)
}

/// Tape form of the loss with the same residual smoothing as the hand
/// gradients. The node's value differs from [`nll_loss`] by the smoothing
/// term only.
pub fn nll_node(tape: &mut Tape, mean: NodeId, variance: NodeId, y: f64, k: f64) -> NodeId {
    let y_leaf = tape.leaf(y);
    let r = tape.sub(y_leaf, mean);
    let r_sq = tape.mul(r, r);
    let s = tape.add_const(r_sq, ABS_SMOOTH_EPSILON * ABS_SMOOTH_EPSILON);
    let ratio = tape.div(s, variance);
    let pw = tape.powf(ratio, k);
    let log_beta = tape.ln(variance);
    tape.add(log_beta, pw)
}

/// Probabilistic relevance at `x`: input variances at the configured prior,
/// no dropout, both predictive channels.
pub fn relevance_lpn(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
) -> Result<RelevanceVector, ModelError> {
    config.validate()?;
    if x.len() != config.input_dim {
        return Err(ModelError::DimensionMismatch { expected: config.input_dim, got: x.len() });
    }
    let var = alloc::vec![config.input_prior; x.len()];
    let (_, cache) = forward_cached(params, config, x, &var, None);
    let (d_mean, _) = backward(params, config, &cache, 1.0, 0.0, None);
    let (d_beta, _) = backward(params, config, &cache, 0.0, 1.0, None);
    let scores = x
        .iter()
        .zip(d_mean.iter().zip(&d_beta))
        .map(|(&xj, (&gm, &gb))| {
            let a = xj * gm;
            let b = xj * gb;
            a * a + b * b
        })
        .collect();
    Ok(RelevanceVector { scores, method: RelevanceMethod::Lpn })
}

/// Gradient-squared baseline on the deterministic network.
pub fn relevance_gs(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
) -> Result<RelevanceVector, ModelError> {
    let g = det_input_gradient(params, config, x)?;
    Ok(RelevanceVector {
        scores: g.iter().map(|&gj| gj * gj).collect(),
        method: RelevanceMethod::GradientSquared,
    })
}

/// Taylor-decomposition baseline on the deterministic network.
pub fn relevance_std(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
) -> Result<RelevanceVector, ModelError> {
    let g = det_input_gradient(params, config, x)?;
    Ok(RelevanceVector {
        scores: x
            .iter()
            .zip(&g)
            .map(|(&xj, &gj)| {
                let t = xj * gj;
                t * t
            })
            .collect(),
        method: RelevanceMethod::TaylorDecomposition,
    })
}

fn det_input_gradient(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
) -> Result<Vec<f64>, ModelError> {
    config.validate()?;
    if x.len() != config.input_dim {
        return Err(ModelError::DimensionMismatch { expected: config.input_dim, got: x.len() });
    }
    let (_, cache) = det_forward_cached(params, config, x, None);
    Ok(det_backward(params, config, &cache, 1.0, None))
}

/// Shannon entropy of the stabilized, normalized relevance vector; ranges
/// over `[0, ln d]`, with all-zero scores resolving to the uniform maximum.
pub fn entropy_penalty(r: &RelevanceVector) -> f64 {
    entropy_of_scores(&r.scores)
}

pub(crate) fn entropy_of_scores(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let total: f64 = scores.iter().map(|&s| s + RELEVANCE_EPSILON).sum();
    let mut h = 0.0;
    for &s in scores {
        let p = (s + RELEVANCE_EPSILON) / total;
        h -= p * crate::fmath::ln(p);
    }
    h
}

/// Builds the entropy penalty of the probabilistic relevance *in graph
/// form* on a tape already carrying a network replica: two recorded
/// backward passes produce the per-feature gradient nodes, and the
/// stabilized entropy is assembled from them. The returned scalar consumes
/// first-order gradients, so differentiating it (e.g. with
/// [`Tape::gradient_of_gradient`] against the parameter nodes) is a
/// second-order pass.
pub fn entropy_penalty_node(tape: &mut Tape, model: &TapeModel) -> Result<NodeId, GraphError> {
    let g_mean = tape.gradient_nodes(model.mean, &model.input_mean)?;
    let g_var = tape.gradient_nodes(model.variance, &model.input_mean)?;
    let d = model.input_mean.len();
    let mut shifted = Vec::with_capacity(d);
    for j in 0..d {
        let xj = tape.value(model.input_mean[j]);
        let a = tape.mul_const(g_mean[j], xj);
        let a_sq = tape.mul(a, a);
        let b = tape.mul_const(g_var[j], xj);
        let b_sq = tape.mul(b, b);
        let r = tape.add(a_sq, b_sq);
        shifted.push(tape.add_const(r, RELEVANCE_EPSILON));
    }
    let total = tape.sum(&shifted);
    let mut terms = Vec::with_capacity(d);
    for &s in &shifted {
        let p = tape.div(s, total);
        let lp = tape.ln(p);
        terms.push(tape.mul(p, lp));
    }
    let sum = tape.sum(&terms);
    Ok(tape.neg(sum))
}

/// Elementwise mean of per-sample relevance vectors over a set of inputs —
/// the global ranking used for feature ordering and masking sweeps.
pub fn relevance_mean(
    params: &Parameters,
    config: &NetworkConfig,
    xs: &[Vec<f64>],
    method: RelevanceMethod,
) -> Result<RelevanceVector, ModelError> {
    config.validate()?;
    if xs.is_empty() {
        return Ok(RelevanceVector { scores: alloc::vec![0.0; config.input_dim], method });
    }
    let mut mean = alloc::vec![0.0; config.input_dim];
    for x in xs {
        let r = match method {
            RelevanceMethod::Lpn => relevance_lpn(params, config, x)?,
            RelevanceMethod::GradientSquared => relevance_gs(params, config, x)?,
            RelevanceMethod::TaylorDecomposition => relevance_std(params, config, x)?,
        };
        for (m, s) in mean.iter_mut().zip(&r.scores) {
            *m += s;
        }
    }
    let inv = 1.0 / xs.len() as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    Ok(RelevanceVector { scores: mean, method })
}

/// Evaluation-mode value of the regularized objective: the mean over
/// samples of `nll + λ·entropy(relevance)`, with input variances at the
/// prior and dropout inactive. At `λ = 0` this is exactly the mean
/// likelihood loss.
pub fn regularized_loss(
    params: &Parameters,
    config: &NetworkConfig,
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<f64, ModelError> {
    config.validate()?;
    if xs.len() != ys.len() {
        return Err(ModelError::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.is_empty() {
        return Ok(0.0);
    }
    let lambda = config.penalty_weight;
    let var = alloc::vec![config.input_prior; config.input_dim];
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        if x.len() != config.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: config.input_dim,
                got: x.len(),
            });
        }
        let (pred, cache) = forward_cached(params, config, x, &var, None);
        total += nll_loss(y, &pred, config.loss_exponent);
        if lambda > 0.0 {
            let (d_mean, _) = backward(params, config, &cache, 1.0, 0.0, None);
            let (d_beta, _) = backward(params, config, &cache, 0.0, 1.0, None);
            let scores: Vec<f64> = x
                .iter()
                .zip(d_mean.iter().zip(&d_beta))
                .map(|(&xj, (&gm, &gb))| {
                    let a = xj * gm;
                    let b = xj * gb;
                    a * a + b * b
                })
                .collect();
            total += lambda * entropy_of_scores(&scores);
        }
    }
    Ok(total / xs.len() as f64)
}

/// One sample's contribution to the regularized objective and its parameter
/// gradient, accumulated into `grads` with multiplier `weight` (typically
/// `1/batch`).
///
/// The likelihood term runs on the hand engine with the given dropout
/// `masks`; the penalty term (when `λ > 0`) replays a mask-free forward on
/// `tape` — attribution is a property of the predictive model, not of a
/// dropout perturbation — and differentiates the in-graph entropy to the
/// parameters with a second-order pass. Returns the sample's objective
/// value (unweighted).
// Flat argument list keeps this hot-loop kernel free of a one-off
// context struct; every call site passes the same locals straight through.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_objective_grad(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
    input_var: &[f64],
    y: f64,
    masks: Option<&[Vec<bool>]>,
    weight: f64,
    grads: &mut [f64],
    tape: &mut Tape,
) -> Result<f64, ModelError> {
    let (pred, cache) = forward_cached(params, config, x, input_var, masks);
    let mut value = nll_loss(y, &pred, config.loss_exponent);
    let (gy, gb) = nll_grads(y, &pred, config.loss_exponent);
    let _ = backward(params, config, &cache, weight * gy, weight * gb, Some(grads));
    let lambda = config.penalty_weight;
    if lambda > 0.0 {
        tape.clear();
        let tm = build_tape(tape, params, config, x, input_var, None)?;
        let h = entropy_penalty_node(tape, &tm)?;
        value += lambda * tape.value(h);
        let g = tape.gradient_of_gradient(h, &tm.params)?;
        for (slot, gi) in grads.iter_mut().zip(&g) {
            *slot += weight * lambda * gi;
        }
    }
    Ok(value)
}
