//! Network assembly: configuration, parameter storage and initialization,
//! the probabilistic (moment-filtering) forward pass, the deterministic
//! baseline forward pass, and tape builders for differentiable replicas.
//!
//! Two execution engines cover the same network:
//!
//! * Hand-vectorized passes ([`forward`], [`forward_deterministic`], and the
//!   crate-internal cached/backward variants) — the fast path used by
//!   training and batched attribution. Backward propagates adjoints through
//!   both the mean and variance channels using the closed-form filter
//!   partials from [`crate::gauss`].
//! * A tape replica ([`build_tape`]) emitting the identical arithmetic into
//!   a [`crate::graph::Tape`], which provides gradients of gradients for the
//!   entropy-penalty phase of training and an independent engine for
//!   cross-checking the hand path.
//!
//! A hidden block is dense → leaky-relu moment filter → dropout; the output
//! layer is a lone dense unit whose mean is the prediction and whose
//! variance (floored at [`BETA_FLOOR`]) is the predictive variance.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gauss::{
    draw_dropout_mask, leaky_relu_moments_with_grad, GaussianTensor, VARIANCE_FLOOR,
};
use crate::graph::{GraphError, NodeId, Tape};

/// Smallest predictive variance the model will report, in squared
/// standardized-target units; keeps `ln β` finite for degenerate networks.
pub const BETA_FLOOR: f64 = 1e-8;

/// Architecture and scalar hyperparameters of one probabilistic network.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkConfig {
    /// Input feature count `d`.
    pub input_dim: usize,
    /// Hidden layer widths; may be empty for a single dense layer.
    pub hidden: Vec<usize>,
    /// Negative-side slope `c` of the leaky relu, `0 ≤ c < 1`.
    pub leaky_slope: f64,
    /// Dropout rate `p`, `0 ≤ p < 1`; active only in training mode.
    pub dropout_rate: f64,
    /// Input-variance prior `δ > 0` (standardized input units, squared).
    pub input_prior: f64,
    /// Loss exponent `k`, `0 < k ≤ 1`.
    pub loss_exponent: f64,
    /// Entropy-penalty weight `λ ≥ 0`.
    pub penalty_weight: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl NetworkConfig {
    /// The published experiment architecture for `d` input features:
    /// hidden sizes 256-128-16, slope 0.01, dropout 0.3, δ = 0.01, k = 0.5,
    /// λ = 1e-3.
    pub fn reference(input_dim: usize, seed: u64) -> Self {
        NetworkConfig {
            input_dim,
            hidden: vec![256, 128, 16],
            leaky_slope: 0.01,
            dropout_rate: 0.3,
            input_prior: 0.01,
            loss_exponent: 0.5,
            penalty_weight: 1e-3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidConfig("input_dim must be ≥ 1"));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::InvalidConfig("hidden widths must be ≥ 1"));
        }
        // Range `contains` rejects NaN (all comparisons against NaN are false),
        // so these guards also catch NaN inputs.
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(ModelError::InvalidConfig("leaky_slope must satisfy 0 ≤ c < 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig("dropout_rate must satisfy 0 ≤ p < 1"));
        }
        if !self.input_prior.is_finite() || self.input_prior <= 0.0 {
            return Err(ModelError::InvalidConfig("input_prior must be finite and > 0"));
        }
        if !self.loss_exponent.is_finite()
            || self.loss_exponent <= 0.0
            || self.loss_exponent > 1.0
        {
            return Err(ModelError::InvalidConfig("loss_exponent must satisfy 0 < k ≤ 1"));
        }
        if !self.penalty_weight.is_finite() || self.penalty_weight < 0.0 {
            return Err(ModelError::InvalidConfig("penalty_weight must be finite and ≥ 0"));
        }
        Ok(())
    }

    /// Dense layer shapes as `(rows, cols)`, output layer last (rows = 1).
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut cols = self.input_dim;
        for &h in &self.hidden {
            shapes.push((h, cols));
            cols = h;
        }
        shapes.push((1, cols));
        shapes
    }

    /// Total scalar parameter count (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(r, c)| r * c + r).sum()
    }
}

/// Errors from configuration, shape, and engine plumbing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    InvalidConfig(&'static str),
    DimensionMismatch { expected: usize, got: usize },
    /// A tape operation failed while building or differentiating a replica.
    Graph(GraphError),
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ModelError::InvalidConfig(reason) => write!(f, "invalid configuration: {reason}"),
            ModelError::DimensionMismatch { expected, got } => {
                write!(f, "input has {got} features, network expects {expected}")
            }
            ModelError::Graph(e) => write!(f, "tape error: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}

impl From<GraphError> for ModelError {
    fn from(e: GraphError) -> Self {
        ModelError::Graph(e)
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// All dense-layer weights and biases, stored as one flat vector
/// (`[W₀ row-major, b₀, W₁, b₁, …]`) with per-layer offset bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    values: Vec<f64>,
    layout: Vec<LayerLayout>,
}

impl Parameters {
    fn layout_for(config: &NetworkConfig) -> (Vec<LayerLayout>, usize) {
        let mut layout = Vec::new();
        let mut off = 0;
        for (rows, cols) in config.layer_shapes() {
            layout.push(LayerLayout { rows, cols, weight_offset: off, bias_offset: off + rows * cols });
            off += rows * cols + rows;
        }
        (layout, off)
    }

    /// Wraps an existing flat vector, checking its length against the config.
    pub fn from_flat(config: &NetworkConfig, values: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, total) = Self::layout_for(config);
        if values.len() != total {
            return Err(ModelError::DimensionMismatch { expected: total, got: values.len() });
        }
        Ok(Parameters { values, layout })
    }

    pub fn layer_count(&self) -> usize {
        self.layout.len()
    }

    pub fn shape(&self, layer: usize) -> (usize, usize) {
        let l = &self.layout[layer];
        (l.rows, l.cols)
    }

    pub fn layout(&self, layer: usize) -> LayerLayout {
        self.layout[layer]
    }

    /// Row-major weight matrix of one layer.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let l = &self.layout[layer];
        &self.values[l.weight_offset..l.weight_offset + l.rows * l.cols]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let l = &self.layout[layer];
        &self.values[l.bias_offset..l.bias_offset + l.rows]
    }

    /// Flat view of every parameter; the optimizer operates on this.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Glorot-uniform initialization: weights uniform in
/// `±√(6/(fan_in + fan_out))`, biases zero; deterministic in `config.seed`.
pub fn init_params(config: &NetworkConfig) -> Result<Parameters, ModelError> {
    config.validate()?;
    let (layout, total) = Parameters::layout_for(config);
    let mut values = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for l in &layout {
        let bound = crate::fmath::sqrt(6.0 / (l.cols + l.rows) as f64);
        for w in values[l.weight_offset..l.weight_offset + l.rows * l.cols].iter_mut() {
            *w = rng.gen::<f64>() * 2.0 * bound - bound;
        }
        // Biases stay zero.
    }
    Ok(Parameters { values, layout })
}

/// Predictive Gaussian for one input: mean and variance in target units.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictiveDistribution {
    pub mean: f64,
    /// Predictive variance, floored at [`BETA_FLOOR`].
    pub variance: f64,
}

/// Post-block activation tensors retained by the probabilistic forward for
/// diagnostics: one entry per hidden block, plus the pre-floor output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub blocks: Vec<GaussianTensor>,
    pub output: GaussianTensor,
}

/// Filter partial derivatives and dropout scales cached per hidden block.
pub(crate) struct BlockCache {
    /// ∂mean_out/∂mean_in, ∂mean_out/∂var_in, ∂var_out/∂mean_in,
    /// ∂var_out/∂var_in of the leaky filter, per unit.
    pub dm_dmu: Vec<f64>,
    pub dm_dnu: Vec<f64>,
    pub dv_dmu: Vec<f64>,
    pub dv_dnu: Vec<f64>,
    /// Dropout multiplier per unit (`1/(1−p)` kept, `0` dropped); `None`
    /// when dropout is inactive.
    pub scale: Option<Vec<f64>>,
}

/// Everything the hand backward pass needs from a probabilistic forward.
pub(crate) struct Cache {
    /// Mean/variance input of each dense layer (block inputs; index 0 is the
    /// network input, last is the output layer's input).
    pub inputs: Vec<(Vec<f64>, Vec<f64>)>,
    pub blocks: Vec<BlockCache>,
    pub beta_raw: f64,
    pub floored: bool,
}

fn check_input(config: &NetworkConfig, len: usize) -> Result<(), ModelError> {
    config.validate()?;
    if len != config.input_dim {
        return Err(ModelError::DimensionMismatch { expected: config.input_dim, got: len });
    }
    Ok(())
}

/// Draws one dropout mask per hidden block (none when `p = 0`).
pub(crate) fn draw_masks<R: Rng + ?Sized>(
    config: &NetworkConfig,
    rng: &mut R,
) -> Option<Vec<Vec<bool>>> {
    if config.dropout_rate == 0.0 {
        return None;
    }
    Some(
        config
            .hidden
            .iter()
            .map(|&h| draw_dropout_mask(rng, h, config.dropout_rate))
            .collect(),
    )
}

/// Fast probabilistic forward with backward cache. Dimensions must already
/// be validated; `masks` carries one mask per hidden block or `None` for
/// evaluation mode.
pub(crate) fn forward_cached(
    params: &Parameters,
    config: &NetworkConfig,
    input_mean: &[f64],
    input_var: &[f64],
    masks: Option<&[Vec<bool>]>,
) -> (PredictiveDistribution, Cache) {
    let n_hidden = config.hidden.len();
    let slope = config.leaky_slope;
    let keep_inv = 1.0 / (1.0 - config.dropout_rate);
    let mut cache = Cache {
        inputs: Vec::with_capacity(n_hidden + 1),
        blocks: Vec::with_capacity(n_hidden),
        beta_raw: 0.0,
        floored: false,
    };
    let mut a_mean = input_mean.to_vec();
    let mut a_var = input_var.to_vec();
    for l in 0..n_hidden {
        let (rows, cols) = params.shape(l);
        let w = params.weights(l);
        let b = params.bias(l);
        let mut out_mean = vec![0.0; rows];
        let mut out_var = vec![0.0; rows];
        let mut block = BlockCache {
            dm_dmu: vec![0.0; rows],
            dm_dnu: vec![0.0; rows],
            dv_dmu: vec![0.0; rows],
            dv_dnu: vec![0.0; rows],
            scale: None,
        };
        for j in 0..rows {
            let wr = &w[j * cols..(j + 1) * cols];
            let mut m = 0.0;
            let mut v = 0.0;
            for i in 0..cols {
                m += wr[i] * a_mean[i];
                v += wr[i] * wr[i] * a_var[i];
            }
            m += b[j];
            let (fm, fv, dm_dmu, dm_dnu, dv_dmu, dv_dnu) =
                leaky_relu_moments_with_grad(m, v, slope);
            out_mean[j] = fm;
            out_var[j] = fv;
            block.dm_dmu[j] = dm_dmu;
            block.dm_dnu[j] = dm_dnu;
            block.dv_dmu[j] = dv_dmu;
            block.dv_dnu[j] = dv_dnu;
        }
        if let Some(mask) = masks.map(|ms| &ms[l]) {
            let mut scale = vec![0.0; rows];
            for j in 0..rows {
                let s = if mask[j] { keep_inv } else { 0.0 };
                scale[j] = s;
                out_mean[j] *= s;
                out_var[j] *= s * s;
            }
            block.scale = Some(scale);
        }
        cache.inputs.push((a_mean, a_var));
        cache.blocks.push(block);
        a_mean = out_mean;
        a_var = out_var;
    }
    // Output layer: one dense unit.
    let l = n_hidden;
    let (_, cols) = params.shape(l);
    let w = params.weights(l);
    let b = params.bias(l);
    let mut m = 0.0;
    let mut v = 0.0;
    for i in 0..cols {
        m += w[i] * a_mean[i];
        v += w[i] * w[i] * a_var[i];
    }
    m += b[0];
    cache.inputs.push((a_mean, a_var));
    cache.beta_raw = v;
    cache.floored = v < BETA_FLOOR;
    let beta = if cache.floored { BETA_FLOOR } else { v };
    (PredictiveDistribution { mean: m, variance: beta }, cache)
}

/// Probabilistic forward pass: filters the input Gaussian through every
/// block. In training mode dropout masks are drawn from `rng` (one mask per
/// hidden block, in layer order); in evaluation mode dropout is the
/// identity and `rng` is untouched.
pub fn forward<R: Rng + ?Sized>(
    params: &Parameters,
    config: &NetworkConfig,
    input: &GaussianTensor,
    train_mode: bool,
    rng: &mut R,
) -> Result<(PredictiveDistribution, ForwardTrace), ModelError> {
    check_input(config, input.len())?;
    let masks = if train_mode { draw_masks(config, rng) } else { None };
    let (pred, cache) = forward_cached(params, config, &input.mean, &input.var, masks.as_deref());
    let blocks = cache.inputs[1..]
        .iter()
        .map(|(m, v)| GaussianTensor::new(m.clone(), v.clone()).expect("filtered moments are valid"))
        .collect();
    let trace = ForwardTrace {
        blocks,
        output: GaussianTensor::new(vec![pred.mean], vec![cache.beta_raw])
            .expect("output moments are valid"),
    };
    Ok((pred, trace))
}

/// Evaluation-mode probabilistic forward (no dropout, no randomness).
pub fn forward_eval(
    params: &Parameters,
    config: &NetworkConfig,
    input: &GaussianTensor,
) -> Result<PredictiveDistribution, ModelError> {
    check_input(config, input.len())?;
    let (pred, _) = forward_cached(params, config, &input.mean, &input.var, None);
    Ok(pred)
}

/// Hand backward pass through the cached probabilistic forward.
///
/// Seeds are the loss partials with respect to the predictive mean (`gy`)
/// and the *floored* variance (`gb`); the floor gate zeroes `gb` when the
/// raw output variance fell below [`BETA_FLOOR`]. If `param_grads` is given
/// (flat layout matching [`Parameters::as_slice`]) the parameter gradient is
/// accumulated into it. Returns the gradients with respect to the input
/// means and input variances.
pub(crate) fn backward(
    params: &Parameters,
    config: &NetworkConfig,
    cache: &Cache,
    gy: f64,
    gb: f64,
    mut param_grads: Option<&mut [f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let n_hidden = config.hidden.len();
    let mut am = vec![gy];
    let mut av = vec![if cache.floored { 0.0 } else { gb }];
    for l in (0..=n_hidden).rev() {
        let layout = params.layout(l);
        let (rows, cols) = (layout.rows, layout.cols);
        let w = params.weights(l);
        let (a, u) = &cache.inputs[l];
        if let Some(pg) = param_grads.as_deref_mut() {
            for j in 0..rows {
                let amj = am[j];
                let avj = av[j];
                pg[layout.bias_offset + j] += amj;
                if amj == 0.0 && avj == 0.0 {
                    continue;
                }
                let wr = &w[j * cols..(j + 1) * cols];
                let row = &mut pg[layout.weight_offset + j * cols..layout.weight_offset + (j + 1) * cols];
                for i in 0..cols {
                    row[i] += amj * a[i] + avj * 2.0 * wr[i] * u[i];
                }
            }
        }
        let mut nam = vec![0.0; cols];
        let mut nav = vec![0.0; cols];
        for j in 0..rows {
            let amj = am[j];
            let avj = av[j];
            if amj == 0.0 && avj == 0.0 {
                continue;
            }
            let wr = &w[j * cols..(j + 1) * cols];
            for i in 0..cols {
                nam[i] += amj * wr[i];
                nav[i] += avj * wr[i] * wr[i];
            }
        }
        if l == 0 {
            return (nam, nav);
        }
        let block = &cache.blocks[l - 1];
        if let Some(scale) = &block.scale {
            for i in 0..cols {
                nam[i] *= scale[i];
                nav[i] *= scale[i] * scale[i];
            }
        }
        for i in 0..cols {
            let am_f = nam[i];
            let av_f = nav[i];
            nam[i] = am_f * block.dm_dmu[i] + av_f * block.dv_dmu[i];
            nav[i] = am_f * block.dm_dnu[i] + av_f * block.dv_dnu[i];
        }
        am = nam;
        av = nav;
    }
    unreachable!("loop returns at l == 0");
}

/// Deterministic forward cache: block inputs and pre-activation values.
pub(crate) struct DetCache {
    /// Input of each dense layer (index 0 = network input).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation dense outputs of each hidden block (for the
    /// activation switch in backward).
    pub pre: Vec<Vec<f64>>,
    pub scales: Vec<Option<Vec<f64>>>,
}

/// Fast deterministic forward with cache: affine → leaky relu → dropout per
/// hidden block, affine output.
pub(crate) fn det_forward_cached(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
    masks: Option<&[Vec<bool>]>,
) -> (f64, DetCache) {
    let n_hidden = config.hidden.len();
    let slope = config.leaky_slope;
    let keep_inv = 1.0 / (1.0 - config.dropout_rate);
    let mut cache = DetCache {
        inputs: Vec::with_capacity(n_hidden + 1),
        pre: Vec::with_capacity(n_hidden),
        scales: Vec::with_capacity(n_hidden),
    };
    let mut a = x.to_vec();
    for l in 0..n_hidden {
        let (rows, cols) = params.shape(l);
        let w = params.weights(l);
        let b = params.bias(l);
        let mut pre = vec![0.0; rows];
        for j in 0..rows {
            let wr = &w[j * cols..(j + 1) * cols];
            let mut s = b[j];
            for i in 0..cols {
                s += wr[i] * a[i];
            }
            pre[j] = s;
        }
        let mut out: Vec<f64> =
            pre.iter().map(|&z| if z > 0.0 { z } else { slope * z }).collect();
        let scale = masks.map(|ms| {
            let mask = &ms[l];
            let mut sc = vec![0.0; rows];
            for j in 0..rows {
                let s = if mask[j] { keep_inv } else { 0.0 };
                sc[j] = s;
                out[j] *= s;
            }
            sc
        });
        cache.inputs.push(a);
        cache.pre.push(pre);
        cache.scales.push(scale);
        a = out;
    }
    let (_, cols) = params.shape(n_hidden);
    let w = params.weights(n_hidden);
    let mut y = params.bias(n_hidden)[0];
    for i in 0..cols {
        y += w[i] * a[i];
    }
    cache.inputs.push(a);
    (y, cache)
}

/// Backward for the deterministic network. Seeds with `gy = ∂L/∂y`;
/// optionally accumulates parameter gradients; returns `∂L/∂x`.
pub(crate) fn det_backward(
    params: &Parameters,
    config: &NetworkConfig,
    cache: &DetCache,
    gy: f64,
    mut param_grads: Option<&mut [f64]>,
) -> Vec<f64> {
    let n_hidden = config.hidden.len();
    let slope = config.leaky_slope;
    let mut adj = vec![gy];
    for l in (0..=n_hidden).rev() {
        let layout = params.layout(l);
        let (rows, cols) = (layout.rows, layout.cols);
        let w = params.weights(l);
        let a = &cache.inputs[l];
        if let Some(pg) = param_grads.as_deref_mut() {
            for j in 0..rows {
                let gj = adj[j];
                pg[layout.bias_offset + j] += gj;
                if gj == 0.0 {
                    continue;
                }
                let row = &mut pg[layout.weight_offset + j * cols..layout.weight_offset + (j + 1) * cols];
                for i in 0..cols {
                    row[i] += gj * a[i];
                }
            }
        }
        let mut next = vec![0.0; cols];
        for j in 0..rows {
            let gj = adj[j];
            if gj == 0.0 {
                continue;
            }
            let wr = &w[j * cols..(j + 1) * cols];
            for i in 0..cols {
                next[i] += gj * wr[i];
            }
        }
        if l == 0 {
            return next;
        }
        let bl = l - 1;
        if let Some(scale) = &cache.scales[bl] {
            for i in 0..cols {
                next[i] *= scale[i];
            }
        }
        let pre = &cache.pre[bl];
        for i in 0..cols {
            next[i] *= if pre[i] > 0.0 { 1.0 } else { slope };
        }
        adj = next;
    }
    unreachable!("loop returns at l == 0");
}

/// Deterministic evaluation forward: ordinary affine + leaky-relu network,
/// no dropout.
pub fn forward_deterministic(
    params: &Parameters,
    config: &NetworkConfig,
    x: &[f64],
) -> Result<f64, ModelError> {
    check_input(config, x.len())?;
    Ok(det_forward_cached(params, config, x, None).0)
}

/// Handles into a tape replica of the probabilistic network.
pub struct TapeModel {
    /// One node per parameter, in flat [`Parameters::as_slice`] order;
    /// weight rows occupy contiguous id ranges.
    pub params: Vec<NodeId>,
    pub input_mean: Vec<NodeId>,
    pub input_var: Vec<NodeId>,
    /// Predictive mean node.
    pub mean: NodeId,
    /// Predictive variance node (after the [`BETA_FLOOR`] gate).
    pub variance: NodeId,
}

/// Leaky-relu moment filter in tape language; mirrors the closed forms used
/// by the hand engine, sharing φ(α) = φ(−α) between the two branches.
fn tape_leaky_filter(tape: &mut Tape, mu: NodeId, nu: NodeId, slope: f64) -> (NodeId, NodeId) {
    let nu_f = tape.max_const(nu, VARIANCE_FLOOR);
    let sd = tape.sqrt(nu_f);
    let alpha = tape.div(mu, sd);
    let cdf_p = tape.norm_cdf(alpha);
    let neg_alpha = tape.neg(alpha);
    let cdf_n = tape.norm_cdf(neg_alpha);
    let pdf = tape.norm_pdf(alpha);
    let sd_pdf = tape.mul(sd, pdf);
    // Positive branch: relu moments of (μ, ν).
    let mu_cdf = tape.mul(mu, cdf_p);
    let m_pos = tape.add(mu_cdf, sd_pdf);
    let mu_sq = tape.mul(mu, mu);
    let mu_sq_nu = tape.add(mu_sq, nu_f);
    let s_a = tape.mul(mu_sq_nu, cdf_p);
    let mu_sd_pdf = tape.mul(mu, sd_pdf);
    let s_pos = tape.add(s_a, mu_sd_pdf);
    let m_pos_sq = tape.mul(m_pos, m_pos);
    let v_pos = tape.sub(s_pos, m_pos_sq);
    // Negative branch: relu moments of (−μ, ν); φ is shared.
    let neg_mu = tape.neg(mu);
    let neg_mu_cdf = tape.mul(neg_mu, cdf_n);
    let m_neg = tape.add(neg_mu_cdf, sd_pdf);
    let s_na = tape.mul(mu_sq_nu, cdf_n);
    let neg_mu_sd_pdf = tape.mul(neg_mu, sd_pdf);
    let s_neg = tape.add(s_na, neg_mu_sd_pdf);
    let m_neg_sq = tape.mul(m_neg, m_neg);
    let v_neg = tape.sub(s_neg, m_neg_sq);
    // leaky(x) = relu(x) − c·relu(−x); the two branches never fire together,
    // so E[relu(x)·relu(−x)] = 0 and the cross term is +2c·m₊·m₋.
    let c_m_neg = tape.mul_const(m_neg, slope);
    let mean = tape.sub(m_pos, c_m_neg);
    let v_neg_c2 = tape.mul_const(v_neg, slope * slope);
    let cross = tape.mul(m_pos, m_neg);
    let cross_2c = tape.mul_const(cross, 2.0 * slope);
    let var_sum = tape.add(v_pos, v_neg_c2);
    let var_raw = tape.add(var_sum, cross_2c);
    let var = tape.max_const(var_raw, 0.0);
    (mean, var)
}

/// Builds a differentiable replica of the probabilistic forward pass on the
/// given tape, pushing parameters first (flat order) and then the input
/// moments. `masks` must match the hand pass to replicate a training-mode
/// forward; `None` replicates evaluation mode.
pub fn build_tape(
    tape: &mut Tape,
    params: &Parameters,
    config: &NetworkConfig,
    input_mean: &[f64],
    input_var: &[f64],
    masks: Option<&[Vec<bool>]>,
) -> Result<TapeModel, ModelError> {
    check_input(config, input_mean.len())?;
    if input_var.len() != input_mean.len() {
        return Err(ModelError::DimensionMismatch {
            expected: input_mean.len(),
            got: input_var.len(),
        });
    }
    let param_ids = tape.leaves(params.as_slice());
    let input_mean_ids = tape.leaves(input_mean);
    let input_var_ids = tape.leaves(input_var);
    let n_hidden = config.hidden.len();
    let keep_inv = 1.0 / (1.0 - config.dropout_rate);

    let mut a_mean = input_mean_ids.clone();
    let mut a_var = input_var_ids.clone();
    let mut head: Option<(NodeId, NodeId)> = None;
    for l in 0..=n_hidden {
        let layout = params.layout(l);
        let (rows, cols) = (layout.rows, layout.cols);
        // Mean path first, then variance path: consecutive reductions share
        // the same operand list, which the tape interns once.
        let mut m: Vec<NodeId> = Vec::with_capacity(rows);
        for j in 0..rows {
            let row = &param_ids[layout.weight_offset + j * cols..layout.weight_offset + (j + 1) * cols];
            let d = tape.dot(&a_mean, row)?;
            m.push(tape.add(d, param_ids[layout.bias_offset + j]));
        }
        let mut v: Vec<NodeId> = Vec::with_capacity(rows);
        for j in 0..rows {
            let row = &param_ids[layout.weight_offset + j * cols..layout.weight_offset + (j + 1) * cols];
            v.push(tape.dot_sq(&a_var, row)?);
        }
        if l == n_hidden {
            let floored = tape.max_const(v[0], BETA_FLOOR);
            head = Some((m[0], floored));
            break;
        }
        let mut out_mean = Vec::with_capacity(rows);
        let mut out_var = Vec::with_capacity(rows);
        for j in 0..rows {
            let (fm, fv) = tape_leaky_filter(tape, m[j], v[j], config.leaky_slope);
            match masks.map(|ms| ms[l][j]) {
                None => {
                    out_mean.push(fm);
                    out_var.push(fv);
                }
                Some(true) => {
                    out_mean.push(tape.mul_const(fm, keep_inv));
                    out_var.push(tape.mul_const(fv, keep_inv * keep_inv));
                }
                Some(false) => {
                    out_mean.push(tape.mul_const(fm, 0.0));
                    out_var.push(tape.mul_const(fv, 0.0));
                }
            }
        }
        a_mean = out_mean;
        a_var = out_var;
    }
    let (mean, variance) = head.expect("loop always reaches the output layer");
    Ok(TapeModel {
        params: param_ids,
        input_mean: input_mean_ids,
        input_var: input_var_ids,
        mean,
        variance,
    })
}
