//! Adam optimization, the two-phase training protocol, cross-validation,
//! and regression metrics.
//!
//! Training runs in two phases on one optimizer state and one random
//! stream: phase 1 minimizes the mean likelihood loss with minibatch Adam;
//! phase 2 continues from the phase-1 parameters and adds the
//! entropy-of-relevance penalty (weight `λ` from the network config). With
//! `λ = 0` the phase boundary is invisible: a two-phase run equals a
//! single-phase run of the combined epoch budget bit for bit, because both
//! phases execute the same per-sample step and the shuffle/mask stream
//! never resets.
//!
//! All data entering [`train`] is assumed standardized; input variances are
//! pinned at the configured prior `δ`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gauss::GaussianTensor;
use crate::graph::Tape;
use crate::model::{
    det_backward, det_forward_cached, draw_masks, forward_eval, init_params, ModelError,
    NetworkConfig, Parameters,
};
use crate::objective::{nll_loss, sample_objective_grad};

/// Optimization and protocol settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Run the penalty-refinement phase after likelihood training.
    pub phase2_enabled: bool,
    /// Fold count for [`cross_validate`].
    pub folds: usize,
    /// Seed of the shuffle/dropout stream (the network init has its own
    /// seed in [`NetworkConfig`]).
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Protocol defaults: Adam(0.9, 0.999, 1e−8) at learning rate 5e−4,
    /// batches of 64, 300 likelihood epochs plus 100 refinement epochs,
    /// 5 folds.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 64,
            phase1_epochs: 300,
            phase2_epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            phase2_enabled: true,
            folds: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1"));
        }
        if self.phase1_epochs == 0 {
            return Err(TrainError::InvalidConfig("phase1_epochs must be at least 1"));
        }
        if self.phase2_enabled && self.phase2_epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "phase2_epochs must be at least 1 when phase 2 is enabled",
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(TrainError::InvalidConfig("beta1 must lie in (0, 1)"));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(TrainError::InvalidConfig("beta2 must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(TrainError::InvalidConfig("epsilon must be positive and finite"));
        }
        if self.folds < 2 {
            return Err(TrainError::InvalidConfig("folds must be at least 2"));
        }
        Ok(())
    }
}

/// Training failures.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    InvalidConfig(&'static str),
    Model(ModelError),
    /// The objective became non-finite; names the offending minibatch.
    NonFiniteLoss { phase: u8, epoch: usize, batch: usize },
    /// Targets have zero variance, so R² is undefined.
    DegenerateTargets,
    /// Feature rows and target rows disagree, or the set is empty.
    BadDataset { rows: usize, targets: usize },
    /// More folds than samples.
    FoldTooLarge { folds: usize, samples: usize },
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid train config: {msg}"),
            TrainError::Model(e) => write!(f, "model error: {e}"),
            TrainError::NonFiniteLoss { phase, epoch, batch } => write!(
                f,
                "non-finite loss in phase {phase}, epoch {epoch}, batch {batch}"
            ),
            TrainError::DegenerateTargets => {
                write!(f, "targets are all identical; R² is undefined")
            }
            TrainError::BadDataset { rows, targets } => {
                write!(f, "dataset has {rows} feature rows but {targets} targets")
            }
            TrainError::FoldTooLarge { folds, samples } => {
                write!(f, "{folds} folds requested but only {samples} samples available")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over flat parameter and gradient slices.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - crate::fmath::powf(beta1, state.t as f64);
    let bc2 = 1.0 - crate::fmath::powf(beta2, state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (crate::fmath::sqrt(v_hat) + eps);
    }
}

/// Metrics of a frozen model on one data split. `loss` is the mean
/// likelihood loss for probabilistic models and the mean squared error for
/// deterministic ones; `r_squared` is absent when the split's targets are
/// degenerate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalMetrics {
    pub loss: f64,
    pub rmse: f64,
    pub r_squared: Option<f64>,
}

/// One epoch's record. Validation entries are absent when no validation
/// split was supplied.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub phase: u8,
    /// Zero-based index over the whole run (phases share the counter).
    pub epoch: usize,
    /// Mean per-sample objective over the epoch's minibatches, in training
    /// mode (dropout active; penalty included during phase 2).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_rmse: Option<f64>,
    pub val_r2: Option<f64>,
}

/// Full record of one training run. Identical seeds and configs yield
/// bit-identical reports except for `wall_clock_seconds`, which is measured
/// and therefore excluded from serialization.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub final_train: EvalMetrics,
    pub final_val: Option<EvalMetrics>,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub wall_clock_seconds: f64,
}

/// Coefficient of determination `1 − SS_res/SS_tot`.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64, TrainError> {
    if predictions.len() != targets.len() || targets.len() < 2 {
        return Err(TrainError::BadDataset { rows: predictions.len(), targets: targets.len() });
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|&y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(TrainError::DegenerateTargets);
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &y)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Root-mean-square error of predictions against targets.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> f64 {
    debug_assert_eq!(predictions.len(), targets.len());
    if predictions.is_empty() {
        return 0.0;
    }
    let ss: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &y)| (y - p) * (y - p))
        .sum();
    crate::fmath::sqrt(ss / predictions.len() as f64)
}

/// Evaluation-mode metrics of a probabilistic model: mean likelihood loss,
/// RMSE and R² of the predictive means.
pub fn evaluate(
    params: &Parameters,
    config: &NetworkConfig,
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<EvalMetrics, TrainError> {
    check_dataset(config, xs, ys)?;
    let mut preds = Vec::with_capacity(xs.len());
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let input = GaussianTensor::with_uniform_var(x.clone(), config.input_prior)
            .map_err(|_| TrainError::InvalidConfig("input prior must be positive"))?;
        let pred = forward_eval(params, config, &input)?;
        loss += nll_loss(y, &pred, config.loss_exponent);
        preds.push(pred.mean);
    }
    loss /= xs.len() as f64;
    Ok(EvalMetrics {
        loss,
        rmse: rmse(&preds, ys),
        r_squared: r_squared(&preds, ys).ok(),
    })
}

/// Evaluation-mode metrics of a deterministic model: mean squared error,
/// RMSE and R².
pub fn evaluate_deterministic(
    params: &Parameters,
    config: &NetworkConfig,
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<EvalMetrics, TrainError> {
    check_dataset(config, xs, ys)?;
    let mut preds = Vec::with_capacity(xs.len());
    for x in xs {
        preds.push(crate::model::forward_deterministic(params, config, x)?);
    }
    let e = rmse(&preds, ys);
    Ok(EvalMetrics { loss: e * e, rmse: e, r_squared: r_squared(&preds, ys).ok() })
}

fn check_dataset(
    config: &NetworkConfig,
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<(), TrainError> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(TrainError::BadDataset { rows: xs.len(), targets: ys.len() });
    }
    for x in xs {
        if x.len() != config.input_dim {
            return Err(TrainError::Model(ModelError::DimensionMismatch {
                expected: config.input_dim,
                got: x.len(),
            }));
        }
    }
    Ok(())
}

#[cfg(feature = "std")]
fn now() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(not(feature = "std"))]
fn now() -> Option<()> {
    None
}

#[cfg(feature = "std")]
fn elapsed_seconds(start: &Option<std::time::Instant>) -> f64 {
    start.map(|s| s.elapsed().as_secs_f64()).unwrap_or(0.0)
}

#[cfg(not(feature = "std"))]
fn elapsed_seconds(_start: &Option<()>) -> f64 {
    0.0
}

/// Trains a probabilistic network from a fresh initialization: phase 1 on
/// the likelihood loss, then (if enabled) phase 2 on the regularized
/// objective, continuing the same optimizer state and random stream.
/// Expects standardized data.
pub fn train(
    config: &NetworkConfig,
    tcfg: &TrainConfig,
    train_x: &[Vec<f64>],
    train_y: &[f64],
    val: Option<(&[Vec<f64>], &[f64])>,
) -> Result<(Parameters, TrainReport), TrainError> {
    config.validate()?;
    tcfg.validate()?;
    check_dataset(config, train_x, train_y)?;
    if let Some((vx, vy)) = val {
        check_dataset(config, vx, vy)?;
    }
    let start = now();

    let mut params = init_params(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut state = AdamState::new(params.len());
    let mut grads = vec![0.0; params.len()];
    let mut tape = Tape::new();
    let input_var = vec![config.input_prior; config.input_dim];
    let n = train_x.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();

    let phase1_cfg = {
        let mut c = config.clone();
        c.penalty_weight = 0.0;
        c
    };
    let phases: &[(u8, usize, &NetworkConfig)] = if tcfg.phase2_enabled {
        &[(1, tcfg.phase1_epochs, &phase1_cfg), (2, tcfg.phase2_epochs, config)]
    } else {
        &[(1, tcfg.phase1_epochs, &phase1_cfg)]
    };

    let mut global_epoch = 0usize;
    for &(phase, epochs, phase_cfg) in phases {
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (batch_idx, batch) in order.chunks(tcfg.batch_size).enumerate() {
                for g in grads.iter_mut() {
                    *g = 0.0;
                }
                let weight = 1.0 / batch.len() as f64;
                let mut batch_loss = 0.0;
                for &i in batch {
                    let masks = draw_masks(phase_cfg, &mut rng);
                    let value = sample_objective_grad(
                        &params,
                        phase_cfg,
                        &train_x[i],
                        &input_var,
                        train_y[i],
                        masks.as_deref(),
                        weight,
                        &mut grads,
                        &mut tape,
                    )?;
                    batch_loss += value;
                }
                if !batch_loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        phase,
                        epoch: global_epoch,
                        batch: batch_idx,
                    });
                }
                epoch_loss += batch_loss;
                adam_step(
                    params.as_mut_slice(),
                    &grads,
                    &mut state,
                    tcfg.learning_rate,
                    tcfg.beta1,
                    tcfg.beta2,
                    tcfg.epsilon,
                );
            }
            let record = match val {
                Some((vx, vy)) => {
                    let m = evaluate(&params, config, vx, vy)?;
                    EpochRecord {
                        phase,
                        epoch: global_epoch,
                        train_loss: epoch_loss / n as f64,
                        val_loss: Some(m.loss),
                        val_rmse: Some(m.rmse),
                        val_r2: m.r_squared,
                    }
                }
                None => EpochRecord {
                    phase,
                    epoch: global_epoch,
                    train_loss: epoch_loss / n as f64,
                    val_loss: None,
                    val_rmse: None,
                    val_r2: None,
                },
            };
            history.push(record);
            global_epoch += 1;
        }
    }

    let final_train = evaluate(&params, config, train_x, train_y)?;
    let final_val = match val {
        Some((vx, vy)) => Some(evaluate(&params, config, vx, vy)?),
        None => None,
    };
    let report = TrainReport {
        history,
        final_train,
        final_val,
        wall_clock_seconds: elapsed_seconds(&start),
    };
    Ok((params, report))
}

/// Trains an ordinary deterministic network of the same architecture on
/// mean squared error — the reference model for the gradient-based
/// attribution baselines. Single phase of `phase1_epochs`; dropout, Adam
/// settings and random streams mirror [`train`].
pub fn train_deterministic(
    config: &NetworkConfig,
    tcfg: &TrainConfig,
    train_x: &[Vec<f64>],
    train_y: &[f64],
    val: Option<(&[Vec<f64>], &[f64])>,
) -> Result<(Parameters, TrainReport), TrainError> {
    config.validate()?;
    tcfg.validate()?;
    check_dataset(config, train_x, train_y)?;
    if let Some((vx, vy)) = val {
        check_dataset(config, vx, vy)?;
    }
    let start = now();

    let mut params = init_params(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut state = AdamState::new(params.len());
    let mut grads = vec![0.0; params.len()];
    let n = train_x.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();

    for epoch in 0..tcfg.phase1_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(tcfg.batch_size).enumerate() {
            for g in grads.iter_mut() {
                *g = 0.0;
            }
            let weight = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let masks = draw_masks(config, &mut rng);
                let (y_hat, cache) =
                    det_forward_cached(&params, config, &train_x[i], masks.as_deref());
                let r = y_hat - train_y[i];
                batch_loss += r * r;
                let _ = det_backward(&params, config, &cache, weight * 2.0 * r, Some(&mut grads));
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { phase: 1, epoch, batch: batch_idx });
            }
            epoch_loss += batch_loss;
            adam_step(
                params.as_mut_slice(),
                &grads,
                &mut state,
                tcfg.learning_rate,
                tcfg.beta1,
                tcfg.beta2,
                tcfg.epsilon,
            );
        }
        let record = match val {
            Some((vx, vy)) => {
                let m = evaluate_deterministic(&params, config, vx, vy)?;
                EpochRecord {
                    phase: 1,
                    epoch,
                    train_loss: epoch_loss / n as f64,
                    val_loss: Some(m.loss),
                    val_rmse: Some(m.rmse),
                    val_r2: m.r_squared,
                }
            }
            None => EpochRecord {
                phase: 1,
                epoch,
                train_loss: epoch_loss / n as f64,
                val_loss: None,
                val_rmse: None,
                val_r2: None,
            },
        };
        history.push(record);
    }

    let final_train = evaluate_deterministic(&params, config, train_x, train_y)?;
    let final_val = match val {
        Some((vx, vy)) => Some(evaluate_deterministic(&params, config, vx, vy)?),
        None => None,
    };
    let report = TrainReport {
        history,
        final_train,
        final_val,
        wall_clock_seconds: elapsed_seconds(&start),
    };
    Ok((params, report))
}

/// One fold's outcome inside a [`CvReport`].
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FoldReport {
    pub fold: usize,
    pub report: TrainReport,
}

/// Cross-validation outcome: per-fold reports plus the aggregate of the
/// per-fold validation R² values (mean and population standard deviation).
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub val_r2_mean: f64,
    pub val_r2_std: f64,
}

/// Deterministic fold assignment: indices shuffled once from the train
/// seed, fold `f` taking every `folds`-th index. Folds are disjoint, cover
/// the dataset, and differ in size by at most one.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut out = vec![Vec::with_capacity(n / folds + 1); folds];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    out
}

/// K-fold cross-validation of the probabilistic model. Each fold trains a
/// fresh network (same init seed) on the remaining folds, with a
/// fold-specific shuffle/mask stream derived as `seed + fold + 1`.
pub fn cross_validate(
    config: &NetworkConfig,
    tcfg: &TrainConfig,
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<CvReport, TrainError> {
    config.validate()?;
    tcfg.validate()?;
    check_dataset(config, xs, ys)?;
    if tcfg.folds > xs.len() {
        return Err(TrainError::FoldTooLarge { folds: tcfg.folds, samples: xs.len() });
    }
    let assignment = fold_indices(xs.len(), tcfg.folds, tcfg.seed);
    let mut folds = Vec::with_capacity(tcfg.folds);
    let mut r2s = Vec::with_capacity(tcfg.folds);
    for (f, val_idx) in assignment.iter().enumerate() {
        let in_val: Vec<bool> = {
            let mut flags = vec![false; xs.len()];
            for &i in val_idx {
                flags[i] = true;
            }
            flags
        };
        let mut tx = Vec::with_capacity(xs.len() - val_idx.len());
        let mut ty = Vec::with_capacity(xs.len() - val_idx.len());
        let mut vx = Vec::with_capacity(val_idx.len());
        let mut vy = Vec::with_capacity(val_idx.len());
        for i in 0..xs.len() {
            if in_val[i] {
                vx.push(xs[i].clone());
                vy.push(ys[i]);
            } else {
                tx.push(xs[i].clone());
                ty.push(ys[i]);
            }
        }
        let fold_tcfg = TrainConfig { seed: tcfg.seed.wrapping_add(f as u64 + 1), ..tcfg.clone() };
        let (_, report) = train(config, &fold_tcfg, &tx, &ty, Some((&vx, &vy)))?;
        let r2 = report
            .final_val
            .as_ref()
            .and_then(|m| m.r_squared)
            .ok_or(TrainError::DegenerateTargets)?;
        r2s.push(r2);
        folds.push(FoldReport { fold: f, report });
    }
    let mean = r2s.iter().sum::<f64>() / r2s.len() as f64;
    let var = r2s.iter().map(|&r| (r - mean) * (r - mean)).sum::<f64>() / r2s.len() as f64;
    Ok(CvReport { folds, val_r2_mean: mean, val_r2_std: crate::fmath::sqrt(var) })
}
