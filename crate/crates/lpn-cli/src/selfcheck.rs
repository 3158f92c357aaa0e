//! Numerical self-check: Monte-Carlo oracles for the moment filters,
//! finite-difference checks for the first- and second-order gradients, and
//! closed-form calibration oracles.
//!
//! Every check is deterministic (fixed seeds) and reports its observed
//! error against an explicit tolerance. The `--inject` flag corrupts the
//! checked quantity of one named check — simulating a library defect — to
//! demonstrate that the corresponding oracle actually catches it; the run
//! then exits nonzero naming the failed check.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use lpn_core::gap::{calibrate_sigma, kl_divergence, GapConfig};
use lpn_core::gauss::{filter_dense, filter_dropout, filter_leaky_relu};
use lpn_core::model::{build_tape, forward_eval, init_params, Parameters};
use lpn_core::objective::{entropy_penalty, entropy_penalty_node, nll_loss, nll_node, relevance_lpn};
use lpn_core::{GaussianTensor, NetworkConfig, Tape};

use crate::config::FileConfig;
use crate::error::CliError;
use crate::report::{Meta, Report};

/// Deliberate corruption of one checked quantity, for verifying that the
/// self-check catches real defects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Corrupts the leaky-relu output variance before the MC comparison.
    ReluVariance,
    /// Corrupts the dense-layer output variance before the MC comparison.
    DenseVariance,
    /// Corrupts the loss gradient with respect to the predictive variance.
    LossGradient,
}

impl Fault {
    fn tag(self) -> &'static str {
        match self {
            Fault::ReluVariance => "relu-variance",
            Fault::DenseVariance => "dense-variance",
            Fault::LossGradient => "loss-gradient",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    /// Observed error in the units named by `metric`.
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub metric: String,
}

impl CheckOutcome {
    fn new(name: &str, observed: f64, tolerance: f64, metric: &str) -> Self {
        CheckOutcome {
            name: name.into(),
            observed,
            tolerance,
            pass: observed.is_finite() && observed <= tolerance,
            metric: metric.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelfcheckPayload {
    pub injected_fault: Option<String>,
    pub checks: Vec<CheckOutcome>,
    pub failed: Vec<String>,
}

const MC_SAMPLES: usize = 200_000;
/// Mean comparisons pass within this many Monte-Carlo standard errors.
const MEAN_SE_TOL: f64 = 5.0;
/// Variance comparisons pass within this relative error (≈10 standard
/// errors at 200k samples, with margin for excess kurtosis).
const VAR_REL_TOL: f64 = 0.03;

struct McStats {
    mean: Vec<f64>,
    var: Vec<f64>,
    se: Vec<f64>,
}

/// Streams `n` draws of a `dim`-dimensional statistic and returns per-unit
/// sample mean, variance, and standard error of the mean.
fn mc_stats(
    n: usize,
    dim: usize,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng, &mut [f64]),
) -> McStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0f64; dim];
    let mut sumsq = vec![0.0f64; dim];
    let mut y = vec![0.0f64; dim];
    for _ in 0..n {
        draw(&mut rng, &mut y);
        for j in 0..dim {
            sum[j] += y[j];
            sumsq[j] += y[j] * y[j];
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|&s| s / nf).collect();
    let var: Vec<f64> =
        sumsq.iter().zip(&mean).map(|(&sq, &m)| (sq - nf * m * m) / (nf - 1.0)).collect();
    let se: Vec<f64> = var.iter().map(|&v| (v / nf).sqrt()).collect();
    McStats { mean, var, se }
}

fn max_se_error(lib: &[f64], mc: &McStats) -> f64 {
    lib.iter()
        .zip(&mc.mean)
        .zip(&mc.se)
        .map(|((&l, &m), &se)| (m - l).abs() / se.max(1e-300))
        .fold(0.0, f64::max)
}

fn max_rel_error(lib: &[f64], mc_var: &[f64]) -> f64 {
    lib.iter()
        .zip(mc_var)
        .map(|(&l, &m)| (m / l - 1.0).abs())
        .fold(0.0, f64::max)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller would draw pairs; rand_distr's ziggurat sampler is fine
    // and deterministic for a fixed stream.
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

// Shared fixture: a 4-input, 3-unit dense layer with roomy input variances.
const DENSE_W: [f64; 12] =
    [0.8, -1.2, 0.5, 0.3, -0.7, 0.9, 1.1, -0.4, 0.2, 0.6, -0.9, 1.3];
const DENSE_B: [f64; 3] = [0.1, -0.2, 0.3];
const IN_MEAN: [f64; 4] = [0.4, -0.6, 1.1, -0.2];
const IN_VAR: [f64; 4] = [0.5, 0.9, 0.3, 0.7];
const LEAKY_SLOPE: f64 = 0.01;

fn sample_input(rng: &mut ChaCha8Rng, x: &mut [f64]) {
    for j in 0..IN_MEAN.len() {
        x[j] = IN_MEAN[j] + IN_VAR[j].sqrt() * standard_normal(rng);
    }
}

fn dense_apply(x: &[f64], y: &mut [f64]) {
    for r in 0..DENSE_B.len() {
        let mut acc = DENSE_B[r];
        for c in 0..x.len() {
            acc += DENSE_W[r * x.len() + c] * x[c];
        }
        y[r] = acc;
    }
}

fn checks_mc_dense(fault: Option<Fault>, out: &mut Vec<CheckOutcome>) -> Result<(), CliError> {
    let input = GaussianTensor::new(IN_MEAN.to_vec(), IN_VAR.to_vec())
        .map_err(|e| CliError::Core(e.to_string()))?;
    let lib = filter_dense(&DENSE_W, &DENSE_B, &input).map_err(|e| CliError::Core(e.to_string()))?;
    let mc = mc_stats(MC_SAMPLES, 3, 901, |rng, y| {
        let mut x = [0.0; 4];
        sample_input(rng, &mut x);
        dense_apply(&x, y);
    });
    out.push(CheckOutcome::new(
        "mc-dense-mean",
        max_se_error(&lib.mean, &mc),
        MEAN_SE_TOL,
        "max |Δmean| in MC standard errors",
    ));
    let checked_var: Vec<f64> = lib
        .var
        .iter()
        .map(|&v| if fault == Some(Fault::DenseVariance) { v * 1.1 } else { v })
        .collect();
    out.push(CheckOutcome::new(
        "mc-dense-variance",
        max_rel_error(&checked_var, &mc.var),
        VAR_REL_TOL,
        "max relative variance error vs MC",
    ));
    Ok(())
}

fn checks_mc_leaky(fault: Option<Fault>, out: &mut Vec<CheckOutcome>) -> Result<(), CliError> {
    let input = GaussianTensor::new(IN_MEAN.to_vec(), IN_VAR.to_vec())
        .map_err(|e| CliError::Core(e.to_string()))?;
    let pre = filter_dense(&DENSE_W, &DENSE_B, &input).map_err(|e| CliError::Core(e.to_string()))?;
    let lib = filter_leaky_relu(&pre, LEAKY_SLOPE).map_err(|e| CliError::Core(e.to_string()))?;
    let mc = mc_stats(MC_SAMPLES, 3, 902, |rng, y| {
        let mut x = [0.0; 4];
        sample_input(rng, &mut x);
        dense_apply(&x, y);
        for v in y.iter_mut() {
            if *v < 0.0 {
                *v *= LEAKY_SLOPE;
            }
        }
    });
    out.push(CheckOutcome::new(
        "mc-leaky-relu-mean",
        max_se_error(&lib.mean, &mc),
        MEAN_SE_TOL,
        "max |Δmean| in MC standard errors",
    ));
    let checked_var: Vec<f64> = lib
        .var
        .iter()
        .zip(&lib.mean)
        .map(|(&v, &m)| {
            if fault == Some(Fault::ReluVariance) {
                v + 2.0 * m * m + 0.01
            } else {
                v
            }
        })
        .collect();
    out.push(CheckOutcome::new(
        "mc-leaky-relu-variance",
        max_rel_error(&checked_var, &mc.var),
        VAR_REL_TOL,
        "max relative variance error vs MC",
    ));
    Ok(())
}

fn checks_mc_dropout(out: &mut Vec<CheckOutcome>) -> Result<(), CliError> {
    let rate = 0.3;
    let mask = [true, false, true, true];
    let input = GaussianTensor::new(IN_MEAN.to_vec(), IN_VAR.to_vec())
        .map_err(|e| CliError::Core(e.to_string()))?;
    let lib = filter_dropout(&input, &mask, rate).map_err(|e| CliError::Core(e.to_string()))?;
    let keep = 1.0 - rate;
    let mc = mc_stats(MC_SAMPLES, 4, 903, |rng, y| {
        let mut x = [0.0; 4];
        sample_input(rng, &mut x);
        for j in 0..4 {
            y[j] = if mask[j] { x[j] / keep } else { 0.0 };
        }
    });
    // The masked-off unit has exactly zero mean and variance on both
    // sides; compare only the kept units to avoid 0/0.
    let kept: Vec<usize> = (0..4).filter(|&j| mask[j]).collect();
    let lib_mean: Vec<f64> = kept.iter().map(|&j| lib.mean[j]).collect();
    let lib_var: Vec<f64> = kept.iter().map(|&j| lib.var[j]).collect();
    let mc_kept = McStats {
        mean: kept.iter().map(|&j| mc.mean[j]).collect(),
        var: kept.iter().map(|&j| mc.var[j]).collect(),
        se: kept.iter().map(|&j| mc.se[j]).collect(),
    };
    out.push(CheckOutcome::new(
        "mc-dropout-mean",
        max_se_error(&lib_mean, &mc_kept),
        MEAN_SE_TOL,
        "max |Δmean| in MC standard errors (kept units)",
    ));
    out.push(CheckOutcome::new(
        "mc-dropout-variance",
        max_rel_error(&lib_var, &mc_kept.var),
        VAR_REL_TOL,
        "max relative variance error vs MC (kept units)",
    ));
    let off_ok = lib.mean[1] == 0.0 && lib.var[1] == 0.0;
    out.push(CheckOutcome::new(
        "mc-dropout-masked-unit",
        if off_ok { 0.0 } else { 1.0 },
        0.5,
        "masked unit must be exactly zero",
    ));
    Ok(())
}

/// Loss gradients at a fixed point via the tape versus central finite
/// differences of the closed-form loss value.
fn checks_loss_gradient(fault: Option<Fault>, out: &mut Vec<CheckOutcome>) {
    let (y, mu, beta, k) = (0.3, 0.8, 0.6, 0.5);
    let mut tape = Tape::new();
    let mu_n = tape.leaf(mu);
    let beta_n = tape.leaf(beta);
    let loss = nll_node(&mut tape, mu_n, beta_n, y, k);
    let grads = tape.gradient(loss, &[mu_n, beta_n]).expect("fixed graph");
    let (g_mu, g_beta) = (grads[0], grads[1]);
    let g_beta = if fault == Some(Fault::LossGradient) { g_beta + 0.1 } else { g_beta };

    let value = |mu: f64, beta: f64| {
        nll_loss(
            y,
            &lpn_core::PredictiveDistribution { mean: mu, variance: beta },
            k,
        )
    };
    let h = 1e-5;
    let fd_mu = (value(mu + h, beta) - value(mu - h, beta)) / (2.0 * h);
    let fd_beta = (value(mu, beta + h) - value(mu, beta - h)) / (2.0 * h);
    out.push(CheckOutcome::new(
        "loss-gradient-mean",
        (g_mu - fd_mu).abs() / fd_mu.abs().max(1e-12),
        1e-6,
        "relative error vs central finite difference",
    ));
    out.push(CheckOutcome::new(
        "loss-gradient-variance",
        (g_beta - fd_beta).abs() / fd_beta.abs().max(1e-12),
        1e-6,
        "relative error vs central finite difference",
    ));
}

fn small_net() -> NetworkConfig {
    NetworkConfig {
        input_dim: 3,
        hidden: vec![4],
        leaky_slope: 0.01,
        dropout_rate: 0.0,
        input_prior: 0.01,
        loss_exponent: 0.5,
        penalty_weight: 1e-3,
        seed: 7,
    }
}

/// Full likelihood-objective parameter gradient versus central finite
/// differences of the evaluation-mode loss value.
fn check_objective_gradient(out: &mut Vec<CheckOutcome>) -> Result<(), CliError> {
    let net = small_net();
    let mut params = init_params(&net)?;
    let x = vec![0.6, -0.4, 0.3];
    let y = 0.4;
    let var = vec![net.input_prior; 3];

    let mut tape = Tape::new();
    let model = build_tape(&mut tape, &params, &net, &x, &var, None)?;
    let loss = nll_node(&mut tape, model.mean, model.variance, y, net.loss_exponent);
    let grads = tape.gradient(loss, &model.params).map_err(|e| CliError::Core(e.to_string()))?;

    let value = |p: &Parameters| -> Result<f64, CliError> {
        let input = GaussianTensor::with_uniform_var(x.clone(), net.input_prior)
            .map_err(|e| CliError::Core(e.to_string()))?;
        let pred = forward_eval(p, &net, &input)?;
        Ok(nll_loss(y, &pred, net.loss_exponent))
    };
    let h = 1e-4;
    let mut observed = 0.0f64;
    let mut checked = 0usize;
    for i in (0..params.len()).step_by(3) {
        if grads[i].abs() < 1e-8 {
            continue;
        }
        let orig = params.as_slice()[i];
        params.as_mut_slice()[i] = orig + h;
        let up = value(&params)?;
        params.as_mut_slice()[i] = orig - h;
        let down = value(&params)?;
        params.as_mut_slice()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        observed = observed.max((grads[i] - fd).abs() / fd.abs().max(1e-12));
        checked += 1;
    }
    if checked < 4 {
        observed = f64::INFINITY;
    }
    out.push(CheckOutcome::new(
        "objective-gradient-fd",
        observed,
        1e-4,
        "max relative error vs central finite difference over sampled parameters",
    ));
    Ok(())
}

/// Entropy-penalty parameter gradient (second-order autodiff) versus
/// central finite differences of the penalty value.
fn check_entropy_second_order(out: &mut Vec<CheckOutcome>) -> Result<(), CliError> {
    let net = small_net();
    let mut params = init_params(&net)?;
    let x = vec![0.6, -0.4, 0.3];
    let var = vec![net.input_prior; 3];

    let mut tape = Tape::new();
    let model = build_tape(&mut tape, &params, &net, &x, &var, None)?;
    let penalty = entropy_penalty_node(&mut tape, &model).map_err(|e| CliError::Core(e.to_string()))?;
    let grads = tape
        .gradient_of_gradient(penalty, &model.params)
        .map_err(|e| CliError::Core(e.to_string()))?;

    let value = |p: &Parameters| -> Result<f64, CliError> {
        Ok(entropy_penalty(&relevance_lpn(p, &net, &x)?))
    };
    let h = 1e-3;
    let mut observed = 0.0f64;
    let mut checked = 0usize;
    for i in (0..params.len()).step_by(2) {
        if grads[i].abs() < 1e-6 {
            continue;
        }
        let orig = params.as_slice()[i];
        params.as_mut_slice()[i] = orig + h;
        let up = value(&params)?;
        params.as_mut_slice()[i] = orig - h;
        let down = value(&params)?;
        params.as_mut_slice()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        observed = observed.max((grads[i] - fd).abs() / fd.abs().max(1e-12));
        checked += 1;
    }
    if checked < 4 {
        observed = f64::INFINITY;
    }
    out.push(CheckOutcome::new(
        "entropy-second-order-fd",
        observed,
        2e-3,
        "max relative error vs central finite difference over sampled parameters",
    ));
    Ok(())
}

/// Calibration on closed-form linear models, where the converged input
/// variances are known analytically.
fn checks_calibration(out: &mut Vec<CheckOutcome>) -> Result<(), CliError> {
    let gap = GapConfig::default();

    // ŷ = 3x: β(σ) = 9σ, so hitting t·β* needs σ̂ = t·δ exactly.
    let net1 = NetworkConfig {
        input_dim: 1,
        hidden: vec![],
        leaky_slope: 0.01,
        dropout_rate: 0.0,
        input_prior: 0.01,
        loss_exponent: 0.5,
        penalty_weight: 0.0,
        seed: 0,
    };
    let p1 = Parameters::from_flat(&net1, vec![3.0, 0.0])?;
    let cal = calibrate_sigma(&p1, &net1, &[0.7], 2.0, &gap, None)
        .map_err(|e| CliError::Core(e.to_string()))?;
    out.push(CheckOutcome::new(
        "calibration-linear-slope",
        (cal.sigma[0] / (2.0 * net1.input_prior) - 1.0).abs(),
        0.02,
        "relative deviation of σ̂ from the analytic optimum at t = 2",
    ));

    // Dead second feature: its gradient is identically zero, so Adam must
    // leave its variance at δ exactly.
    let net2 = NetworkConfig { input_dim: 2, ..net1.clone() };
    let p2 = Parameters::from_flat(&net2, vec![3.0, 0.0, 0.0])?;
    let cal2 = calibrate_sigma(&p2, &net2, &[0.7, -0.2], 2.0, &gap, None)
        .map_err(|e| CliError::Core(e.to_string()))?;
    out.push(CheckOutcome::new(
        "calibration-dead-feature",
        (cal2.sigma[1] - net2.input_prior).abs(),
        1e-12,
        "absolute deviation of a zero-gradient feature from δ",
    ));

    // t = 1 is already calibrated: the optimizer must not take a step.
    let cal3 = calibrate_sigma(&p1, &net1, &[0.7], 1.0, &gap, None)
        .map_err(|e| CliError::Core(e.to_string()))?;
    out.push(CheckOutcome::new(
        "calibration-anchor-iterations",
        cal3.iterations as f64,
        0.5,
        "iterations spent at t = 1 (must be zero)",
    ));
    Ok(())
}

/// Closed-form KL gradient identities versus finite differences of the KL
/// value — the formulas the calibration optimizer relies on.
fn check_kl_gradient(out: &mut Vec<CheckOutcome>) {
    let (m, v, tm, tv) = (1.3, 0.8, 0.9, 1.7);
    let analytic_dv = 0.5 / tv - 0.5 / v;
    let analytic_dm = (m - tm) / tv;
    let h = 1e-6;
    let fd_dv = (kl_divergence(m, v + h, tm, tv) - kl_divergence(m, v - h, tm, tv)) / (2.0 * h);
    let fd_dm = (kl_divergence(m + h, v, tm, tv) - kl_divergence(m - h, v, tm, tv)) / (2.0 * h);
    let err = ((analytic_dv - fd_dv).abs() / fd_dv.abs())
        .max((analytic_dm - fd_dm).abs() / fd_dm.abs());
    out.push(CheckOutcome::new(
        "kl-gradient-fd",
        err,
        1e-6,
        "max relative error of the closed-form KL gradients vs finite differences",
    ));
}

/// Runs the full battery; deterministic for a fixed `fault` argument.
pub fn run_checks(fault: Option<Fault>) -> Result<Vec<CheckOutcome>, CliError> {
    let mut out = Vec::new();
    checks_mc_dense(fault, &mut out)?;
    checks_mc_leaky(fault, &mut out)?;
    checks_mc_dropout(&mut out)?;
    checks_loss_gradient(fault, &mut out);
    check_objective_gradient(&mut out)?;
    check_entropy_second_order(&mut out)?;
    checks_calibration(&mut out)?;
    check_kl_gradient(&mut out);
    Ok(out)
}

/// The selfcheck verb: prints one line per check, writes a report, and
/// fails (nonzero exit) when any check fails.
pub fn cmd_selfcheck(
    cfg: &FileConfig,
    out_dir: &Path,
    fault: Option<Fault>,
) -> Result<(), CliError> {
    let started = Instant::now();
    if let Some(f) = fault {
        println!(
            "selfcheck: injected fault {:?} — corrupting that check's quantity to prove the \
             oracle catches it",
            f.tag()
        );
    }
    let checks = run_checks(fault)?;
    for c in &checks {
        println!(
            "selfcheck: [{}] {:32} observed {:>12.6e}  tolerance {:>9.3e}  ({})",
            if c.pass { " ok " } else { "FAIL" },
            c.name,
            c.observed,
            c.tolerance,
            c.metric
        );
    }
    let failed: Vec<String> =
        checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    println!(
        "selfcheck: {} checks, {} failed",
        checks.len(),
        failed.len()
    );

    let payload = SelfcheckPayload {
        injected_fault: fault.map(|f| f.tag().to_string()),
        checks,
        failed: failed.clone(),
    };
    let mut meta = Meta::new("selfcheck", &cfg.config_hash(), "-", "-", 0);
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    let report_path = out_dir.join("selfcheck.json");
    meta.outputs = vec!["selfcheck.json".into()];
    Report::new(meta, &payload)?.write(&report_path)?;

    if !failed.is_empty() {
        return Err(CliError::Check(format!(
            "self-check failed: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes_every_check() {
        let checks = run_checks(None).unwrap();
        assert!(checks.len() >= 12);
        for c in &checks {
            assert!(c.pass, "{} failed: observed {} > tolerance {}", c.name, c.observed, c.tolerance);
        }
    }

    #[test]
    fn each_fault_breaks_exactly_its_target() {
        for (fault, target) in [
            (Fault::ReluVariance, "mc-leaky-relu-variance"),
            (Fault::DenseVariance, "mc-dense-variance"),
            (Fault::LossGradient, "loss-gradient-variance"),
        ] {
            let checks = run_checks(Some(fault)).unwrap();
            let failed: Vec<&str> =
                checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            assert_eq!(failed, vec![target], "fault {fault:?}");
        }
    }
}
