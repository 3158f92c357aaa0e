//! Acceptance suite: ten numbered criteria covering the moment filters,
//! both gradient engines, calibration, the two dataset reproductions, the
//! masking-order property, determinism, and the self-check. Each criterion
//! prints exactly one PASS/FAIL line; the process exits nonzero if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lpn_cli::commands::{self, CvPayload, MaskSweepPayload, MethodFlag, RankingPayload, SweepOrder};
use lpn_cli::config::{DataSection, FileConfig, NetworkSection, TrainSection};
use lpn_cli::report::{canonical_json, read_report};
use lpn_core::gap::{gap_scores, GapConfig};
use lpn_core::gauss::{filter_dense, filter_leaky_relu, filter_relu, std_normal_cdf};
use lpn_core::model::{build_tape, forward_eval, init_params, Parameters};
use lpn_core::objective::{entropy_penalty, entropy_penalty_node, nll_loss, nll_node, relevance_lpn};
use lpn_core::{GaussianTensor, NetworkConfig};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

struct Suite {
    failures: Vec<String>,
}

impl Suite {
    fn criterion(&mut self, n: usize, name: &str, body: impl FnOnce() -> Result<String, String>) {
        let started = Instant::now();
        let outcome = body();
        let elapsed = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                println!("criterion {n:2} [PASS] {name}: {detail} ({elapsed:.1}s)");
            }
            Err(detail) => {
                println!("criterion {n:2} [FAIL] {name}: {detail} ({elapsed:.1}s)");
                self.failures.push(format!("{n} {name}"));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 1. ADF vs Monte-Carlo on random dense + leaky-relu stacks.
// ---------------------------------------------------------------------------

fn c1_adf_mc_oracle() -> Result<String, String> {
    const MC_N: usize = 1_000_000;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_260_818);
    let mut max_z = 0.0f64;
    let mut max_rel = 0.0f64;
    for _ in 0..100 {
        let din = rng.gen_range(1..=8usize);
        let dout = rng.gen_range(1..=8usize);
        let slope = rng.gen_range(0.0..0.3);
        let w: Vec<f64> = (0..dout * din).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..dout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mu: Vec<f64> = (0..din).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let nu: Vec<f64> = (0..din).map(|_| rng.gen_range(0.05..1.0)).collect();

        let input = GaussianTensor::new(mu.clone(), nu.clone()).map_err(|e| e.to_string())?;
        let pre = filter_dense(&w, &b, &input).map_err(|e| e.to_string())?;
        let adf = filter_leaky_relu(&pre, slope).map_err(|e| e.to_string())?;

        let sd: Vec<f64> = nu.iter().map(|v| v.sqrt()).collect();
        let mut sum = vec![0.0f64; dout];
        let mut sq = vec![0.0f64; dout];
        let mut x = vec![0.0f64; din];
        for _ in 0..MC_N {
            for j in 0..din {
                x[j] = mu[j] + sd[j] * normal(&mut rng);
            }
            for r in 0..dout {
                let mut acc = b[r];
                for c in 0..din {
                    acc += w[r * din + c] * x[c];
                }
                let y = if acc > 0.0 { acc } else { slope * acc };
                sum[r] += y;
                sq[r] += y * y;
            }
        }
        let nf = MC_N as f64;
        for r in 0..dout {
            let m = sum[r] / nf;
            let v = (sq[r] - nf * m * m) / (nf - 1.0);
            let se = (v / nf).sqrt();
            max_z = max_z.max((adf.mean[r] - m).abs() / se);
            max_rel = max_rel.max((adf.var[r] / v - 1.0).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "100 random stacks x 1e6 samples: max mean deviation {max_z:.2} MC standard errors \
         (limit 3), max variance relative error {max_rel:.4} (limit 0.05), {secs:.0}s (limit 120)"
    );
    if max_z <= 3.0 && max_rel <= 0.05 && secs < 120.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 2. Closed-form filter fixtures at (mean 0, variance 1).
// ---------------------------------------------------------------------------

fn c2_fixtures() -> Result<String, String> {
    let input = GaussianTensor::new(vec![0.0], vec![1.0]).map_err(|e| e.to_string())?;
    let relu = filter_relu(&input);
    let leaky = filter_leaky_relu(&input, 0.01).map_err(|e| e.to_string())?;

    let checks = [
        ("relu mean", relu.mean[0], 0.3989422804),
        ("relu variance", relu.var[0], 0.3408450569),
        ("leaky mean", leaky.mean[0], 0.3949528576),
        // The value below is forced by the moment identity
        // mean^2 + variance = E[y^2] = 0.5*(1 + c^2) = 0.50005 given the
        // leaky mean above. A sometimes-quoted 0.3440620259 violates that
        // identity by 2.1e-7 and is unreachable by any correct filter.
        ("leaky variance", leaky.var[0], 0.3440622402756334),
    ];
    let mut worst = 0.0f64;
    for (name, got, want) in checks {
        let diff = (got - want).abs();
        worst = worst.max(diff);
        if diff > 1e-9 {
            return Err(format!("{name} = {got:.12}, expected {want:.12}, |diff| = {diff:.2e}"));
        }
    }
    let identity = (leaky.mean[0] * leaky.mean[0] + leaky.var[0] - 0.50005).abs();
    if identity > 1e-12 {
        return Err(format!("moment identity violated by {identity:.2e}"));
    }
    Ok(format!(
        "all four fixtures within 1e-9 (worst |diff| {worst:.1e}); leaky variance checked \
         against the moment-identity value 0.3440622402756334 (mean^2 + var = 0.50005 holds \
         to {identity:.1e}; the commonly quoted 0.3440620259 breaks that identity by 2.1e-7)"
    ))
}

// ---------------------------------------------------------------------------
// 3. Loss gradients vs finite differences; relu-mean derivative identity.
// ---------------------------------------------------------------------------

fn c3_gradient_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for i in 0..50 {
        // Draw a network and test point where the finite-difference oracle
        // itself is well-posed: a predictive variance collapsed near its
        // floor makes the loss 1/beta^2-stiff (truncation error ~ h^2 /
        // beta^2 swamps the comparison) and puts the floor's max() kink
        // within step reach, and a residual at the |y - mean| kink is
        // likewise non-differentiable. Redraw in those regimes — the
        // gradient is checked, FD validity is the precondition.
        let k = if i % 2 == 0 { 0.5 } else { 1.0 };
        let (cfg, params, x, y) = {
            let mut attempt = 0u64;
            loop {
                let d = rng.gen_range(1..=5usize);
                let layers = rng.gen_range(1..=2usize);
                let hidden: Vec<usize> = (0..layers).map(|_| rng.gen_range(1..=6)).collect();
                let cfg = NetworkConfig {
                    input_dim: d,
                    hidden,
                    leaky_slope: 0.01,
                    dropout_rate: 0.0,
                    input_prior: 0.01,
                    loss_exponent: k,
                    penalty_weight: 0.0,
                    seed: 1000 + i + 101 * attempt,
                };
                let params = init_params(&cfg).map_err(|e| e.to_string())?;
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: f64 = rng.gen_range(-1.0..1.0);
                let input = GaussianTensor::with_uniform_var(x.clone(), cfg.input_prior)
                    .map_err(|e| e.to_string())?;
                let pred = forward_eval(&params, &cfg, &input).map_err(|e| e.to_string())?;
                if pred.variance >= 1e-4 && (y - pred.mean).abs() >= 1e-3 {
                    break (cfg, params, x, y);
                }
                attempt += 1;
                if attempt > 200 {
                    return Err("could not draw a well-posed network".into());
                }
            }
        };
        let mut params = params;
        let var = vec![cfg.input_prior; cfg.input_dim];

        let mut tape = lpn_core::Tape::new();
        let model = build_tape(&mut tape, &params, &cfg, &x, &var, None).map_err(|e| e.to_string())?;
        let loss = nll_node(&mut tape, model.mean, model.variance, y, k);
        let grads = tape.gradient(loss, &model.params).map_err(|e| e.to_string())?;

        // Fourth-order central stencil at step 1e-4: the plain two-point
        // form carries h^2-truncation through stiff Phi(mu/sqrt(nu))
        // chains (hidden units with tiny propagated variance) that can
        // reach the comparison limit on its own.
        let h = 1e-4;
        let input =
            GaussianTensor::with_uniform_var(x.clone(), cfg.input_prior).map_err(|e| e.to_string())?;
        // Indexed on purpose: each iteration perturbs parameter `idx` in place
        // and compares against `grads[idx]`.
        #[allow(clippy::needless_range_loop)]
        for idx in 0..params.len() {
            let orig = params.as_slice()[idx];
            let value_at = |p: f64, params: &mut Parameters| -> Result<f64, String> {
                params.as_mut_slice()[idx] = p;
                Ok(nll_loss(y, &forward_eval(params, &cfg, &input).map_err(|e| e.to_string())?, k))
            };
            let f_p1 = value_at(orig + h, &mut params)?;
            let f_p2 = value_at(orig + 2.0 * h, &mut params)?;
            let f_m1 = value_at(orig - h, &mut params)?;
            let f_m2 = value_at(orig - 2.0 * h, &mut params)?;
            params.as_mut_slice()[idx] = orig;
            let fd = (-f_p2 + 8.0 * f_p1 - 8.0 * f_m1 + f_m2) / (12.0 * h);
            if fd.abs() > 1e-6 {
                max_rel = max_rel.max((grads[idx] - fd).abs() / fd.abs());
                checked += 1;
            }
        }
    }
    if checked < 500 {
        return Err(format!("only {checked} parameter gradients were checkable"));
    }
    if max_rel >= 1e-4 {
        return Err(format!(
            "max relative gradient error {max_rel:.2e} over {checked} parameters (limit 1e-4)"
        ));
    }

    // Derivative identity of the relu-filter mean with respect to the
    // input mean, through the real second-order graph: an identity-weight
    // network reduces the model mean to the relu filter of the input.
    let cfg = NetworkConfig {
        input_dim: 1,
        hidden: vec![1],
        leaky_slope: 0.0,
        dropout_rate: 0.0,
        input_prior: 0.01,
        loss_exponent: 0.5,
        penalty_weight: 0.0,
        seed: 0,
    };
    let params = Parameters::from_flat(&cfg, vec![1.0, 0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
    let mut max_id = 0.0f64;
    for a in 0..10 {
        for b in 0..10 {
            let mu = -3.0 + 6.0 * (a as f64) / 9.0;
            let nu = 0.1 * (40.0f64).powf((b as f64) / 9.0); // 0.1 .. 4.0
            let mut tape = lpn_core::Tape::new();
            let model =
                build_tape(&mut tape, &params, &cfg, &[mu], &[nu], None).map_err(|e| e.to_string())?;
            let g = tape
                .gradient(model.mean, &[model.input_mean[0]])
                .map_err(|e| e.to_string())?[0];
            let expected = std_normal_cdf(mu / nu.sqrt());
            max_id = max_id.max((g - expected).abs());
        }
    }
    if max_id > 1e-8 {
        return Err(format!("relu-mean derivative identity off by {max_id:.2e} (limit 1e-8)"));
    }
    Ok(format!(
        "max relative loss-gradient error {max_rel:.2e} over {checked} parameters across 50 \
         random networks (fourth-order central differences, step 1e-4, limit 1e-4); relu-mean \
         derivative matches the normal CDF within {max_id:.1e} on a 100-point grid (limit 1e-8)"
    ))
}

// ---------------------------------------------------------------------------
// 4. Entropy-penalty parameter gradient (second-order) vs finite differences.
// ---------------------------------------------------------------------------

fn c4_second_order_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for i in 0..20 {
        let d = rng.gen_range(2..=5usize);
        let layers = rng.gen_range(1..=2usize);
        let hidden: Vec<usize> = (0..layers).map(|_| rng.gen_range(2..=6)).collect();
        let cfg = NetworkConfig {
            input_dim: d,
            hidden,
            leaky_slope: 0.01,
            dropout_rate: 0.0,
            input_prior: 0.01,
            loss_exponent: 0.5,
            penalty_weight: 1e-3,
            seed: 2000 + i,
        };
        let mut params = init_params(&cfg).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..d)
            .map(|_| rng.gen_range(0.3..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let var = vec![cfg.input_prior; d];

        let mut tape = lpn_core::Tape::new();
        let model = build_tape(&mut tape, &params, &cfg, &x, &var, None).map_err(|e| e.to_string())?;
        let penalty = entropy_penalty_node(&mut tape, &model).map_err(|e| e.to_string())?;
        let grads =
            tape.gradient_of_gradient(penalty, &model.params).map_err(|e| e.to_string())?;

        let h = 1e-4;
        // Indexed on purpose: each iteration perturbs parameter `idx` in place
        // and compares against `grads[idx]`.
        #[allow(clippy::needless_range_loop)]
        for idx in 0..params.len() {
            if grads[idx].abs() < 1e-6 {
                continue;
            }
            let orig = params.as_slice()[idx];
            params.as_mut_slice()[idx] = orig + h;
            let up = entropy_penalty(&relevance_lpn(&params, &cfg, &x).map_err(|e| e.to_string())?);
            params.as_mut_slice()[idx] = orig - h;
            let down =
                entropy_penalty(&relevance_lpn(&params, &cfg, &x).map_err(|e| e.to_string())?);
            params.as_mut_slice()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            if fd.abs() > 1e-6 {
                max_rel = max_rel.max((grads[idx] - fd).abs() / fd.abs());
                checked += 1;
            }
        }
    }
    let detail = format!(
        "max relative second-order gradient error {max_rel:.2e} over {checked} parameters \
         across 20 random networks (limit 1e-3)"
    );
    if checked >= 100 && max_rel < 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 5. Calibration oracle on closed-form linear models.
// ---------------------------------------------------------------------------

fn c5_calibration_oracle() -> Result<String, String> {
    let started = Instant::now();
    let gap_cfg = GapConfig::default();
    let base = NetworkConfig {
        input_dim: 1,
        hidden: vec![],
        leaky_slope: 0.01,
        dropout_rate: 0.0,
        input_prior: 0.01,
        loss_exponent: 0.5,
        penalty_weight: 0.0,
        seed: 0,
    };
    let delta = base.input_prior;

    // Single live feature: beta scales linearly in sigma^2, so the final
    // calibrated sigma at factor 2 is exactly 2*delta and the achieved
    // beta is 2*beta* = 2*9*delta.
    let p1 = Parameters::from_flat(&base, vec![3.0, 0.0]).map_err(|e| e.to_string())?;
    let cal = lpn_core::gap::calibrate_sigma(&p1, &base, &[0.7], 2.0, &gap_cfg, None)
        .map_err(|e| e.to_string())?;
    let sigma_rel = (cal.sigma[0] / (2.0 * delta) - 1.0).abs();
    let beta_rel = (cal.achieved_beta / (2.0 * 9.0 * delta) - 1.0).abs();

    // Dead second feature: zero gradient everywhere, so its variance must
    // stay at delta bit-for-bit, and its gap score must fall below the
    // live feature's.
    let two = NetworkConfig { input_dim: 2, ..base.clone() };
    let p2 = Parameters::from_flat(&two, vec![3.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    let cal2 = lpn_core::gap::calibrate_sigma(&p2, &two, &[0.7, -0.2], 2.0, &gap_cfg, None)
        .map_err(|e| e.to_string())?;
    let dead_exact = cal2.sigma[1] == delta;
    let profile = gap_scores(&p2, &two, &[0.7, -0.2], &gap_cfg).map_err(|e| e.to_string())?;
    let gap_ordered = profile.gap[0] > profile.gap[1];

    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "sigma within {sigma_rel:.4} of 2*delta (limit 0.05), achieved beta within \
         {beta_rel:.4} of 2*beta* (limit 0.01), dead-feature sigma exactly delta: {dead_exact}, \
         gap(x1) {:.3e} > gap(x2) {:.3e}: {gap_ordered}, {secs:.2}s (limit 10)",
        profile.gap[0], profile.gap[1]
    );
    if sigma_rel < 0.05 && beta_rel < 0.01 && dead_exact && gap_ordered && secs < 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 6–8. Dataset reproductions via the CLI command layer.
// ---------------------------------------------------------------------------

fn dataset_config(dataset: &str, dir: &Path, phase1: usize, phase2: usize) -> FileConfig {
    FileConfig {
        network: NetworkSection::default(),
        train: TrainSection {
            phase1_epochs: phase1,
            phase2_epochs: phase2,
            seed: 42,
            ..TrainSection::default()
        },
        data: DataSection {
            dataset: dataset.to_string(),
            dir: dir.display().to_string(),
            ..DataSection::default()
        },
        gap: Default::default(),
    }
}

fn read_payload<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, String), String> {
    let report = read_report(path).map_err(|e| e.to_string())?;
    let payload = serde_json::from_value(report.result).map_err(|e| e.to_string())?;
    let source = report.meta.source.clone();
    Ok((payload, source))
}

fn c6_parkinsons_cv(data_dir: &Path, out: &Path) -> Result<String, String> {
    let started = Instant::now();
    let cfg = dataset_config("parkinsons", data_dir, 40, 2);
    commands::cmd_prep(&cfg, out).map_err(|e| e.to_string())?;
    commands::cmd_train(&cfg, out, false, true).map_err(|e| e.to_string())?;
    commands::cmd_train(&cfg, out, true, true).map_err(|e| e.to_string())?;
    let (lpn, source): (CvPayload, String) = read_payload(&out.join("cv_parkinsons_lpn.json"))?;
    let (dnn, _): (CvPayload, String) = read_payload(&out.join("cv_parkinsons_dnn.json"))?;
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "5-fold CV mean validation R² {:.4} (probabilistic + penalty) vs {:.4} (deterministic \
         baseline); thresholds: >= 0.10 and >= baseline - 0.05; {secs:.0}s (limit 900); \
         data source {source}",
        lpn.val_r2_mean, dnn.val_r2_mean
    );
    if lpn.val_r2_mean >= 0.10 && lpn.val_r2_mean >= dnn.val_r2_mean - 0.05 && secs < 900.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c7_energy_random_features(data_dir: &Path, out: &Path) -> Result<String, String> {
    let cfg = dataset_config("energy", data_dir, 30, 1);
    commands::cmd_prep(&cfg, out).map_err(|e| e.to_string())?;
    commands::cmd_train(&cfg, out, false, false).map_err(|e| e.to_string())?;
    commands::cmd_relevance(&cfg, out, &out.join("energy_lpn_params.json"), MethodFlag::Lpn)
        .map_err(|e| e.to_string())?;
    let (ranking, source): (RankingPayload, String) =
        read_payload(&out.join("relevance_energy_lpn.json"))?;
    let d = ranking.feature_names.len();
    let cutoff = 0.75 * d as f64;
    let mut positions = Vec::new();
    for name in ["rv1", "rv2"] {
        let entry = ranking
            .ranking
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| format!("feature {name} missing from ranking"))?;
        positions.push((name, entry.rank));
    }
    let ok = positions.iter().all(|&(_, rank)| rank as f64 > cutoff);
    let detail = format!(
        "averaged relevance ranking over {} validation samples: rv1 at rank {}, rv2 at rank {} \
         of {d} (bottom quarter starts after rank {cutoff:.2}); data source {source}",
        ranking.samples_used, positions[0].1, positions[1].1
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c8_masking_order(data_dir: &Path, out: &Path) -> Result<String, String> {
    // Energy: reuse the criterion-7 model and ranking.
    let cfg_e = dataset_config("energy", data_dir, 30, 1);
    let params_e = out.join("energy_lpn_params.json");
    let ranking_e = out.join("relevance_energy_lpn.json");
    for order in [SweepOrder::Ascending, SweepOrder::Descending] {
        commands::cmd_mask_sweep(&cfg_e, out, &params_e, &ranking_e, order)
            .map_err(|e| e.to_string())?;
    }
    let (e_asc, e_source): (MaskSweepPayload, String) =
        read_payload(&out.join("mask_sweep_energy_lpn_ascending.json"))?;
    let (e_desc, _): (MaskSweepPayload, String) =
        read_payload(&out.join("mask_sweep_energy_lpn_descending.json"))?;

    // Parkinsons: train a single split, rank, and sweep both directions.
    let cfg_p = dataset_config("parkinsons", data_dir, 40, 2);
    commands::cmd_train(&cfg_p, out, false, false).map_err(|e| e.to_string())?;
    let params_p = out.join("parkinsons_lpn_params.json");
    commands::cmd_relevance(&cfg_p, out, &params_p, MethodFlag::Lpn).map_err(|e| e.to_string())?;
    let ranking_p = out.join("relevance_parkinsons_lpn.json");
    for order in [SweepOrder::Ascending, SweepOrder::Descending] {
        commands::cmd_mask_sweep(&cfg_p, out, &params_p, &ranking_p, order)
            .map_err(|e| e.to_string())?;
    }
    let (p_asc, p_source): (MaskSweepPayload, String) =
        read_payload(&out.join("mask_sweep_parkinsons_lpn_ascending.json"))?;
    let (p_desc, _): (MaskSweepPayload, String) =
        read_payload(&out.join("mask_sweep_parkinsons_lpn_descending.json"))?;

    let detail = format!(
        "AUC of the R²-versus-masked-count curve, least-relevant-first vs most-relevant-first: \
         parkinsons {:.3} > {:.3} ({p_source}); energy {:.3} > {:.3} ({e_source})",
        p_asc.auc, p_desc.auc, e_asc.auc, e_desc.auc
    );
    if p_asc.auc > p_desc.auc && e_asc.auc > e_desc.auc {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 9. Determinism of train and gap through the binary.
// ---------------------------------------------------------------------------

fn run_binary(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lpn"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "lpn {args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn c9_determinism(root: &Path) -> Result<String, String> {
    let cfg_path = root.join("det.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "[network]\nhidden = [16, 8]\ndropout_rate = 0.1\n\n\
             [train]\nphase1_epochs = 3\nphase2_epochs = 1\nbatch_size = 32\nseed = 7\n\n\
             [data]\ndataset = \"linear-2d-dead-feature\"\ndir = \"{}\"\n",
            root.join("det-data").display()
        ),
    )
    .map_err(|e| e.to_string())?;
    let cfg = cfg_path.to_str().unwrap();

    let mut canon: Vec<(String, String)> = Vec::new();
    for run in ["det-a", "det-b"] {
        let out_dir = root.join(run);
        let out_s = out_dir.to_str().unwrap();
        run_binary(&["--config", cfg, "--out", out_s, "train"])?;
        let params = out_dir.join("linear-2d-dead-feature_lpn_params.json");
        run_binary(&[
            "--config", cfg, "--out", out_s,
            "gap", "--params", params.to_str().unwrap(), "--samples", "0,1",
        ])?;
        let train = read_report(&out_dir.join("train_linear-2d-dead-feature_lpn.json"))
            .map_err(|e| e.to_string())?;
        let gap = read_report(&out_dir.join("gap_linear-2d-dead-feature.json"))
            .map_err(|e| e.to_string())?;
        canon.push((canonical_json(&train.result), canonical_json(&gap.result)));
    }
    let trains_equal = canon[0].0 == canon[1].0;
    let gaps_equal = canon[0].1 == canon[1].1;
    let detail = format!(
        "independent binary runs with a fixed seed: train payloads identical: {trains_equal}, \
         gap payloads identical: {gaps_equal} (canonicalized JSON, {} and {} bytes)",
        canon[0].0.len(),
        canon[0].1.len()
    );
    if trains_equal && gaps_equal {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 10. Self-check: clean pass and three detected fault injections.
// ---------------------------------------------------------------------------

fn c10_selfcheck(root: &Path) -> Result<String, String> {
    let out_dir = root.join("selfcheck-out");
    let out_s = out_dir.to_str().unwrap();
    let clean = Command::new(env!("CARGO_BIN_EXE_lpn"))
        .args(["--out", out_s, "selfcheck"])
        .output()
        .map_err(|e| e.to_string())?;
    if !clean.status.success() {
        return Err(format!(
            "clean selfcheck exited nonzero:\n{}",
            String::from_utf8_lossy(&clean.stderr)
        ));
    }
    let mut caught = Vec::new();
    for (fault, check) in [
        ("relu-variance", "mc-leaky-relu-variance"),
        ("dense-variance", "mc-dense-variance"),
        ("loss-gradient", "loss-gradient-variance"),
    ] {
        let hurt = Command::new(env!("CARGO_BIN_EXE_lpn"))
            .args(["--out", out_s, "selfcheck", "--inject", fault])
            .output()
            .map_err(|e| e.to_string())?;
        let stderr = String::from_utf8_lossy(&hurt.stderr).to_string();
        if hurt.status.success() {
            return Err(format!("injected fault {fault} was not detected (exit 0)"));
        }
        if !stderr.contains(check) {
            return Err(format!(
                "injected fault {fault}: failure report does not name {check}:\n{stderr}"
            ));
        }
        caught.push(fault);
    }
    Ok(format!(
        "clean run exits 0; injected faults {} each exit nonzero naming the failed check",
        caught.join(", ")
    ))
}

fn main() {
    let started = Instant::now();
    let root = tempfile::tempdir().expect("tempdir");
    let data_dir: PathBuf = root.path().join("data");
    let out: PathBuf = root.path().join("out");
    std::fs::create_dir_all(&out).expect("out dir");

    let mut suite = Suite { failures: Vec::new() };
    suite.criterion(1, "adf-monte-carlo-oracle", c1_adf_mc_oracle);
    suite.criterion(2, "closed-form-fixtures", c2_fixtures);
    suite.criterion(3, "gradient-suite", c3_gradient_suite);
    suite.criterion(4, "second-order-suite", c4_second_order_suite);
    suite.criterion(5, "calibration-oracle", c5_calibration_oracle);
    suite.criterion(6, "parkinsons-cross-validation", || c6_parkinsons_cv(&data_dir, &out));
    suite.criterion(7, "energy-random-feature-rejection", || {
        c7_energy_random_features(&data_dir, &out)
    });
    suite.criterion(8, "masking-order-property", || c8_masking_order(&data_dir, &out));
    suite.criterion(9, "determinism", || c9_determinism(root.path()));
    suite.criterion(10, "selfcheck-fault-injection", || c10_selfcheck(root.path()));

    let total = started.elapsed().as_secs_f64();
    if suite.failures.is_empty() {
        println!("acceptance: all 10 criteria passed ({total:.0}s total)");
    } else {
        println!(
            "acceptance: {} criteria FAILED: {} ({total:.0}s total)",
            suite.failures.len(),
            suite.failures.join("; ")
        );
        std::process::exit(1);
    }
}
