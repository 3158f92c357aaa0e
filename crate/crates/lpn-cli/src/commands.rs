//! Implementations of the CLI verbs: prep, train, evaluate, relevance,
//! mask-sweep, and gap.
//!
//! Every command resolves the configuration the same way (file → CLI
//! overrides), stamps its report with the configuration hash, and writes
//! outputs atomically. Commands that consume a parameters file refuse to
//! run when the active configuration hash differs from the one the
//! parameters were trained under — silently mixing splits or
//! standardizations would produce plausible-looking nonsense.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use lpn_core::data::{split, standardize, Dataset, Standardization};
use lpn_core::gap::{gap_scores, trapezoid_auc, GapProfile};
use lpn_core::model::Parameters;
use lpn_core::objective::relevance_mean;
use lpn_core::train::{
    evaluate, evaluate_deterministic, fold_indices, train, train_deterministic, EvalMetrics,
    TrainConfig, TrainReport,
};
use lpn_core::RelevanceMethod;

use crate::config::FileConfig;
use crate::error::CliError;
use crate::io::{self, LoadStats, ParamsFile, PARAMS_FORMAT_VERSION};
use crate::report::{read_report, Meta, Report};
use crate::svg;

/// Relevance method selector exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodFlag {
    /// Probabilistic relevance from both predictive channels.
    Lpn,
    /// Squared gradient of the deterministic output.
    Gs,
    /// Input-scaled squared gradient (first-order Taylor term).
    Std,
}

impl MethodFlag {
    pub fn to_core(self) -> RelevanceMethod {
        match self {
            MethodFlag::Lpn => RelevanceMethod::Lpn,
            MethodFlag::Gs => RelevanceMethod::GradientSquared,
            MethodFlag::Std => RelevanceMethod::TaylorDecomposition,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            MethodFlag::Lpn => "lpn",
            MethodFlag::Gs => "gs",
            MethodFlag::Std => "std",
        }
    }
}

/// Masking order for the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepOrder {
    /// Least relevant feature first (the published protocol).
    Ascending,
    /// Most relevant feature first (control curve).
    Descending,
}

impl SweepOrder {
    pub fn tag(self) -> &'static str {
        match self {
            SweepOrder::Ascending => "ascending",
            SweepOrder::Descending => "descending",
        }
    }
}

/// Raw dataset plus its deterministic train/validation split.
struct SplitData {
    load: LoadStats,
    train_raw: Dataset,
    val_raw: Dataset,
}

fn load_and_split(cfg: &FileConfig) -> Result<SplitData, CliError> {
    let schema = cfg.dataset_schema()?;
    let (ds, load) = io::load_dataset(&cfg.data, &schema)?;
    let (train_raw, val_raw) = split(&ds, cfg.data.split_fraction, cfg.data.split_seed)?;
    Ok(SplitData { load, train_raw, val_raw })
}

/// Standardizes a raw dataset with previously fitted statistics, returning
/// plain feature/target vectors.
fn apply_stats(
    ds: &Dataset,
    stats: &Standardization,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), CliError> {
    let std = standardize(ds, stats)?;
    Ok((std.features, std.targets))
}

fn require_hash_match(cfg: &FileConfig, params: &ParamsFile) -> Result<(), CliError> {
    let active = cfg.config_hash();
    if active != params.config_hash {
        return Err(CliError::Check(format!(
            "configuration hash mismatch: parameters were trained under {}, the active \
             configuration resolves to {active}; re-run training or point --config at the \
             original file",
            params.config_hash
        )));
    }
    Ok(())
}

fn params_from_file(file: &ParamsFile) -> Result<Parameters, CliError> {
    Parameters::from_flat(&file.network, file.values.clone()).map_err(CliError::from)
}

/// Validation-split R² for either model kind.
fn val_r2(
    file: &ParamsFile,
    params: &Parameters,
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<f64, CliError> {
    let metrics = match file.model_kind.as_str() {
        "deterministic" => evaluate_deterministic(params, &file.network, xs, ys)?,
        _ => evaluate(params, &file.network, xs, ys)?,
    };
    metrics
        .r_squared
        .ok_or_else(|| CliError::Check("validation targets are degenerate; R² undefined".into()))
}

// ---------------------------------------------------------------------------
// prep

#[derive(Debug, Serialize, Deserialize)]
pub struct PrepPayload {
    pub dataset: String,
    pub action: String,
    pub path: String,
    pub rows: usize,
    pub source: String,
}

/// Makes sure the active dataset's file exists, generating a clearly
/// labelled surrogate when the genuine file is absent. Synthetic datasets
/// need no files and report as such.
pub fn cmd_prep(cfg: &FileConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let name = cfg.data.dataset.clone();
    let schema = cfg.dataset_schema()?;

    let payload = if let Some(file) = &schema.file {
        let path = Path::new(&cfg.data.dir).join(file);
        if path.exists() {
            let (ds, load) = io::load_csv(&path, &schema)?;
            let source = io::sourced_label(&path, &load.source);
            println!("prep[{name}]: {} already present ({} rows) — left untouched", path.display(), ds.len());
            PrepPayload {
                dataset: name.clone(),
                action: "kept".into(),
                path: path.display().to_string(),
                rows: ds.len(),
                source,
            }
        } else {
            let (csv, rows) = match name.as_str() {
                "parkinsons" => {
                    (crate::surrogate::parkinsons_csv(schema.synthetic_seed), crate::surrogate::PARKINSONS_ROWS)
                }
                "energy" => {
                    (crate::surrogate::energy_csv(schema.synthetic_seed), crate::surrogate::ENERGY_ROWS)
                }
                other => {
                    return Err(CliError::Data(format!(
                        "dataset {other:?} expects file {} and no surrogate generator exists \
                         for it; place the file in {}",
                        file, cfg.data.dir
                    )))
                }
            };
            io::atomic_write(&path, csv.as_bytes())?;
            let note = format!("surrogate seed={}", schema.synthetic_seed);
            io::atomic_write(&io::sidecar_path(&path), note.as_bytes())?;
            println!(
                "prep[{name}]: genuine file absent — wrote surrogate {} ({rows} rows, {note})",
                path.display()
            );
            PrepPayload {
                dataset: name.clone(),
                action: "generated-surrogate".into(),
                path: path.display().to_string(),
                rows,
                source: format!("file:{file} [{note}]"),
            }
        }
    } else {
        println!("prep[{name}]: synthetic generator, no file needed");
        PrepPayload {
            dataset: name.clone(),
            action: "none-needed".into(),
            path: String::new(),
            rows: 0,
            source: "synthetic".into(),
        }
    };

    let mut meta = Meta::new("prep", &cfg.config_hash(), &name, &payload.source, cfg.train.seed);
    let report_path = out_dir.join(format!("prep_{name}.json"));
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    meta.outputs = vec![file_name(&report_path)];
    Report::new(meta, &payload)?.write(&report_path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Serialize, Deserialize)]
pub struct RowCounts {
    pub total: usize,
    pub rejected: usize,
    pub train: usize,
    pub val: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainPayload {
    pub dataset: String,
    pub model_kind: String,
    pub config_hash: String,
    pub rows: RowCounts,
    pub features_kept: Vec<String>,
    pub features_dropped: Vec<String>,
    pub report: TrainReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_rows: usize,
    pub val_rows: usize,
    pub final_train: EvalMetrics,
    pub final_val: EvalMetrics,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CvPayload {
    pub dataset: String,
    pub model_kind: String,
    pub config_hash: String,
    pub folds: Vec<FoldSummary>,
    pub val_r2_mean: f64,
    pub val_r2_std: f64,
}

fn model_tag(deterministic: bool) -> &'static str {
    if deterministic {
        "dnn"
    } else {
        "lpn"
    }
}

/// Trains on the deterministic split (or runs k-fold cross-validation with
/// `cv`), writing a report and — in single-split mode — a parameters file.
pub fn cmd_train(
    cfg: &FileConfig,
    out_dir: &Path,
    deterministic: bool,
    cv: bool,
) -> Result<(), CliError> {
    if cv {
        cmd_train_cv(cfg, out_dir, deterministic)
    } else {
        cmd_train_split(cfg, out_dir, deterministic)
    }
}

fn cmd_train_split(cfg: &FileConfig, out_dir: &Path, deterministic: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let name = cfg.data.dataset.clone();
    let kind = model_tag(deterministic);
    let data = load_and_split(cfg)?;
    let stats = Standardization::fit(&data.train_raw)?;
    let (train_x, train_y) = apply_stats(&data.train_raw, &stats)?;
    let (val_x, val_y) = apply_stats(&data.val_raw, &stats)?;
    let net = cfg.network.to_core(stats.kept.len());
    let tcfg = cfg.train.to_core();

    println!(
        "train[{kind}/{name}]: {} train rows, {} val rows, {} features (source {})",
        train_x.len(),
        val_x.len(),
        stats.kept.len(),
        data.load.source
    );
    if !stats.dropped.is_empty() {
        println!("train[{kind}/{name}]: dropped constant features {:?}", stats.dropped);
    }

    let (params, report) = if deterministic {
        train_deterministic(&net, &tcfg, &train_x, &train_y, Some((&val_x, &val_y)))?
    } else {
        train(&net, &tcfg, &train_x, &train_y, Some((&val_x, &val_y)))?
    };

    let params_path = out_dir.join(format!("{name}_{kind}_params.json"));
    io::save_params(
        &params_path,
        &ParamsFile {
            format_version: PARAMS_FORMAT_VERSION,
            model_kind: if deterministic { "deterministic" } else { "probabilistic" }.into(),
            config_hash: cfg.config_hash(),
            dataset: name.clone(),
            train_seed: tcfg.seed,
            network: net,
            standardization: stats.clone(),
            values: params.as_slice().to_vec(),
        },
    )?;

    if let Some(final_val) = &report.final_val {
        println!(
            "train[{kind}/{name}]: final val loss {:.6}, RMSE {:.6}, R² {}",
            final_val.loss,
            final_val.rmse,
            final_val.r_squared.map(|r| format!("{r:.6}")).unwrap_or_else(|| "n/a".into())
        );
    }

    let payload = TrainPayload {
        dataset: name.clone(),
        model_kind: if deterministic { "deterministic" } else { "probabilistic" }.into(),
        config_hash: cfg.config_hash(),
        rows: RowCounts {
            total: data.load.rows_total,
            rejected: data.load.rows_rejected,
            train: train_x.len(),
            val: val_x.len(),
        },
        features_kept: stats.names.clone(),
        features_dropped: stats.dropped.clone(),
        report,
    };
    let report_path = out_dir.join(format!("train_{name}_{kind}.json"));
    let mut meta = Meta::new("train", &cfg.config_hash(), &name, &data.load.source, tcfg.seed);
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    meta.outputs = vec![file_name(&report_path), file_name(&params_path)];
    Report::new(meta, &payload)?.write(&report_path)?;
    println!(
        "train[{kind}/{name}]: wrote {} and {}",
        report_path.display(),
        params_path.display()
    );
    Ok(())
}

fn cmd_train_cv(cfg: &FileConfig, out_dir: &Path, deterministic: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let name = cfg.data.dataset.clone();
    let kind = model_tag(deterministic);
    let schema = cfg.dataset_schema()?;
    let (ds, load) = io::load_dataset(&cfg.data, &schema)?;
    let tcfg = cfg.train.to_core();
    if tcfg.folds < 2 || tcfg.folds > ds.len() {
        return Err(CliError::Config(format!(
            "fold count {} invalid for {} rows",
            tcfg.folds,
            ds.len()
        )));
    }

    println!(
        "cv[{kind}/{name}]: {} rows, {} folds (source {})",
        ds.len(),
        tcfg.folds,
        load.source
    );

    // Fold-wise standardization: statistics are fitted on each fold's
    // training rows only, so no validation information leaks into them.
    let assignment = fold_indices(ds.len(), tcfg.folds, tcfg.seed);
    let mut folds = Vec::with_capacity(tcfg.folds);
    let mut r2s = Vec::with_capacity(tcfg.folds);
    for (f, val_idx) in assignment.iter().enumerate() {
        let mut in_val = vec![false; ds.len()];
        for &i in val_idx {
            in_val[i] = true;
        }
        let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| !in_val[i]).collect();
        let train_raw = ds.select(&train_idx);
        let val_raw = ds.select(val_idx);
        let stats = Standardization::fit(&train_raw)?;
        let (train_x, train_y) = apply_stats(&train_raw, &stats)?;
        let (val_x, val_y) = apply_stats(&val_raw, &stats)?;
        let net = cfg.network.to_core(stats.kept.len());
        let fold_tcfg = TrainConfig { seed: tcfg.seed.wrapping_add(f as u64 + 1), ..tcfg.clone() };
        let (_, report) = if deterministic {
            train_deterministic(&net, &fold_tcfg, &train_x, &train_y, Some((&val_x, &val_y)))?
        } else {
            train(&net, &fold_tcfg, &train_x, &train_y, Some((&val_x, &val_y)))?
        };
        let final_val = report
            .final_val
            .clone()
            .ok_or_else(|| CliError::Check("fold finished without validation metrics".into()))?;
        let r2 = final_val
            .r_squared
            .ok_or_else(|| CliError::Check("fold validation targets degenerate".into()))?;
        println!(
            "cv[{kind}/{name}]: fold {f}: {} train / {} val rows, val R² {r2:.6}",
            train_x.len(),
            val_x.len()
        );
        r2s.push(r2);
        folds.push(FoldSummary {
            fold: f,
            train_rows: train_x.len(),
            val_rows: val_x.len(),
            final_train: report.final_train.clone(),
            final_val,
        });
    }
    let mean = r2s.iter().sum::<f64>() / r2s.len() as f64;
    let var = r2s.iter().map(|&r| (r - mean) * (r - mean)).sum::<f64>() / r2s.len() as f64;
    let sd = var.sqrt();
    println!("cv[{kind}/{name}]: val R² {mean:.6} ± {sd:.6} over {} folds", r2s.len());

    let payload = CvPayload {
        dataset: name.clone(),
        model_kind: if deterministic { "deterministic" } else { "probabilistic" }.into(),
        config_hash: cfg.config_hash(),
        folds,
        val_r2_mean: mean,
        val_r2_std: sd,
    };
    let report_path = out_dir.join(format!("cv_{name}_{kind}.json"));
    let mut meta = Meta::new("train --cv", &cfg.config_hash(), &name, &load.source, tcfg.seed);
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    meta.outputs = vec![file_name(&report_path)];
    Report::new(meta, &payload)?.write(&report_path)?;
    println!("cv[{kind}/{name}]: wrote {}", report_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluatePayload {
    pub dataset: String,
    pub model_kind: String,
    pub val_rows: usize,
    pub metrics: EvalMetrics,
}

/// Re-evaluates a trained model on the validation split of the active
/// configuration.
pub fn cmd_evaluate(cfg: &FileConfig, out_dir: &Path, params_path: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let file = io::load_params(params_path)?;
    require_hash_match(cfg, &file)?;
    let params = params_from_file(&file)?;
    let data = load_and_split(cfg)?;
    let (val_x, val_y) = apply_stats(&data.val_raw, &file.standardization)?;
    let metrics = match file.model_kind.as_str() {
        "deterministic" => evaluate_deterministic(&params, &file.network, &val_x, &val_y)?,
        _ => evaluate(&params, &file.network, &val_x, &val_y)?,
    };
    println!(
        "evaluate[{}/{}]: val loss {:.6}, RMSE {:.6}, R² {}",
        file.model_kind,
        file.dataset,
        metrics.loss,
        metrics.rmse,
        metrics.r_squared.map(|r| format!("{r:.6}")).unwrap_or_else(|| "n/a".into())
    );
    let payload = EvaluatePayload {
        dataset: file.dataset.clone(),
        model_kind: file.model_kind.clone(),
        val_rows: val_x.len(),
        metrics,
    };
    let report_path = out_dir.join(format!("evaluate_{}.json", file.dataset));
    let mut meta =
        Meta::new("evaluate", &cfg.config_hash(), &file.dataset, &data.load.source, file.train_seed);
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    meta.outputs = vec![file_name(&report_path)];
    Report::new(meta, &payload)?.write(&report_path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// relevance

#[derive(Debug, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub index: usize,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankingPayload {
    pub dataset: String,
    pub model_kind: String,
    pub method: String,
    pub samples_used: usize,
    /// Scores in feature order (units: squared standardized-target units).
    pub feature_names: Vec<String>,
    pub scores: Vec<f64>,
    /// Features sorted by descending score; ties broken by feature index.
    pub ranking: Vec<RankEntry>,
}

/// Ranks input features by relevance averaged over the validation split,
/// writing a report and a bar chart.
pub fn cmd_relevance(
    cfg: &FileConfig,
    out_dir: &Path,
    params_path: &Path,
    method: MethodFlag,
) -> Result<(), CliError> {
    let started = Instant::now();
    let file = io::load_params(params_path)?;
    require_hash_match(cfg, &file)?;
    if method == MethodFlag::Lpn && file.model_kind == "deterministic" {
        return Err(CliError::Check(
            "the lpn relevance method needs a probabilistic model; this parameters file is \
             deterministic (use gs or std, or train without --deterministic)"
                .into(),
        ));
    }
    let params = params_from_file(&file)?;
    let data = load_and_split(cfg)?;
    let (val_x, _) = apply_stats(&data.val_raw, &file.standardization)?;

    let rv = relevance_mean(&params, &file.network, &val_x, method.to_core())?;
    let names = &file.standardization.names;
    let mut order: Vec<usize> = (0..rv.scores.len()).collect();
    order.sort_by(|&a, &b| {
        rv.scores[b].partial_cmp(&rv.scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let ranking: Vec<RankEntry> = order
        .iter()
        .enumerate()
        .map(|(r, &j)| RankEntry {
            rank: r + 1,
            index: j,
            name: names[j].clone(),
            score: rv.scores[j],
        })
        .collect();

    let top = ranking.iter().take(5).map(|e| e.name.as_str()).collect::<Vec<_>>().join(", ");
    println!(
        "relevance[{}/{}]: method {}, {} validation samples; top features: {top}",
        file.model_kind,
        file.dataset,
        method.tag(),
        val_x.len()
    );

    let payload = RankingPayload {
        dataset: file.dataset.clone(),
        model_kind: file.model_kind.clone(),
        method: method.tag().into(),
        samples_used: val_x.len(),
        feature_names: names.clone(),
        scores: rv.scores.clone(),
        ranking,
    };

    let chart_items: Vec<(String, f64)> =
        payload.ranking.iter().map(|e| (e.name.clone(), e.score)).collect();
    let chart = svg::bar_chart(
        &format!("Feature relevance ({}) — {}", method.tag(), file.dataset),
        "mean relevance over validation samples (squared standardized-target units)",
        &chart_items,
    );

    let report_path = out_dir.join(format!("relevance_{}_{}.json", file.dataset, method.tag()));
    let svg_path = out_dir.join(format!("relevance_{}_{}.svg", file.dataset, method.tag()));
    io::atomic_write(&svg_path, chart.as_bytes())?;
    let mut meta =
        Meta::new("relevance", &cfg.config_hash(), &file.dataset, &data.load.source, file.train_seed);
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    meta.outputs = vec![file_name(&report_path), file_name(&svg_path)];
    Report::new(meta, &payload)?.write(&report_path)?;
    println!(
        "relevance[{}/{}]: wrote {} and {}",
        file.model_kind,
        file.dataset,
        report_path.display(),
        svg_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// mask-sweep

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskSweepPayload {
    pub dataset: String,
    pub model_kind: String,
    pub method: String,
    pub order: String,
    /// Feature names in the order they were masked.
    pub masked_features: Vec<String>,
    /// Validation R² after masking the first `m` features, `m = 0..=d`.
    pub r2: Vec<f64>,
    /// Trapezoidal area under the curve with unit spacing in `m`.
    pub auc: f64,
}

/// Cumulatively masks features (with standardized train medians) in
/// ranking order, re-measuring validation R² at each step.
pub fn cmd_mask_sweep(
    cfg: &FileConfig,
    out_dir: &Path,
    params_path: &Path,
    ranking_path: &Path,
    order: SweepOrder,
) -> Result<(), CliError> {
    let started = Instant::now();
    let file = io::load_params(params_path)?;
    require_hash_match(cfg, &file)?;
    let ranking_report = read_report(ranking_path)?;
    if ranking_report.meta.config_hash != file.config_hash {
        return Err(CliError::Check(format!(
            "ranking report hash {} does not match parameters hash {}; regenerate the ranking \
             from these parameters",
            ranking_report.meta.config_hash, file.config_hash
        )));
    }
    let ranking: RankingPayload =
        serde_json::from_value(ranking_report.result.clone()).map_err(|source| CliError::Json {
            context: format!("{} is not a relevance report", ranking_path.display()),
            source,
        })?;
    let params = params_from_file(&file)?;
    let data = load_and_split(cfg)?;
    let (val_x, val_y) = apply_stats(&data.val_raw, &file.standardization)?;
    let d = file.network.input_dim;
    if ranking.ranking.len() != d {
        return Err(CliError::Check(format!(
            "ranking lists {} features but the model has {d}",
            ranking.ranking.len()
        )));
    }

    // The ranking is stored most-relevant-first; the published sweep masks
    // least relevant first (ascending).
    let mut mask_order: Vec<usize> = ranking.ranking.iter().map(|e| e.index).collect();
    if order == SweepOrder::Ascending {
        mask_order.reverse();
    }
    let medians = file.standardization.masking_values();

    let mut masked = val_x.clone();
    let mut r2 = Vec::with_capacity(d + 1);
    let mut masked_names = Vec::with_capacity(d);
    r2.push(val_r2(&file, &params, &masked, &val_y)?);
    for &j in &mask_order {
        for row in &mut masked {
            row[j] = medians[j];
        }
        masked_names.push(file.standardization.names[j].clone());
        r2.push(val_r2(&file, &params, &masked, &val_y)?);
    }
    let steps: Vec<f64> = (0..=d).map(|m| m as f64).collect();
    let auc = trapezoid_auc(&steps, &r2);
    println!(
        "mask-sweep[{}/{}]: {} order by {} ranking; R² {:.6} → {:.6}, AUC {auc:.6}",
        file.model_kind,
        file.dataset,
        order.tag(),
        ranking.method,
        r2[0],
        r2[d]
    );

    let payload = MaskSweepPayload {
        dataset: file.dataset.clone(),
        model_kind: file.model_kind.clone(),
        method: ranking.method.clone(),
        order: order.tag().into(),
        masked_features: masked_names.clone(),
        r2: r2.clone(),
        auc,
    };

    let series = vec![svg::Series {
        name: format!("R² ({} order)", order.tag()),
        points: steps.iter().zip(&r2).map(|(&m, &v)| (m, v)).collect(),
    }];
    let mut table_rows = Vec::with_capacity(d + 1);
    table_rows.push(vec!["0".to_string(), "-".to_string(), format!("{:.6}", r2[0])]);
    for (m, name) in masked_names.iter().enumerate() {
        table_rows.push(vec![(m + 1).to_string(), name.clone(), format!("{:.6}", r2[m + 1])]);
    }
    let chart = svg::line_plot(
        &format!("Masking sweep ({} relevance, {} order) — {}", ranking.method, order.tag(), file.dataset),
        "features masked",
        "validation R²",
        &series,
        Some((&["m", "masked feature", "R²"], &table_rows)),
    );

    let base = format!("mask_sweep_{}_{}_{}", file.dataset, ranking.method, order.tag());
    let report_path = out_dir.join(format!("{base}.json"));
    let svg_path = out_dir.join(format!("{base}.svg"));
    io::atomic_write(&svg_path, chart.as_bytes())?;
    let mut meta =
        Meta::new("mask-sweep", &cfg.config_hash(), &file.dataset, &data.load.source, file.train_seed);
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    meta.outputs = vec![file_name(&report_path), file_name(&svg_path)];
    Report::new(meta, &payload)?.write(&report_path)?;
    println!("mask-sweep[{}/{}]: wrote {}", file.model_kind, file.dataset, report_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gap

#[derive(Debug, Serialize, Deserialize)]
pub struct GapSamplePayload {
    pub sample_id: usize,
    pub feature_names: Vec<String>,
    /// Per-feature uncertainty-gap scores.
    pub gap: Vec<f64>,
    pub profile: GapProfile,
    pub all_converged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GapPayload {
    pub dataset: String,
    pub factors: Vec<f64>,
    pub samples: Vec<GapSamplePayload>,
}

/// Explains prediction uncertainty for chosen validation samples by
/// calibrating per-feature input variances against inflated predictive
/// variances and integrating the response curves.
pub fn cmd_gap(
    cfg: &FileConfig,
    out_dir: &Path,
    params_path: &Path,
    samples: &[usize],
) -> Result<(), CliError> {
    let started = Instant::now();
    let file = io::load_params(params_path)?;
    require_hash_match(cfg, &file)?;
    if file.model_kind == "deterministic" {
        return Err(CliError::Check(
            "gap scores need a probabilistic model; this parameters file is deterministic".into(),
        ));
    }
    if samples.is_empty() {
        return Err(CliError::Config("no sample ids given".into()));
    }
    let params = params_from_file(&file)?;
    let data = load_and_split(cfg)?;
    let (val_x, _) = apply_stats(&data.val_raw, &file.standardization)?;
    let gcfg = cfg.gap.to_core();

    let mut sample_payloads = Vec::with_capacity(samples.len());
    let mut svg_paths = Vec::new();
    for &id in samples {
        if id >= val_x.len() {
            return Err(CliError::Check(format!(
                "sample id {id} is outside the validation split (0..{})",
                val_x.len()
            )));
        }
        let profile = gap_scores(&params, &file.network, &val_x[id], &gcfg)?;
        let all_converged = profile.converged.iter().all(|&c| c);
        if !all_converged {
            let bad: Vec<String> = profile
                .factors
                .iter()
                .zip(&profile.converged)
                .filter(|&(_, &c)| !c)
                .map(|(t, _)| format!("{t}"))
                .collect();
            println!(
                "gap[{}]: sample {id}: calibration did not converge for t ∈ {{{}}} (best \
                 iterates reported)",
                file.dataset,
                bad.join(", ")
            );
        }
        let names = file.standardization.names.clone();
        let mut items: Vec<(String, f64)> =
            names.iter().cloned().zip(profile.gap.iter().copied()).collect();
        items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
        let chart = svg::bar_chart(
            &format!("Uncertainty gap — {} sample {id}", file.dataset),
            "per-feature gap score (area under calibrated σ̂ against β)",
            &items,
        );
        let svg_path = out_dir.join(format!("gap_{}_sample_{id}.svg", file.dataset));
        io::atomic_write(&svg_path, chart.as_bytes())?;
        svg_paths.push(file_name(&svg_path));
        let top = items.first().map(|(n, _)| n.clone()).unwrap_or_default();
        println!(
            "gap[{}]: sample {id}: baseline mean {:.6}, β* {:.6}; top feature {top}",
            file.dataset, profile.baseline_mean, profile.achieved_beta[0]
        );
        sample_payloads.push(GapSamplePayload {
            sample_id: id,
            feature_names: names,
            gap: profile.gap.clone(),
            profile,
            all_converged,
        });
    }

    let payload = GapPayload {
        dataset: file.dataset.clone(),
        factors: gcfg.factors.clone(),
        samples: sample_payloads,
    };
    let report_path = out_dir.join(format!("gap_{}.json", file.dataset));
    let mut meta =
        Meta::new("gap", &cfg.config_hash(), &file.dataset, &data.load.source, file.train_seed);
    meta.wall_clock_seconds = started.elapsed().as_secs_f64();
    let mut outputs = vec![file_name(&report_path)];
    outputs.extend(svg_paths);
    meta.outputs = outputs;
    Report::new(meta, &payload)?.write(&report_path)?;
    println!("gap[{}]: wrote {}", file.dataset, report_path.display());
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Resolves the output directory, creating it if needed.
pub fn ensure_out_dir(out: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)
        .map_err(CliError::io(format!("cannot create output directory {}", out.display())))?;
    Ok(out.to_path_buf())
}
