use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use vaps_core::data::format::{labels_path, load_features, load_features_checked, save_features};
use vaps_core::data::{Dataset, Split};
use vaps_core::evalmetrics::{write_curve_csv, PercentReport};
use vaps_core::pipeline::{
    self, ablation_csv, sweep_csv, write_text, Ablation, Checkpoint, EvalOutcome, RunConfig, Threshold,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{ensure_dir, require_file, sha256_file, Manifest};
use crate::{AblateArgs, EvalArgs, GenDataArgs, InspectArgs, SweepArgs, TrainArgs, ValidateFeatArgs};

pub const DATA_FILE: &str = "data.vapsfeat";
pub const CKPT_FILE: &str = "model.vapsckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v).map_err(vaps_core::Error::from)?)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let bytes = serde_json::to_vec_pretty(v).map_err(vaps_core::Error::from)?;
    std::fs::write(path, bytes).map_err(|e| vaps_core::Error::io(path, e))?;
    Ok(())
}

/// Loads features whose dimensions must agree with `run`.
fn load_data_for(path: &Path, run: &RunConfig) -> CliResult<Dataset> {
    require_file(path)?;
    require_file(&labels_path(path))?;
    Ok(load_features_checked(path, run.d, run.n_tokens)?)
}

fn hash_data_inputs(manifest: &mut Manifest, data: &Path) -> CliResult<()> {
    manifest.input(data)?;
    manifest.input(&labels_path(data))
}

pub fn gen_data(args: GenDataArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.data.seed = seed;
    }
    let dataset = cfg.data.generate()?;
    ensure_dir(&args.out)?;
    let path = args.out.join(DATA_FILE);
    save_features(&path, &dataset)?;

    let mut manifest = Manifest::new("gen-data", to_value(&cfg.data)?, Some(cfg.data.seed));
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    manifest.outputs = vec![DATA_FILE.into(), labels_file_name(&path)];
    manifest.details = json!({
        "train": dataset.count(Split::Train),
        "val": dataset.count(Split::Val),
        "test": dataset.count(Split::Test),
        "data_sha256": sha256_file(&path)?,
    });
    manifest.write(&args.out)?;
    emit(&format!("wrote {} samples to {}", dataset.records.len(), path.display()));
    Ok(())
}

fn labels_file_name(features: &Path) -> String {
    labels_path(features)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref())?;
    let mut run = cfg.run;
    if let Some(a) = args.ablate {
        run = a.apply(&run);
    }
    args.run.apply(&mut run);
    run.validate()?;
    let dataset = load_data_for(&args.data, &run)?;

    let mut manifest = Manifest::new("train", to_value(&run)?, Some(run.seed));
    hash_data_inputs(&mut manifest, &args.data)?;
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }

    let out = pipeline::train(&run, &dataset)?;
    ensure_dir(&args.out)?;
    let ckpt = Checkpoint::new(out.model, out.optimizer);
    let ckpt_path = args.out.join(CKPT_FILE);
    ckpt.save(&ckpt_path)?;
    pipeline::write_log_csv(&out.log, &args.out.join(TRAIN_LOG_FILE))?;

    manifest.outputs = vec![CKPT_FILE.into(), TRAIN_LOG_FILE.into()];
    manifest.details = json!({
        "ablation": run.ablation_label(),
        "steps": ckpt.step(),
        "frozen_hash_before": out.frozen_hash_before,
        "frozen_hash_after": out.frozen_hash_after,
        "checkpoint_sha256": sha256_file(&ckpt_path)?,
        "initial_loss": out.log.first().map(|r| r.report.l_total),
        "final_loss": out.log.last().map(|r| r.report.l_total),
    });
    manifest.write(&args.out)?;
    emit(&format!(
        "trained {} steps ({}); checkpoint {}",
        ckpt.step(),
        run.ablation_label(),
        ckpt_path.display()
    ));
    Ok(())
}

fn parse_threshold(s: &str) -> CliResult<Threshold> {
    if s.eq_ignore_ascii_case("calibrate") {
        return Ok(Threshold::Calibrate);
    }
    match s.parse::<f64>() {
        Ok(t) if !t.is_nan() => Ok(Threshold::Fixed(t)),
        _ => Err(CliError::Argument {
            flag: "--threshold",
            message: format!("expected a number, -inf or `calibrate`, got `{s}`"),
        }),
    }
}

/// `metrics.json` layout: the evaluation outcome plus the headline metrics
/// in percent.
#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    #[serde(flatten)]
    outcome: &'a EvalOutcome,
    percent: Option<PercentReport>,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let threshold = parse_threshold(&args.threshold)?;
    require_file(&args.ckpt)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let model = ckpt.model;
    let dataset = load_data_for(&args.data, &model.config)?;
    let space = &dataset.space;
    if (space.n_attrs(), space.n_objs()) != (model.n_attrs, model.n_objs) {
        return Err(vaps_core::Error::Dimension(format!(
            "checkpoint has {}×{} primitives, dataset has {}×{}",
            model.n_attrs,
            model.n_objs,
            space.n_attrs(),
            space.n_objs()
        ))
        .into());
    }
    let outcome = pipeline::evaluate(&model, &dataset, args.split.into(), args.mode.into(), threshold)?;

    ensure_dir(&args.out)?;
    write_json(
        &args.out.join(METRICS_FILE),
        &MetricsFile {
            outcome: &outcome,
            percent: outcome.metrics.as_ref().map(|m| m.percent()),
        },
    )?;
    let mut outputs = vec![METRICS_FILE.to_string()];
    if let Some(curve) = &outcome.curve {
        write_curve_csv(curve, &args.out.join(CURVE_FILE))?;
        outputs.push(CURVE_FILE.into());
    }

    let mut manifest = Manifest::new("eval", to_value(&model.config)?, Some(model.config.seed));
    manifest.input(&args.ckpt)?;
    hash_data_inputs(&mut manifest, &args.data)?;
    manifest.outputs = outputs;
    manifest.details = json!({
        "split": outcome.split,
        "mode": outcome.mode,
        "threshold_arg": args.threshold,
        "threshold_applied": outcome.threshold.map(|t| t.to_string()),
    });
    manifest.write(&args.out)?;
    match outcome.metrics {
        Some(m) => {
            let p = m.percent();
            emit(&format!("S={:.2} U={:.2} H={:.2} AUC={:.2}", p.seen, p.unseen, p.harmonic, p.auc));
        }
        None => emit(&format!(
            "seen_acc={:?} unseen_acc={:?}",
            outcome.seen_acc, outcome.unseen_acc
        )),
    }
    Ok(())
}

pub fn ablate(args: AblateArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref())?;
    let mut run = cfg.run;
    args.run.apply(&mut run);
    run.validate()?;
    if args.seeds == 0 {
        return Err(CliError::Argument {
            flag: "--seeds",
            message: "must be at least 1".into(),
        });
    }
    let variants = if args.variants.is_empty() {
        Ablation::ALL.to_vec()
    } else {
        args.variants.clone()
    };
    let seeds: Vec<u64> = (0..args.seeds).map(|k| run.seed + k).collect();
    let dataset = load_data_for(&args.data, &run)?;
    let mut manifest = Manifest::new("ablate", to_value(&run)?, Some(run.seed));
    hash_data_inputs(&mut manifest, &args.data)?;
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }

    let rows = pipeline::ablate(&run, &dataset, &seeds, &variants)?;
    ensure_dir(&args.out)?;
    let csv = ablation_csv(&rows);
    write_text(&args.out.join(ABLATION_FILE), &csv)?;
    manifest.outputs = vec![ABLATION_FILE.into()];
    manifest.details = json!({
        "seeds": seeds,
        "cells": rows.iter().map(|r| json!({"variant": r.variant, "seed": r.cell.seed})).collect::<Vec<_>>(),
    });
    manifest.write(&args.out)?;
    emit(csv.trim_end());
    Ok(())
}

pub fn sweep(args: SweepArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref())?;
    let mut run = cfg.run;
    args.run.apply(&mut run);
    run.validate()?;
    for (flag, list) in [("--M", &args.m), ("--N", &args.n)] {
        if list.is_empty() {
            return Err(CliError::Argument {
                flag,
                message: "needs at least one value".into(),
            });
        }
    }
    for &m in &args.m {
        for &n in &args.n {
            RunConfig {
                repo_size: m,
                n_select: n,
                ..run.clone()
            }
            .validate()?;
        }
    }
    let dataset = load_data_for(&args.data, &run)?;
    let mut manifest = Manifest::new("sweep", to_value(&run)?, Some(run.seed));
    hash_data_inputs(&mut manifest, &args.data)?;
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }

    let rows = pipeline::sweep(&run, &dataset, &args.m, &args.n)?;
    ensure_dir(&args.out)?;
    let csv = sweep_csv(&rows);
    write_text(&args.out.join(SWEEP_FILE), &csv)?;
    manifest.outputs = vec![SWEEP_FILE.into()];
    manifest.details = json!({
        "M": args.m,
        "N": args.n,
        "cells": rows
            .iter()
            .map(|r| json!({"M": r.repo_size, "N": r.n_select, "seed": r.cell.seed}))
            .collect::<Vec<_>>(),
    });
    manifest.write(&args.out)?;
    emit(csv.trim_end());
    Ok(())
}

pub fn inspect_ckpt(args: InspectArgs) -> CliResult<()> {
    require_file(&args.ckpt)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let model = &ckpt.model;
    let params: Vec<Value> = model
        .store
        .iter()
        .map(|(_, p)| {
            json!({
                "name": p.name,
                "shape": p.value.shape(),
                "trainable": p.trainable,
                "norm": p.value.norm(),
            })
        })
        .collect();
    let summary = json!({
        "config": model.config,
        "n_attrs": model.n_attrs,
        "n_objs": model.n_objs,
        "step": ckpt.step(),
        "frozen_hash": model.frozen_hash(),
        "params": params,
    });
    emit(&serde_json::to_string_pretty(&summary).map_err(vaps_core::Error::from)?);
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_json(&out.join("ckpt_summary.json"), &summary)?;
        let mut manifest = Manifest::new("inspect-ckpt", to_value(&model.config)?, Some(model.config.seed));
        manifest.input(&args.ckpt)?;
        manifest.outputs = vec!["ckpt_summary.json".into()];
        manifest.write(out)?;
    }
    Ok(())
}

pub fn validate_feat(args: ValidateFeatArgs) -> CliResult<()> {
    require_file(&args.data)?;
    require_file(&labels_path(&args.data))?;
    let dataset = load_features(&args.data)?;
    dataset.validate()?;
    let (d, n_tokens) = dataset.dims().unwrap_or((0, 0));
    for (flag, want, got) in [("--d", args.d, d), ("--n-tokens", args.n_tokens, n_tokens)] {
        if let Some(want) = want {
            if want != got && !dataset.records.is_empty() {
                return Err(CliError::Argument {
                    flag,
                    message: format!("file has {got}, expected {want}"),
                });
            }
        }
    }
    let space = &dataset.space;
    let report = json!({
        "valid": true,
        "records": dataset.records.len(),
        "d": d,
        "n_tokens": n_tokens,
        "n_attrs": space.n_attrs(),
        "n_objs": space.n_objs(),
        "seen_pairs": space.seen_pairs.len(),
        "train": dataset.count(Split::Train),
        "val": dataset.count(Split::Val),
        "test": dataset.count(Split::Test),
        "sha256": sha256_file(&args.data)?,
    });
    emit(&serde_json::to_string_pretty(&report).map_err(vaps_core::Error::from)?);
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_json(&out.join("validation.json"), &report)?;
        let mut manifest = Manifest::new("validate-feat", Value::Null, None);
        hash_data_inputs(&mut manifest, &args.data)?;
        manifest.outputs = vec!["validation.json".into()];
        manifest.write(out)?;
    }
    Ok(())
}
