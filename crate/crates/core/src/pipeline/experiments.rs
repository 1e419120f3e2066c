//! Ablation and repository sweeps: each cell is an independent train plus
//! test-split evaluation.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::evalmetrics::MetricsReport;

use super::config::{Ablation, RunConfig};
use super::predict::{evaluate, EvalOutcome, Threshold};
use super::train::{train, TrainOutcome};

/// Trains under `config` and evaluates the test split in `config.mode`.
pub fn run_cell(config: &RunConfig, dataset: &Dataset) -> Result<(TrainOutcome, EvalOutcome)> {
    let trained = train(config, dataset)?;
    let eval = evaluate(&trained.model, dataset, Split::Test, config.mode, Threshold::Calibrate)?;
    Ok((trained, eval))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMetrics {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub final_loss: f64,
}

fn cell_metrics(seed: u64, trained: &TrainOutcome, eval: &EvalOutcome) -> Result<CellMetrics> {
    let metrics = eval
        .metrics
        .ok_or_else(|| Error::Dataset("test split has no unseen-labelled samples".into()))?;
    Ok(CellMetrics {
        seed,
        metrics,
        seen_acc: eval.seen_acc.unwrap_or(0.0),
        unseen_acc: eval.unseen_acc.unwrap_or(0.0),
        final_loss: trained.log.last().map_or(f64::NAN, |r| r.report.l_total),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub cell: CellMetrics,
}

pub const ABLATION_CSV_HEADER: &str = "variant,seed,S,U,H,AUC,seen_acc,unseen_acc,final_loss";

/// Every variant under every seed, seed-major.
pub fn ablate(config: &RunConfig, dataset: &Dataset, seeds: &[u64], variants: &[Ablation]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::EmptyInput("ablation seeds or variants"));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for &variant in variants {
            let cfg = RunConfig {
                seed,
                ..variant.apply(config)
            };
            let (trained, eval) = run_cell(&cfg, dataset)?;
            rows.push(AblationRow {
                variant,
                cell: cell_metrics(seed, &trained, &eval)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub repo_size: usize,
    pub n_select: usize,
    pub cell: CellMetrics,
}

pub const SWEEP_CSV_HEADER: &str = "M,N,seed,S,U,H,AUC,seen_acc,unseen_acc,final_loss";

/// Repository size × selection count grid, `M`-major.
pub fn sweep(config: &RunConfig, dataset: &Dataset, sizes: &[usize], selects: &[usize]) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() || selects.is_empty() {
        return Err(Error::EmptyInput("sweep grid"));
    }
    let mut rows = Vec::new();
    for &repo_size in sizes {
        for &n_select in selects {
            let cfg = RunConfig {
                repo_size,
                n_select,
                ..config.clone()
            };
            cfg.validate()?;
            let (trained, eval) = run_cell(&cfg, dataset)?;
            rows.push(SweepRow {
                repo_size,
                n_select,
                cell: cell_metrics(cfg.seed, &trained, &eval)?,
            });
        }
    }
    Ok(rows)
}

fn metric_fields(c: &CellMetrics) -> String {
    let p = c.metrics.percent();
    format!(
        "{},{},{},{},{},{},{}",
        p.seen, p.unseen, p.harmonic, p.auc, c.seen_acc, c.unseen_acc, c.final_loss
    )
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.variant.name(), r.cell.seed, metric_fields(&r.cell)));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.repo_size, r.n_select, r.cell.seed, metric_fields(&r.cell)));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
