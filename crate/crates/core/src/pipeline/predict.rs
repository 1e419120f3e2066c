use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Pair, SampleRecord, Split, WorldMode};
use crate::encoders::ImageFeatures;
use crate::error::{Error, Result};
use crate::evalmetrics::{
    accuracy_where, bias_sweep, calibrate_threshold, feasibility_scores, filter_logits, summarize, EvalCurve,
    MetricsReport,
};
use crate::numcore::argmax;

use super::model::VapsModel;

/// Closed-world prediction: the highest-scoring pair of `c_test`, lowest
/// index on ties.
pub fn predict_closed(model: &VapsModel, image: &ImageFeatures, c_test: &[Pair]) -> Result<Pair> {
    let logits = model.inference_logits(image, c_test)?;
    let best = argmax(&logits).ok_or(Error::EmptyInput("candidate pairs"))?;
    Ok(c_test[best])
}

/// Open-world prediction over `all_pairs` after removing unseen pairs whose
/// feasibility is below `threshold`.
pub fn predict_open(
    model: &VapsModel,
    image: &ImageFeatures,
    all_pairs: &[Pair],
    feasibility: &[f64],
    seen_mask: &[bool],
    threshold: f64,
) -> Result<Pair> {
    let mut logits = model.inference_logits(image, all_pairs)?;
    if feasibility.len() != all_pairs.len() || seen_mask.len() != all_pairs.len() {
        return Err(Error::Dimension("feasibility or seen mask does not match the pair list".into()));
    }
    filter_logits(&mut logits, feasibility, seen_mask, threshold);
    if logits.iter().all(|x| *x == f64::NEG_INFINITY) {
        return Err(Error::EmptyFeasibleSet { threshold });
    }
    let best = argmax(&logits).expect("non-empty");
    Ok(all_pairs[best])
}

/// Inference logits of every record over `pairs`. Samples are scored in
/// parallel and collected in input order, so the result does not depend on
/// the thread count.
pub fn collect_logits(model: &VapsModel, records: &[&SampleRecord], pairs: &[Pair]) -> Result<Vec<Vec<f64>>> {
    records
        .par_iter()
        .map(|r| model.inference_logits(&r.features, pairs))
        .collect()
}

/// Sequential counterpart of [`collect_logits`].
pub fn collect_logits_sequential(model: &VapsModel, records: &[&SampleRecord], pairs: &[Pair]) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| model.inference_logits(&r.features, pairs))
        .collect()
}

/// How the open-world threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Maximise validation H over candidate thresholds.
    Calibrate,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub split: Split,
    pub mode: WorldMode,
    pub n_samples: usize,
    pub n_pairs: usize,
    /// Open-world threshold actually applied.
    pub threshold: Option<f64>,
    /// Unbiased top-1 accuracy on seen-labelled samples.
    pub seen_acc: Option<f64>,
    /// Unbiased top-1 accuracy on unseen-labelled samples.
    pub unseen_acc: Option<f64>,
    /// Bias-sweep metrics; absent when the split has no unseen labels.
    pub metrics: Option<MetricsReport>,
    #[serde(skip)]
    pub curve: Option<EvalCurve>,
    /// `(sample_id, predicted pair)` at zero bias.
    #[serde(skip)]
    pub predictions: Vec<(u64, Pair)>,
}

fn labels_in(universe: &[Pair], records: &[&SampleRecord]) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            universe.iter().position(|p| *p == r.pair).ok_or_else(|| {
                Error::Dataset(format!(
                    "sample {} has pair ({}, {}) outside the evaluation universe",
                    r.sample_id, r.pair.attr, r.pair.obj
                ))
            })
        })
        .collect()
}

/// Scores `split` of `dataset` in `mode`. In open world the threshold is
/// either fixed or calibrated on the validation split.
pub fn evaluate(model: &VapsModel, dataset: &Dataset, split: Split, mode: WorldMode, threshold: Threshold) -> Result<EvalOutcome> {
    let space = &dataset.space;
    let records: Vec<&SampleRecord> = dataset.split(split).collect();
    if records.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let universe = space.eval_pairs(split, mode);
    let mask = space.seen_mask(&universe);
    let labels = labels_in(&universe, &records)?;
    let mut logits = collect_logits(model, &records, &universe)?;

    let applied = match mode {
        WorldMode::Closed => None,
        WorldMode::Open => {
            let feasibility = feasibility_scores(
                model.store.value(model.prompt.attr_table),
                model.store.value(model.prompt.obj_table),
                &space.seen_pairs,
                &universe,
            )?;
            let t = match threshold {
                Threshold::Fixed(t) => t,
                Threshold::Calibrate => {
                    let val: Vec<&SampleRecord> = dataset.split(Split::Val).collect();
                    let val_labels = labels_in(&universe, &val)?;
                    let val_logits = collect_logits(model, &val, &universe)?;
                    calibrate_threshold(&val_logits, &val_labels, &mask, &feasibility)?.threshold
                }
            };
            for row in &mut logits {
                filter_logits(row, &feasibility, &mask, t);
                if row.iter().all(|x| *x == f64::NEG_INFINITY) {
                    return Err(Error::EmptyFeasibleSet { threshold: t });
                }
            }
            Some(t)
        }
    };

    let has_seen = labels.iter().any(|&l| mask[l]);
    let has_unseen = labels.iter().any(|&l| !mask[l]);
    let curve = (has_seen && has_unseen)
        .then(|| bias_sweep(&logits, &labels, &mask))
        .transpose()?;
    let predictions = records
        .iter()
        .zip(&logits)
        .map(|(r, row)| (r.sample_id, universe[argmax(row).expect("non-empty universe")]))
        .collect();
    Ok(EvalOutcome {
        split,
        mode,
        n_samples: records.len(),
        n_pairs: universe.len(),
        threshold: applied,
        seen_acc: has_seen
            .then(|| accuracy_where(&logits, &labels, &mask, |s| s))
            .transpose()?,
        unseen_acc: has_unseen
            .then(|| accuracy_where(&logits, &labels, &mask, |s| !s))
            .transpose()?,
        metrics: curve.as_ref().map(summarize),
        curve,
        predictions,
    })
}
