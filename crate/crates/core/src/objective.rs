//! Training losses.
//!
//! Each loss is a batch-mean cross-entropy recorded on the tape. The total is
//! `L_ret + λ_att_obj·(L_att + L_obj) + λ_sp·L_sp`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Var;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_att_obj: f64,
    pub lambda_sp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_att_obj: 1.0,
            lambda_sp: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lambda_att_obj", self.lambda_att_obj), ("lambda_sp", self.lambda_sp)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_att: f64,
    pub l_obj: f64,
    pub l_sp: f64,
    pub l_ret: f64,
    pub l_total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,l_att,l_obj,l_sp,l_ret,l_total";

    /// Fills `l_total` from the components.
    pub fn new(l_att: f64, l_obj: f64, l_sp: f64, l_ret: f64, weights: &LossWeights) -> Result<Self> {
        Ok(Self {
            l_att,
            l_obj,
            l_sp,
            l_ret,
            l_total: loss_total(l_att, l_obj, l_sp, l_ret, weights)?,
        })
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.l_att, self.l_obj, self.l_sp, self.l_ret, self.l_total
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Attr,
    Obj,
}

fn batch_ce<'t>(logits: Var<'t>, targets: &[usize], what: &'static str) -> Result<Var<'t>> {
    let (rows, classes) = logits.dims2();
    if targets.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    if rows != targets.len() {
        return Err(Error::Dimension(format!("{rows} logit rows for {} targets", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::IndexOutOfRange {
            what,
            index: bad,
            len: classes,
        });
    }
    Ok(logits.cross_entropy_rows(targets))
}

/// Batch-mean cross-entropy over attribute (`B × |A|`) or object
/// (`B × |O|`) logits.
pub fn loss_primitive<'t>(logits: Var<'t>, targets: &[usize], which: Primitive) -> Result<Var<'t>> {
    let what = match which {
        Primitive::Attr => "attribute target",
        Primitive::Obj => "object target",
    };
    batch_ce(logits, targets, what)
}

/// Batch-mean cross-entropy over seen-pair logits (`B × |C_s|`). Targets
/// index into the seen-pair list.
pub fn loss_sp<'t>(pair_logits: Var<'t>, seen_targets: &[usize]) -> Result<Var<'t>> {
    batch_ce(pair_logits, seen_targets, "seen pair target")
}

/// As [`loss_sp`] but over retrieval logits.
pub fn loss_ret<'t>(ret_logits: Var<'t>, seen_targets: &[usize]) -> Result<Var<'t>> {
    batch_ce(ret_logits, seen_targets, "seen pair target")
}

/// `mean(1 − s)` over the cosine scores of the selected keys. Pulls each
/// selected key toward the images that chose it; without it the keys get no
/// gradient, since the prompt average does not depend on score magnitudes.
pub fn key_alignment(scores: Var<'_>) -> Var<'_> {
    scores.mean().scale(-1.0).add_scalar(1.0)
}

pub fn loss_total(l_att: f64, l_obj: f64, l_sp: f64, l_ret: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("l_att", l_att), ("l_obj", l_obj), ("l_sp", l_sp), ("l_ret", l_ret)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(l_ret + w.lambda_att_obj * (l_att + l_obj) + w.lambda_sp * l_sp)
}

/// Recorded counterpart of [`loss_total`].
pub fn loss_total_var<'t>(l_att: Var<'t>, l_obj: Var<'t>, l_sp: Var<'t>, l_ret: Option<Var<'t>>, w: &LossWeights) -> Var<'t> {
    let rest = l_att.add(l_obj).scale(w.lambda_att_obj).add(l_sp.scale(w.lambda_sp));
    match l_ret {
        Some(r) => r.add(rest),
        None => rest,
    }
}
