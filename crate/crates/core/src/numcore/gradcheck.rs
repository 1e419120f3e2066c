//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Per-parameter comparison between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct ParamGradError {
    pub index: usize,
    /// `|a - n| / max(|a|, |n|)` over the whole tensor (L2 norms).
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamGradError>,
    pub max_rel_error: f64,
}

/// Compares gradients of `f` against central differences with step `h`.
/// Every entry of `params` is treated as trainable.
pub fn check_gradients<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let mask = vec![true; params.len()];
    check_gradients_masked(params, &mask, h, f)
}

/// Like [`check_gradients`], but parameters with a `false` mask entry are
/// placed on the tape as constants and skipped.
pub fn check_gradients_masked<F>(
    params: &[Tensor],
    trainable: &[bool],
    h: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps
            .iter()
            .zip(trainable)
            .map(|(p, &t)| tape.leaf(p.clone(), t))
            .collect();
        let out = f(&tape, &vars);
        tape.check_finite()?;
        Ok(out.item())
    };

    let analytic: Vec<Option<Tensor>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params
            .iter()
            .zip(trainable)
            .map(|(p, &t)| tape.leaf(p.clone(), t))
            .collect();
        let out = f(&tape, &vars);
        out.backward()?;
        vars.iter().map(Var::grad).collect()
    };

    let mut work = params.to_vec();
    let mut report = Vec::new();
    for (i, p) in params.iter().enumerate() {
        if !trainable[i] {
            continue;
        }
        let mut numeric = vec![0.0; p.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = p.data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let a = analytic[i]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(p.shape()));
        let diff: f64 = a
            .data()
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let an = a.norm();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = an.max(nn);
        let rel = if denom == 0.0 { 0.0 } else { diff / denom };
        report.push(ParamGradError {
            index: i,
            rel_error: rel,
            analytic_norm: an,
            numeric_norm: nn,
        });
    }
    let max_rel_error = report.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: report,
        max_rel_error,
    })
}
