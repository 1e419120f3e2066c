//! Plain (non-recorded) numerical primitives.

use crate::error::{Error, Result};

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax logits"));
    }
    check_finite(logits, "softmax logits")?;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

/// `<u,v> / (|u| |v|)`, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    if u.is_empty() {
        return Err(Error::EmptyInput("cosine_similarity"));
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("zero-norm vector in cosine similarity".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `-log softmax(logits)[target]`, computed with log-sum-exp.
pub fn cross_entropy_from_logits(logits: &[f64], target: usize) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("cross-entropy logits"));
    }
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            what: "cross-entropy target",
            index: target,
            len: logits.len(),
        });
    }
    check_finite(logits, "cross-entropy logits")?;
    Ok((log_sum_exp(logits) - logits[target]).max(0.0))
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if xs[b] >= x => {}
            _ if x.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}
