//! Compositional zero-shot evaluation.
//!
//! The bias sweep adds a scalar to every unseen-pair logit and records seen
//! and unseen accuracy as the bias moves from `−∞` to `+∞`. A sample's
//! prediction can only flip where the bias equals its margin (best seen
//! logit minus best unseen logit), so those margins plus the two sentinels
//! give the exact curve. Logits equal to `−∞` mark pairs removed by
//! open-world filtering and are never predicted.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::numcore::{cosine_similarity, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    /// Sorted by bias; first and last are the `−∞` and `+∞` sentinels.
    pub points: Vec<CurvePoint>,
    pub n_samples: usize,
    pub n_pairs: usize,
}

/// Fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
    pub auc: f64,
    /// Bias at which `harmonic` is attained.
    pub best_bias: f64,
}

/// Best seen-block and unseen-block entries of one sample, lowest index on
/// ties. `None` when the block is empty or fully filtered.
#[derive(Debug, Clone, Copy)]
struct SampleSummary {
    seen: Option<(f64, usize)>,
    unseen: Option<(f64, usize)>,
    label: usize,
    label_seen: bool,
}

impl SampleSummary {
    fn predicted_at(&self, bias: f64) -> Option<usize> {
        match (self.seen, self.unseen) {
            (None, None) => None,
            (Some((_, i)), None) => Some(i),
            (None, Some((_, j))) => Some(j),
            (Some((s, i)), Some((u, j))) => {
                let unseen_wins = if bias == f64::INFINITY {
                    true
                } else if bias == f64::NEG_INFINITY {
                    false
                } else {
                    let shifted = u + bias;
                    shifted > s || (shifted == s && j < i)
                };
                Some(if unseen_wins { j } else { i })
            }
        }
    }

    fn margin(&self) -> Option<f64> {
        match (self.seen, self.unseen) {
            (Some((s, _)), Some((u, _))) => Some(s - u),
            _ => None,
        }
    }
}

fn summarize_rows(logits: &[Vec<f64>], labels: &[usize], seen_mask: &[bool]) -> Result<Vec<SampleSummary>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("logits"));
    }
    if logits.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let k = seen_mask.len();
    logits
        .iter()
        .zip(labels)
        .map(|(row, &label)| {
            if row.len() != k {
                return Err(Error::Dimension(format!("logit row of {} for {k} pairs", row.len())));
            }
            if label >= k {
                return Err(Error::IndexOutOfRange {
                    what: "label",
                    index: label,
                    len: k,
                });
            }
            let mut seen: Option<(f64, usize)> = None;
            let mut unseen: Option<(f64, usize)> = None;
            for (i, (&x, &is_seen)) in row.iter().zip(seen_mask).enumerate() {
                if x == f64::NEG_INFINITY {
                    continue;
                }
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!("logit {x} at pair {i}")));
                }
                let slot = if is_seen { &mut seen } else { &mut unseen };
                if slot.is_none_or(|(best, _)| x > best) {
                    *slot = Some((x, i));
                }
            }
            Ok(SampleSummary {
                seen,
                unseen,
                label,
                label_seen: seen_mask[label],
            })
        })
        .collect()
}

/// Seen/unseen accuracy at every distinct bias where a prediction can flip.
///
/// `logits` is `n × K` over a pair universe, `seen_mask` marks which of the
/// `K` pairs are seen. Errors if either label group is empty.
pub fn bias_sweep(logits: &[Vec<f64>], labels: &[usize], seen_mask: &[bool]) -> Result<EvalCurve> {
    let rows = summarize_rows(logits, labels, seen_mask)?;
    let n_seen = rows.iter().filter(|r| r.label_seen).count();
    let n_unseen = rows.len() - n_seen;
    if n_seen == 0 {
        return Err(Error::EmptyInput("seen-labelled samples"));
    }
    if n_unseen == 0 {
        return Err(Error::EmptyInput("unseen-labelled samples"));
    }
    let mut biases: Vec<f64> = rows.iter().filter_map(SampleSummary::margin).collect();
    biases.sort_by(f64::total_cmp);
    biases.dedup();
    biases.insert(0, f64::NEG_INFINITY);
    biases.push(f64::INFINITY);

    let points = biases
        .into_iter()
        .map(|bias| {
            let (mut hit_s, mut hit_u) = (0usize, 0usize);
            for r in &rows {
                if r.predicted_at(bias) == Some(r.label) {
                    if r.label_seen {
                        hit_s += 1;
                    } else {
                        hit_u += 1;
                    }
                }
            }
            CurvePoint {
                bias,
                seen_acc: hit_s as f64 / n_seen as f64,
                unseen_acc: hit_u as f64 / n_unseen as f64,
            }
        })
        .collect();
    Ok(EvalCurve {
        points,
        n_samples: rows.len(),
        n_pairs: seen_mask.len(),
    })
}

/// Unbiased top-1 accuracy over the samples whose label satisfies `keep`.
pub fn accuracy_where(logits: &[Vec<f64>], labels: &[usize], seen_mask: &[bool], keep: impl Fn(bool) -> bool) -> Result<f64> {
    let rows = summarize_rows(logits, labels, seen_mask)?;
    let picked: Vec<&SampleSummary> = rows.iter().filter(|r| keep(r.label_seen)).collect();
    if picked.is_empty() {
        return Err(Error::EmptyInput("samples in accuracy group"));
    }
    let hits = picked.iter().filter(|r| r.predicted_at(0.0) == Some(r.label)).count();
    Ok(hits as f64 / picked.len() as f64)
}

/// S and U from the sentinels, H as the best harmonic mean along the
/// curve, and AUC as the trapezoid area of unseen against seen accuracy.
///
/// The curve is closed to the axes with `(S, 0)` before the first point and
/// `(0, U)` after the last, so a flat curve encloses its rectangle.
pub fn summarize(curve: &EvalCurve) -> MetricsReport {
    let first = curve.points.first().expect("curve has sentinel points");
    let last = curve.points.last().expect("curve has sentinel points");
    let (mut harmonic, mut best_bias) = (0.0, first.bias);
    for p in &curve.points {
        let sum = p.seen_acc + p.unseen_acc;
        let h = if sum > 0.0 { 2.0 * p.seen_acc * p.unseen_acc / sum } else { 0.0 };
        if h > harmonic {
            harmonic = h;
            best_bias = p.bias;
        }
    }
    let mut trace = Vec::with_capacity(curve.points.len() + 2);
    trace.push((first.seen_acc, 0.0));
    trace.extend(curve.points.iter().map(|p| (p.seen_acc, p.unseen_acc)));
    trace.push((0.0, last.unseen_acc));
    let auc = trace
        .windows(2)
        .map(|w| (w[0].0 - w[1].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    MetricsReport {
        seen: first.seen_acc,
        unseen: last.unseen_acc,
        harmonic,
        auc,
        best_bias,
    }
}

impl MetricsReport {
    /// The same metrics scaled to percentages, for reports.
    pub fn percent(&self) -> PercentReport {
        PercentReport {
            seen: 100.0 * self.seen,
            unseen: 100.0 * self.unseen,
            harmonic: 100.0 * self.harmonic,
            auc: 100.0 * self.auc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentReport {
    #[serde(rename = "S")]
    pub seen: f64,
    #[serde(rename = "U")]
    pub unseen: f64,
    #[serde(rename = "H")]
    pub harmonic: f64,
    #[serde(rename = "AUC")]
    pub auc: f64,
}

pub const CURVE_CSV_HEADER: &str = "bias,seen_acc,unseen_acc";

pub fn write_curve_csv(curve: &EvalCurve, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{CURVE_CSV_HEADER}").expect("write to Vec");
    for p in &curve.points {
        writeln!(out, "{},{},{}", fmt_bias(p.bias), p.seen_acc, p.unseen_acc).expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn fmt_bias(b: f64) -> String {
    if b == f64::INFINITY {
        "inf".into()
    } else if b == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        b.to_string()
    }
}

/// Feasibility of every pair in `universe` from co-occurrence in `seen`.
///
/// Seen pairs score 1. For an unseen `(a, o)`, `ρ_o` is the best cosine
/// between `o` and any object seen with `a`, and `ρ_a` the best cosine
/// between `a` and any attribute seen with `o`; the score is their mean, or
/// the one that exists. With neither, the score is −1.
pub fn feasibility_scores(attr_table: &Tensor, obj_table: &Tensor, seen: &[Pair], universe: &[Pair]) -> Result<Vec<f64>> {
    if seen.is_empty() {
        return Err(Error::EmptyInput("seen pairs"));
    }
    let (n_attrs, _) = attr_table.dims2();
    let (n_objs, _) = obj_table.dims2();
    let mut objs_with = vec![Vec::new(); n_attrs];
    let mut attrs_with = vec![Vec::new(); n_objs];
    for p in seen.iter().chain(universe) {
        if p.attr >= n_attrs || p.obj >= n_objs {
            return Err(Error::IndexOutOfRange {
                what: "pair primitive",
                index: p.attr.max(p.obj),
                len: n_attrs.min(n_objs),
            });
        }
    }
    for p in seen {
        objs_with[p.attr].push(p.obj);
        attrs_with[p.obj].push(p.attr);
    }
    let best = |table: &Tensor, target: usize, others: &[usize]| -> Result<Option<f64>> {
        let mut best: Option<f64> = None;
        for &o in others {
            let c = cosine_similarity(table.row(target), table.row(o))?;
            best = Some(best.map_or(c, |b: f64| b.max(c)));
        }
        Ok(best)
    };
    universe
        .iter()
        .map(|p| {
            if seen.contains(p) {
                return Ok(1.0);
            }
            let rho_o = best(obj_table, p.obj, &objs_with[p.attr])?;
            let rho_a = best(attr_table, p.attr, &attrs_with[p.obj])?;
            Ok(match (rho_a, rho_o) {
                (Some(a), Some(o)) => (a + o) / 2.0,
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => -1.0,
            })
        })
        .collect()
}

/// Replaces logits of unseen pairs with feasibility below `threshold` by
/// `−∞`. Seen pairs always pass.
pub fn filter_logits(row: &mut [f64], feasibility: &[f64], seen_mask: &[bool], threshold: f64) {
    for ((x, &p), &seen) in row.iter_mut().zip(feasibility).zip(seen_mask) {
        if !seen && p < threshold {
            *x = f64::NEG_INFINITY;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Validation harmonic mean at `threshold`.
    pub harmonic: f64,
}

/// Picks the unseen-pair feasibility value that maximises validation H
/// after filtering; ties go to the smallest threshold.
pub fn calibrate_threshold(logits: &[Vec<f64>], labels: &[usize], seen_mask: &[bool], feasibility: &[f64]) -> Result<Calibration> {
    if feasibility.len() != seen_mask.len() {
        return Err(Error::Dimension(format!(
            "{} feasibility scores for {} pairs",
            feasibility.len(),
            seen_mask.len()
        )));
    }
    let mut candidates: Vec<f64> = feasibility
        .iter()
        .zip(seen_mask)
        .filter(|(p, seen)| !**seen && **p > -1.0)
        .map(|(p, _)| *p)
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    if candidates.is_empty() {
        return Err(Error::NoCandidates("no unseen pair has a defined feasibility score".into()));
    }
    let mut best: Option<Calibration> = None;
    for t in candidates {
        let filtered: Vec<Vec<f64>> = logits
            .iter()
            .map(|r| {
                let mut r = r.clone();
                filter_logits(&mut r, feasibility, seen_mask, t);
                r
            })
            .collect();
        let h = summarize(&bias_sweep(&filtered, labels, seen_mask)?).harmonic;
        if best.is_none_or(|b| h > b.harmonic) {
            best = Some(Calibration { threshold: t, harmonic: h });
        }
    }
    Ok(best.expect("at least one candidate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    /// Full-argmax rescoring at one bias, written without the margin trick.
    fn brute_point(logits: &[Vec<f64>], labels: &[usize], mask: &[bool], bias: f64) -> (f64, f64) {
        let (mut hs, mut ns, mut hu, mut nu) = (0, 0, 0, 0);
        for (row, &label) in logits.iter().zip(labels) {
            let adjusted: Vec<f64> = row
                .iter()
                .zip(mask)
                .map(|(&x, &seen)| if seen || x == f64::NEG_INFINITY { x } else { x + bias })
                .collect();
            let mut arg = 0;
            for i in 1..adjusted.len() {
                if adjusted[i] > adjusted[arg] {
                    arg = i;
                }
            }
            if mask[label] {
                ns += 1;
                hs += (arg == label) as usize;
            } else {
                nu += 1;
                hu += (arg == label) as usize;
            }
        }
        (hs as f64 / ns as f64, hu as f64 / nu as f64)
    }

    fn brute_curve(logits: &[Vec<f64>], labels: &[usize], mask: &[bool]) -> Vec<(f64, f64, f64)> {
        let mut biases = vec![];
        for row in logits {
            let s = row.iter().zip(mask).filter(|(_, m)| **m).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
            let u = row.iter().zip(mask).filter(|(_, m)| !**m).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
            if s.is_finite() && u.is_finite() {
                biases.push(s - u);
            }
        }
        biases.sort_by(f64::total_cmp);
        biases.dedup();
        let mut all = vec![-1e6];
        all.extend(biases);
        all.push(1e6);
        all.into_iter()
            .map(|b| {
                let (s, u) = brute_point(logits, labels, mask, b);
                (b, s, u)
            })
            .collect()
    }

    fn dyadic_fixture(seed: u64, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<bool>) {
        let mut g = rng::SplitMix64::new(seed);
        let mask: Vec<bool> = (0..k).map(|i| i % 3 != 0).collect();
        let logits = (0..n)
            .map(|_| (0..k).map(|_| (g.below(64) as f64 - 32.0) / 8.0).collect())
            .collect();
        let labels = (0..n).map(|_| g.below(k as u64) as usize).collect();
        (logits, labels, mask)
    }

    #[test]
    fn hand_enumerated_two_sample_curve() {
        // Pairs: 0 seen, 1 unseen. Sample A (seen label) prefers seen by 1;
        // sample B (unseen label) prefers unseen by 1. At a bias equal to a
        // margin the two blocks tie and the lower (seen) index wins, so each
        // sample flips just past its margin.
        let logits = vec![vec![2.0, 1.0], vec![0.0, 1.0]];
        let curve = bias_sweep(&logits, &[0, 1], &[true, false]).unwrap();
        let got: Vec<(f64, f64, f64)> = curve.points.iter().map(|p| (p.bias, p.seen_acc, p.unseen_acc)).collect();
        assert_eq!(
            got,
            vec![
                (f64::NEG_INFINITY, 1.0, 0.0),
                (-1.0, 1.0, 0.0),
                (1.0, 1.0, 1.0),
                (f64::INFINITY, 0.0, 1.0),
            ]
        );
        let m = summarize(&curve);
        assert_eq!((m.seen, m.unseen, m.harmonic), (1.0, 1.0, 1.0));
        assert_eq!(m.best_bias, 1.0);
        assert!((m.auc - 1.0).abs() < 1e-15);
    }

    #[test]
    fn missing_label_group_is_an_error() {
        let logits = vec![vec![2.0, 1.0]];
        assert!(matches!(bias_sweep(&logits, &[0], &[true, false]), Err(Error::EmptyInput(_))));
        assert!(matches!(bias_sweep(&logits, &[1], &[true, false]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn flat_curves() {
        let flat = |s, u| EvalCurve {
            points: vec![
                CurvePoint { bias: f64::NEG_INFINITY, seen_acc: s, unseen_acc: u },
                CurvePoint { bias: f64::INFINITY, seen_acc: s, unseen_acc: u },
            ],
            n_samples: 2,
            n_pairs: 2,
        };
        let m = summarize(&flat(0.5, 0.5));
        assert_eq!((m.seen, m.unseen, m.harmonic, m.auc), (0.5, 0.5, 0.5, 0.25));
        let m = summarize(&flat(0.7, 0.0));
        assert_eq!((m.harmonic, m.auc), (0.0, 0.0));
    }

    #[test]
    fn sweep_matches_brute_force_rescoring() {
        for seed in 0..20 {
            let (logits, labels, mask) = dyadic_fixture(seed, 30, 7);
            if labels.iter().all(|&l| mask[l]) || labels.iter().all(|&l| !mask[l]) {
                continue;
            }
            let curve = bias_sweep(&logits, &labels, &mask).unwrap();
            let brute = brute_curve(&logits, &labels, &mask);
            assert_eq!(curve.points.len(), brute.len());
            for (p, b) in curve.points.iter().zip(&brute) {
                assert_eq!((p.seen_acc, p.unseen_acc), (b.1, b.2), "seed {seed} bias {}", p.bias);
            }
        }
    }

    #[test]
    fn filtered_pairs_are_never_predicted() {
        let ninf = f64::NEG_INFINITY;
        let logits = vec![vec![0.0, ninf, 1.0], vec![0.5, ninf, ninf]];
        let mask = [true, false, false];
        let curve = bias_sweep(&logits, &[0, 1], &mask).unwrap();
        assert!(curve.points.iter().all(|p| p.unseen_acc == 0.0));
        let brute = brute_curve(&logits, &[0, 1], &mask);
        for (p, b) in curve.points.iter().zip(&brute) {
            assert_eq!((p.seen_acc, p.unseen_acc), (b.1, b.2));
        }
    }

    #[test]
    fn feasibility_conventions() {
        let attr = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let obj = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, -1.0]]).unwrap();
        let seen = [Pair::new(0, 0), Pair::new(1, 1), Pair::new(2, 2)];
        let universe = [Pair::new(0, 0), Pair::new(0, 1), Pair::new(2, 0)];
        let p = feasibility_scores(&attr, &obj, &seen, &universe).unwrap();
        assert_eq!(p[0], 1.0);
        // Object 1 matches object 0 (seen with attr 0); attr 0 matches attr 1
        // (seen with obj 1): both maxima are 1.
        assert!((p[1] - 1.0).abs() < 1e-15);
        // (2, 0): obj 0 vs obj 2 is 0, attr 2 vs attr 0 is 0.
        assert!(p[2].abs() < 1e-15);
        let lonely = feasibility_scores(&attr, &obj, &[Pair::new(0, 0)], &[Pair::new(2, 2)]).unwrap();
        assert_eq!(lonely, vec![-1.0]);
    }

    #[test]
    fn feasibility_matches_double_loop() {
        let mut g = rng::chacha(31, 0);
        let attr = rng::gaussian(&mut g, &[4, 3], 1.0);
        let obj = rng::gaussian(&mut g, &[4, 3], 1.0);
        let seen = [Pair::new(0, 0), Pair::new(1, 1), Pair::new(2, 2), Pair::new(3, 3), Pair::new(0, 2), Pair::new(3, 1)];
        let universe: Vec<Pair> = (0..4).flat_map(|a| (0..4).map(move |o| Pair::new(a, o))).collect();
        let got = feasibility_scores(&attr, &obj, &seen, &universe).unwrap();
        let cos = |t: &Tensor, i: usize, j: usize| {
            let (u, v) = (t.row(i), t.row(j));
            let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            d / (u.iter().map(|x| x * x).sum::<f64>().sqrt() * v.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        for (k, p) in universe.iter().enumerate() {
            if seen.contains(p) {
                assert_eq!(got[k], 1.0);
                continue;
            }
            let mut ro = f64::NEG_INFINITY;
            let mut ra = f64::NEG_INFINITY;
            for s in &seen {
                if s.attr == p.attr {
                    ro = ro.max(cos(&obj, p.obj, s.obj));
                }
                if s.obj == p.obj {
                    ra = ra.max(cos(&attr, p.attr, s.attr));
                }
            }
            assert!((got[k] - (ro + ra) / 2.0).abs() < 1e-14, "{p:?}");
        }
    }

    /// Pairs 0,1 seen; 2 (unseen, feasible 0.9) is the true unseen class of
    /// the unseen samples; 3 (unseen, feasible 0.1) is a distractor that
    /// steals them unless filtered.
    fn distractor_fixture() -> (Vec<Vec<f64>>, Vec<usize>, Vec<bool>, Vec<f64>) {
        let logits = vec![
            vec![3.0, 0.0, 1.0, 2.0],
            vec![0.0, 3.0, 1.0, 2.0],
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 0.0, 2.0, 3.0],
        ];
        (logits, vec![0, 1, 2, 2], vec![true, true, false, false], vec![1.0, 1.0, 0.9, 0.1])
    }

    #[test]
    fn calibration_prefers_filtering_the_distractor() {
        let (logits, labels, mask, feas) = distractor_fixture();
        let c = calibrate_threshold(&logits, &labels, &mask, &feas).unwrap();
        assert_eq!(c.threshold, 0.9);
        assert_eq!(c.harmonic, 1.0);
    }

    #[test]
    fn calibration_tie_goes_to_smallest_threshold() {
        let (logits, labels, mask, _) = distractor_fixture();
        let c = calibrate_threshold(&logits, &labels, &mask, &[1.0, 1.0, 0.4, 0.4]).unwrap();
        assert_eq!(c.threshold, 0.4);
        // All-ones feasibility: filtering at any T ≤ 1 changes nothing.
        let unfiltered = summarize(&bias_sweep(&logits, &labels, &mask).unwrap()).harmonic;
        let c = calibrate_threshold(&logits, &labels, &mask, &[1.0; 4]).unwrap();
        assert_eq!((c.threshold, c.harmonic), (1.0, unfiltered));
        assert!(matches!(
            calibrate_threshold(&logits, &labels, &mask, &[1.0, 1.0, -1.0, -1.0]),
            Err(Error::NoCandidates(_))
        ));
    }

    #[test]
    fn curve_csv_layout() {
        let logits = vec![vec![2.0, 1.0], vec![0.0, 1.0]];
        let curve = bias_sweep(&logits, &[0, 1], &[true, false]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve_csv(&curve, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "bias,seen_acc,unseen_acc\n-inf,1,0\n-1,1,0\n1,1,1\ninf,0,1\n");
    }

    proptest! {
        #[test]
        fn curve_is_monotone_and_shift_invariant(seed in 0u64..500, shift in -8i32..8) {
            let (logits, labels, mask) = dyadic_fixture(seed, 25, 6);
            prop_assume!(labels.iter().any(|&l| mask[l]) && labels.iter().any(|&l| !mask[l]));
            let curve = bias_sweep(&logits, &labels, &mask).unwrap();
            for w in curve.points.windows(2) {
                prop_assert!(w[0].bias < w[1].bias);
                prop_assert!(w[1].seen_acc <= w[0].seen_acc);
                prop_assert!(w[1].unseen_acc >= w[0].unseen_acc);
            }
            let shifted: Vec<Vec<f64>> = logits.iter().map(|r| r.iter().map(|x| x + shift as f64).collect()).collect();
            let again = bias_sweep(&shifted, &labels, &mask).unwrap();
            let acc = |c: &EvalCurve| c.points.iter().map(|p| (p.seen_acc, p.unseen_acc)).collect::<Vec<_>>();
            prop_assert_eq!(acc(&curve), acc(&again));
            let m = summarize(&curve);
            prop_assert!((0.0..=1.0).contains(&m.auc));
            let at = curve.points.iter().find(|p| p.bias == m.best_bias).unwrap();
            prop_assert!(m.harmonic <= 2.0 * at.seen_acc.min(at.unseen_acc) + 1e-15);
            prop_assert!(m.harmonic <= m.seen.max(m.unseen) + 1e-15);
        }
    }
}
