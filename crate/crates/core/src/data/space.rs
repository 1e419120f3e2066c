//! Attribute/object vocabularies and the seen/unseen pair split.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// An (attribute, object) composition, by vocabulary index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Pair {
    pub attr: usize,
    pub obj: usize,
}

impl Pair {
    pub fn new(attr: usize, obj: usize) -> Self {
        Self { attr, obj }
    }
}

impl From<[usize; 2]> for Pair {
    fn from([attr, obj]: [usize; 2]) -> Self {
        Self { attr, obj }
    }
}

impl From<Pair> for [usize; 2] {
    fn from(p: Pair) -> Self {
        [p.attr, p.obj]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldMode {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionSpace {
    pub attributes: Vec<String>,
    pub objects: Vec<String>,
    pub seen_pairs: Vec<Pair>,
    pub unseen_pairs: Vec<Pair>,
    /// Closed-world validation universe: seen pairs plus validation unseen pairs.
    pub val_pairs: Vec<Pair>,
    /// Closed-world test universe: seen pairs plus test unseen pairs.
    pub test_pairs: Vec<Pair>,
}

impl CompositionSpace {
    pub fn n_attrs(&self) -> usize {
        self.attributes.len()
    }

    pub fn n_objs(&self) -> usize {
        self.objects.len()
    }

    /// The full product A×O, attribute-major.
    pub fn all_pairs(&self) -> Vec<Pair> {
        (0..self.n_attrs())
            .flat_map(|a| (0..self.n_objs()).map(move |o| Pair::new(a, o)))
            .collect()
    }

    pub fn is_seen(&self, p: Pair) -> bool {
        self.seen_pairs.binary_search(&p).is_ok()
    }

    pub fn seen_index(&self, p: Pair) -> Option<usize> {
        self.seen_pairs.binary_search(&p).ok()
    }

    /// Candidate universe for evaluation on a split.
    pub fn eval_pairs(&self, split: super::Split, mode: WorldMode) -> Vec<Pair> {
        match (mode, split) {
            (WorldMode::Open, _) => self.all_pairs(),
            (WorldMode::Closed, super::Split::Val) => self.val_pairs.clone(),
            (WorldMode::Closed, _) => self.test_pairs.clone(),
        }
    }

    pub fn seen_mask(&self, pairs: &[Pair]) -> Vec<bool> {
        pairs.iter().map(|p| self.is_seen(*p)).collect()
    }

    /// Checks disjointness, range, closed-world containment and coverage.
    pub fn validate(&self) -> Result<()> {
        let (na, no) = (self.n_attrs(), self.n_objs());
        if na == 0 || no == 0 {
            return Err(Error::Dataset("empty attribute or object vocabulary".into()));
        }
        let check_sorted = |name: &str, ps: &[Pair]| -> Result<()> {
            for p in ps {
                if p.attr >= na || p.obj >= no {
                    return Err(Error::Dataset(format!(
                        "{name} references unknown primitive ({}, {})",
                        p.attr, p.obj
                    )));
                }
            }
            if ps.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Dataset(format!("{name} must be sorted and unique")));
            }
            Ok(())
        };
        check_sorted("seen_pairs", &self.seen_pairs)?;
        check_sorted("unseen_pairs", &self.unseen_pairs)?;
        check_sorted("val_pairs", &self.val_pairs)?;
        check_sorted("test_pairs", &self.test_pairs)?;
        if self.seen_pairs.is_empty() {
            return Err(Error::Dataset("no seen pairs".into()));
        }
        let seen: HashSet<Pair> = self.seen_pairs.iter().copied().collect();
        if self.unseen_pairs.iter().any(|p| seen.contains(p)) {
            return Err(Error::Dataset("seen and unseen pairs overlap".into()));
        }
        let known: HashSet<Pair> = seen.iter().chain(&self.unseen_pairs).copied().collect();
        for (name, ps) in [("val_pairs", &self.val_pairs), ("test_pairs", &self.test_pairs)] {
            if ps.iter().any(|p| !known.contains(p)) {
                return Err(Error::Dataset(format!("{name} not within seen ∪ unseen")));
            }
        }
        let attrs: HashSet<usize> = self.seen_pairs.iter().map(|p| p.attr).collect();
        let objs: HashSet<usize> = self.seen_pairs.iter().map(|p| p.obj).collect();
        if attrs.len() != na || objs.len() != no {
            return Err(Error::Dataset(
                "every attribute and object must appear in a seen pair".into(),
            ));
        }
        Ok(())
    }
}

const TAG_SPLIT: u64 = 0x5350_4C54; // "SPLT"
const MAX_SPLIT_ATTEMPTS: u64 = 1000;

/// Outcome of [`split_pairs`]; `warning` is set for degenerate but allowed splits.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub space: CompositionSpace,
    pub warning: Option<String>,
}

/// Randomly divides A×O into seen and unseen pairs so that every primitive
/// is covered by a seen pair, then splits the unseen pairs between the
/// validation and test universes.
///
/// Each attempt shuffles the attribute-major pair list with Fisher-Yates
/// driven by `SplitMix64::keyed([seed, "SPLT", attempt])` and takes the
/// first `round(seen_fraction · |A×O|)` pairs as seen. The first
/// `round(val_fraction · |C_u|)` remaining pairs in shuffled order go to
/// validation.
pub fn split_pairs(
    attributes: Vec<String>,
    objects: Vec<String>,
    seen_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitOutcome> {
    if !(seen_fraction > 0.0 && seen_fraction <= 1.0) {
        return Err(Error::config("seen_fraction", "must be in (0, 1]"));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::config("val_fraction", "must be in [0, 1)"));
    }
    let (na, no) = (attributes.len(), objects.len());
    if na == 0 || no == 0 {
        return Err(Error::config("n_attrs/n_objs", "vocabularies must be non-empty"));
    }
    let total = na * no;
    let n_seen = (seen_fraction * total as f64).round() as usize;
    if n_seen < na.max(no) {
        return Err(Error::config(
            "seen_fraction",
            format!("{n_seen} seen pairs cannot cover {na} attributes and {no} objects"),
        ));
    }
    let base: Vec<Pair> = (0..na)
        .flat_map(|a| (0..no).map(move |o| Pair::new(a, o)))
        .collect();
    for attempt in 0..MAX_SPLIT_ATTEMPTS {
        let mut g = SplitMix64::keyed(&[seed, TAG_SPLIT, attempt]);
        let mut order = base.clone();
        for i in (1..order.len()).rev() {
            let j = g.below(i as u64 + 1) as usize;
            order.swap(i, j);
        }
        let seen = &order[..n_seen];
        let attrs: HashSet<usize> = seen.iter().map(|p| p.attr).collect();
        let objs: HashSet<usize> = seen.iter().map(|p| p.obj).collect();
        if attrs.len() != na || objs.len() != no {
            continue;
        }
        let unseen = &order[n_seen..];
        let n_val = (val_fraction * unseen.len() as f64).round() as usize;
        let sorted = |ps: &[Pair]| {
            let mut v = ps.to_vec();
            v.sort();
            v
        };
        let seen_pairs = sorted(seen);
        let val_pairs = sorted(&[seen, &unseen[..n_val]].concat());
        let test_pairs = sorted(&[seen, &unseen[n_val..]].concat());
        let space = CompositionSpace {
            attributes,
            objects,
            seen_pairs,
            unseen_pairs: sorted(unseen),
            val_pairs,
            test_pairs,
        };
        let warning = space
            .unseen_pairs
            .is_empty()
            .then(|| "no unseen pairs: zero-shot metrics will be undefined".to_string());
        return Ok(SplitOutcome { space, warning });
    }
    Err(Error::config(
        "seen_fraction",
        format!("no covering split found in {MAX_SPLIT_ATTEMPTS} attempts"),
    ))
}

pub fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(sf: f64, vf: f64, seed: u64) -> Result<SplitOutcome> {
        split_pairs(default_names("a", 8), default_names("o", 10), sf, vf, seed)
    }

    #[test]
    fn default_split_has_48_seen_and_full_coverage() {
        let s = split(0.6, 0.5, 3).unwrap().space;
        assert_eq!(s.seen_pairs.len(), 48);
        assert_eq!(s.unseen_pairs.len(), 32);
        for a in 0..8 {
            assert!(s.seen_pairs.iter().any(|p| p.attr == a));
        }
        for o in 0..10 {
            assert!(s.seen_pairs.iter().any(|p| p.obj == o));
        }
        s.validate().unwrap();
        assert_eq!(s.val_pairs.len() + s.test_pairs.len(), 48 * 2 + 32);
    }

    #[test]
    fn split_is_deterministic() {
        assert_eq!(split(0.6, 0.5, 9).unwrap().space, split(0.6, 0.5, 9).unwrap().space);
        assert_ne!(split(0.6, 0.5, 9).unwrap().space, split(0.6, 0.5, 10).unwrap().space);
    }

    #[test]
    fn full_seen_fraction_warns() {
        let out = split(1.0, 0.0, 1).unwrap();
        assert!(out.space.unseen_pairs.is_empty());
        assert!(out.warning.is_some());
    }

    #[test]
    fn uncoverable_fraction_is_rejected() {
        let err = split(0.05, 0.5, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { ref field, .. } if field == "seen_fraction"));
        assert!(split(0.0, 0.5, 1).is_err());
        assert!(split(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn validate_catches_overlap() {
        let mut s = split(0.6, 0.5, 3).unwrap().space;
        s.unseen_pairs.push(s.seen_pairs[0]);
        s.unseen_pairs.sort();
        assert!(s.validate().is_err());
    }
}
