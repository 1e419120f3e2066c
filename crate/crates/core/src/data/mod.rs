//! Composition spaces, synthetic compositional datasets and on-disk formats.

pub mod format;
mod space;

use serde::{Deserialize, Serialize};

pub use format::{labels_path, save_features, Labels};
pub use space::{default_names, split_pairs, CompositionSpace, Pair, SplitOutcome, WorldMode};

use crate::encoders::{ImageFeatures, SyntheticEncoderConfig, SyntheticImageEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub pair: Pair,
    pub split: Split,
    pub features: ImageFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub space: CompositionSpace,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// `(d, n_tokens)` of the stored features, if any records exist.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.records
            .first()
            .map(|r| (r.features.dim(), r.features.n_tokens()))
    }

    /// Space invariants plus per-record label checks; train samples must
    /// come from seen pairs only.
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        let dims = self.dims();
        for r in &self.records {
            if r.pair.attr >= self.space.n_attrs() || r.pair.obj >= self.space.n_objs() {
                return Err(Error::Dataset(format!(
                    "sample {} references unknown primitive ({}, {})",
                    r.sample_id, r.pair.attr, r.pair.obj
                )));
            }
            let allowed = match r.split {
                Split::Train => self.space.is_seen(r.pair),
                Split::Val => self.space.val_pairs.binary_search(&r.pair).is_ok(),
                Split::Test => self.space.test_pairs.binary_search(&r.pair).is_ok(),
            };
            if !allowed {
                return Err(Error::Dataset(format!(
                    "sample {} of split {:?} has pair ({}, {}) outside its universe",
                    r.sample_id, r.split, r.pair.attr, r.pair.obj
                )));
            }
            if Some((r.features.dim(), r.features.n_tokens())) != dims {
                return Err(Error::Dimension(format!(
                    "sample {} has inconsistent feature dimensions",
                    r.sample_id
                )));
            }
        }
        Ok(())
    }
}

/// Synthetic dataset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_attrs: usize,
    pub n_objs: usize,
    pub seen_fraction: f64,
    /// Fraction of unseen pairs reserved for the validation universe.
    pub val_fraction: f64,
    pub samples_per_pair: usize,
    pub eval_samples_per_pair: usize,
    pub noise: f64,
    pub d: usize,
    pub d_lat: usize,
    pub n_tokens: usize,
    /// Scale of the attribute and object bases relative to unit-variance
    /// noise draws.
    pub basis_std: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_attrs: 8,
            n_objs: 10,
            seen_fraction: 0.6,
            val_fraction: 0.5,
            samples_per_pair: 20,
            eval_samples_per_pair: 10,
            noise: 0.1,
            d: 32,
            d_lat: 16,
            n_tokens: 8,
            basis_std: 0.07,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_attrs", self.n_attrs),
            ("n_objs", self.n_objs),
            ("d", self.d),
            ("d_lat", self.d_lat),
            ("n_tokens", self.n_tokens),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.samples_per_pair == 0 {
            return Err(Error::config("samples_per_pair", "train set would be empty"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and >= 0"));
        }
        if !(self.basis_std > 0.0 && self.basis_std.is_finite()) {
            return Err(Error::config("basis_std", "must be finite and positive"));
        }
        if !(self.seen_fraction > 0.0 && self.seen_fraction <= 1.0) {
            return Err(Error::config("seen_fraction", "must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> SyntheticEncoderConfig {
        SyntheticEncoderConfig {
            n_attrs: self.n_attrs,
            n_objs: self.n_objs,
            d: self.d,
            d_lat: self.d_lat,
            n_tokens: self.n_tokens,
            basis_std: self.basis_std,
            noise: self.noise,
            seed: self.seed,
        }
    }

    pub fn encoder(&self) -> Result<SyntheticImageEncoder> {
        SyntheticImageEncoder::new(self.encoder_config())
    }

    pub fn split(&self) -> Result<SplitOutcome> {
        split_pairs(
            default_names("attr", self.n_attrs),
            default_names("obj", self.n_objs),
            self.seen_fraction,
            self.val_fraction,
            self.seed,
        )
    }

    /// Splits the pair space and renders every sample.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let space = self.split()?.space;
        let encoder = self.encoder()?;
        generate_synthetic(&space, &encoder, self.samples_per_pair, self.eval_samples_per_pair)
    }
}

/// Renders `samples_per_pair` train images for each seen pair, then
/// `eval_samples_per_pair` images for each validation pair and each test
/// pair. Image indices per pair are disjoint across splits: train uses
/// `0..s`, validation `s..s+e`, test `s+e..s+2e`. Sample ids count up from 0
/// in that order.
pub fn generate_synthetic(
    space: &CompositionSpace,
    encoder: &SyntheticImageEncoder,
    samples_per_pair: usize,
    eval_samples_per_pair: usize,
) -> Result<Dataset> {
    space.validate()?;
    if samples_per_pair == 0 {
        return Err(Error::config("samples_per_pair", "train set would be empty"));
    }
    let ec = encoder.config();
    if ec.n_attrs != space.n_attrs() || ec.n_objs != space.n_objs() {
        return Err(Error::Dimension("encoder vocabulary differs from space".into()));
    }
    let (s, e) = (samples_per_pair as u64, eval_samples_per_pair as u64);
    let plan: [(Split, &[Pair], u64, u64); 3] = [
        (Split::Train, &space.seen_pairs, 0, s),
        (Split::Val, &space.val_pairs, s, e),
        (Split::Test, &space.test_pairs, s + e, e),
    ];
    let mut records = Vec::new();
    let mut next_id = 0u64;
    for (split, pairs, offset, count) in plan {
        for &pair in pairs {
            for k in 0..count {
                let mut features = encoder.encode(pair.attr, pair.obj, offset + k)?;
                features.sample_id = next_id;
                records.push(SampleRecord {
                    sample_id: next_id,
                    pair,
                    split,
                    features,
                });
                next_id += 1;
            }
        }
    }
    Ok(Dataset {
        space: space.clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            n_attrs: 3,
            n_objs: 4,
            samples_per_pair: 2,
            eval_samples_per_pair: 1,
            d: 6,
            d_lat: 4,
            n_tokens: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_samples_per_pair_is_rejected() {
        let cfg = DataConfig {
            samples_per_pair: 0,
            ..small()
        };
        assert!(matches!(cfg.generate(), Err(Error::InvalidConfig { ref field, .. }) if field == "samples_per_pair"));
    }

    #[test]
    fn noiseless_samples_of_a_pair_coincide() {
        let ds = DataConfig { noise: 0.0, ..small() }.generate().unwrap();
        let p = ds.space.seen_pairs[0];
        let feats: Vec<_> = ds.split(Split::Train).filter(|r| r.pair == p).map(|r| &r.features.tokens).collect();
        assert_eq!(feats.len(), 2);
        assert_eq!(feats[0], feats[1]);
    }

    #[test]
    fn generated_dataset_is_valid_and_sized() {
        let cfg = small();
        let ds = cfg.generate().unwrap();
        ds.validate().unwrap();
        let sp = &ds.space;
        assert_eq!(ds.count(Split::Train), sp.seen_pairs.len() * 2);
        assert_eq!(ds.count(Split::Val), sp.val_pairs.len());
        assert_eq!(ds.count(Split::Test), sp.test_pairs.len());
        assert!(ds.split(Split::Train).all(|r| sp.is_seen(r.pair)));
        let ids: Vec<u64> = ds.records.iter().map(|r| r.sample_id).collect();
        assert_eq!(ids, (0..ds.records.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn train_sample_from_unseen_pair_fails_validation() {
        let mut ds = small().generate().unwrap();
        let unseen = ds.space.unseen_pairs[0];
        ds.records[0].pair = unseen;
        assert!(ds.validate().is_err());
    }
}
