//! VAPS-FEAT feature files and their sibling labels JSON.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic      8 bytes  "VAPSFEAT"
//! version    u32      1
//! d          u32
//! n_tokens   u32
//! count      u64
//! count × {
//!   sample_id  u64
//!   attr       u32
//!   obj        u32
//!   split      u8     0 train, 1 val, 2 test
//!   tokens     n_tokens × d f32, row-major
//!   pooled     d f32
//! }
//! ```
//!
//! Primitive names and the pair splits live in `<stem>.labels.json` next to
//! the feature file (see [`labels_path`]).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CompositionSpace, Dataset, Pair, SampleRecord, Split};
use crate::encoders::ImageFeatures;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 8] = b"VAPSFEAT";
pub const VERSION: u32 = 1;
pub const LABELS_FORMAT: &str = "VAPS-FEAT-LABELS";
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    pub format: String,
    pub version: u32,
    pub attributes: Vec<String>,
    pub objects: Vec<String>,
    pub seen_pairs: Vec<Pair>,
    pub unseen_pairs: Vec<Pair>,
    pub val_pairs: Vec<Pair>,
    pub test_pairs: Vec<Pair>,
}

impl Labels {
    pub fn from_space(space: &CompositionSpace) -> Self {
        Self {
            format: LABELS_FORMAT.to_string(),
            version: VERSION,
            attributes: space.attributes.clone(),
            objects: space.objects.clone(),
            seen_pairs: space.seen_pairs.clone(),
            unseen_pairs: space.unseen_pairs.clone(),
            val_pairs: space.val_pairs.clone(),
            test_pairs: space.test_pairs.clone(),
        }
    }

    pub fn into_space(self) -> CompositionSpace {
        CompositionSpace {
            attributes: self.attributes,
            objects: self.objects,
            seen_pairs: self.seen_pairs,
            unseen_pairs: self.unseen_pairs,
            val_pairs: self.val_pairs,
            test_pairs: self.test_pairs,
        }
    }
}

/// `data/train.vapsfeat` → `data/train.labels.json`.
pub fn labels_path(feature_path: &Path) -> PathBuf {
    feature_path.with_extension("labels.json")
}

/// Encodes a dataset into the binary layout. Features are narrowed to f32.
pub fn encode_features(ds: &Dataset) -> Result<Vec<u8>> {
    let (d, n_tokens) = ds.dims().unwrap_or((0, 0));
    let per_record = 8 + 4 + 4 + 1 + 4 * (n_tokens * d + d);
    let mut buf = Vec::with_capacity(HEADER_LEN + per_record * ds.records.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(n_tokens as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.records.len() as u64).to_le_bytes());
    for r in &ds.records {
        if r.features.dim() != d || r.features.n_tokens() != n_tokens {
            return Err(Error::Dimension(format!(
                "sample {} is {}×{}, file is {}×{}",
                r.sample_id,
                r.features.n_tokens(),
                r.features.dim(),
                n_tokens,
                d
            )));
        }
        buf.extend_from_slice(&r.sample_id.to_le_bytes());
        buf.extend_from_slice(&(r.pair.attr as u32).to_le_bytes());
        buf.extend_from_slice(&(r.pair.obj as u32).to_le_bytes());
        buf.push(r.split.code());
        for &x in r.features.tokens.data().iter().chain(&r.features.pooled) {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

/// Writes the feature file and its labels JSON.
pub fn save_features(path: &Path, ds: &Dataset) -> Result<()> {
    let bytes = encode_features(ds)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    let lp = labels_path(path);
    let json = serde_json::to_vec_pretty(&Labels::from_space(&ds.space))?;
    fs::write(&lp, json).map_err(|e| Error::io(&lp, e))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated payload at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

/// Decodes the binary layout against an already-parsed composition space.
pub fn decode_features(path: &Path, bytes: &[u8], space: CompositionSpace) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(8)? != MAGIC {
        return Err(Error::format(path, "bad magic, not a VAPS-FEAT file"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let d = cur.u32()? as usize;
    let n_tokens = cur.u32()? as usize;
    let count = cur.u64()?;
    if count > 0 && (d == 0 || n_tokens == 0) {
        return Err(Error::format(path, "zero feature dimensions with non-empty payload"));
    }
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let sample_id = cur.u64()?;
        let attr = cur.u32()? as usize;
        let obj = cur.u32()? as usize;
        let code = cur.take(1)?[0];
        let split = Split::from_code(code)
            .ok_or_else(|| Error::format(path, format!("sample {sample_id}: bad split code {code}")))?;
        if attr >= space.n_attrs() || obj >= space.n_objs() {
            return Err(Error::Dataset(format!(
                "sample {sample_id} references unknown primitive ({attr}, {obj})"
            )));
        }
        let tokens = Tensor::matrix(n_tokens, d, cur.f32s(n_tokens * d)?)?;
        let pooled = cur.f32s(d)?;
        let features = ImageFeatures::with_pooled(sample_id, tokens, pooled)?;
        records.push(SampleRecord {
            sample_id,
            pair: Pair::new(attr, obj),
            split,
            features,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after {count} records", bytes.len() - cur.pos),
        ));
    }
    let ds = Dataset { space, records };
    ds.validate()?;
    Ok(ds)
}

pub fn load_labels(path: &Path) -> Result<Labels> {
    let lp = labels_path(path);
    let text = fs::read(&lp).map_err(|e| Error::io(&lp, e))?;
    let labels: Labels = serde_json::from_slice(&text)?;
    if labels.format != LABELS_FORMAT || labels.version != VERSION {
        return Err(Error::format(
            &lp,
            format!("unexpected labels format {} v{}", labels.format, labels.version),
        ));
    }
    Ok(labels)
}

/// Reads a feature file and its sibling labels, validating every record.
pub fn load_features(path: &Path) -> Result<Dataset> {
    let space = load_labels(path)?.into_space();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(path, &bytes, space)
}

/// [`load_features`] plus a check of the header dimensions.
pub fn load_features_checked(path: &Path, d: usize, n_tokens: usize) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= HEADER_LEN && &bytes[..8] == MAGIC {
        let hd = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let ht = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
        if count > 0 && (hd != d || ht != n_tokens) {
            return Err(Error::Dimension(format!(
                "file features are {ht}×{hd}, config expects {n_tokens}×{d}"
            )));
        }
    }
    let space = load_labels(path)?.into_space();
    decode_features(path, &bytes, space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataConfig;
    use proptest::prelude::*;

    fn cfg() -> DataConfig {
        DataConfig {
            n_attrs: 3,
            n_objs: 3,
            samples_per_pair: 2,
            eval_samples_per_pair: 1,
            d: 5,
            d_lat: 3,
            n_tokens: 2,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact_after_narrowing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.vapsfeat");
        let ds = cfg().generate().unwrap();
        save_features(&path, &ds).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back.space, ds.space);
        assert_eq!(back.records.len(), ds.records.len());
        for (a, b) in ds.records.iter().zip(&back.records) {
            for (x, y) in a.features.tokens.data().iter().zip(b.features.tokens.data()) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        let again = dir.path().join("y.vapsfeat");
        save_features(&again, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn hundred_record_round_trip() {
        let ds = DataConfig {
            samples_per_pair: 10,
            eval_samples_per_pair: 0,
            ..cfg()
        }
        .generate()
        .unwrap();
        let narrowed = decode_features(Path::new("mem"), &encode_features(&ds).unwrap(), ds.space.clone()).unwrap();
        let bytes = encode_features(&narrowed).unwrap();
        let back = decode_features(Path::new("mem"), &bytes, ds.space.clone()).unwrap();
        assert!(back.records.len() >= 40);
        assert_eq!(back, narrowed);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.vapsfeat");
        let ds = Dataset {
            space: cfg().generate().unwrap().space,
            records: vec![],
        };
        save_features(&path, &ds).unwrap();
        let back = load_features(&path).unwrap();
        assert!(back.records.is_empty());
        assert_eq!(fs::read(&path).unwrap().len(), HEADER_LEN);
    }

    #[test]
    fn bad_magic_version_and_truncation_are_rejected() {
        let ds = cfg().generate().unwrap();
        let good = encode_features(&ds).unwrap();
        let p = Path::new("mem");

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(p, &bad, ds.space.clone()), Err(Error::Format { .. })));

        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(decode_features(p, &bad, ds.space.clone()), Err(Error::Format { .. })));

        let cut = &good[..good.len() - 3];
        let err = decode_features(p, cut, ds.space.clone()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn unknown_primitive_is_rejected() {
        let ds = cfg().generate().unwrap();
        let mut bytes = encode_features(&ds).unwrap();
        // attr field of the first record
        bytes[HEADER_LEN + 8..HEADER_LEN + 12].copy_from_slice(&77u32.to_le_bytes());
        assert!(matches!(
            decode_features(Path::new("mem"), &bytes, ds.space.clone()),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.vapsfeat");
        save_features(&path, &cfg().generate().unwrap()).unwrap();
        assert!(load_features_checked(&path, 5, 2).is_ok());
        assert!(matches!(load_features_checked(&path, 32, 2), Err(Error::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn encode_decode_is_identity_on_f32_data(
            d in 1usize..6, n_tokens in 1usize..4, spp in 1usize..3, seed in 0u64..1000,
        ) {
            let ds = DataConfig { d, n_tokens, samples_per_pair: spp, seed, ..cfg() }.generate().unwrap();
            let p = Path::new("mem");
            let once = decode_features(p, &encode_features(&ds).unwrap(), ds.space.clone()).unwrap();
            let bytes = encode_features(&once).unwrap();
            let twice = decode_features(p, &bytes, ds.space.clone()).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(encode_features(&twice).unwrap(), bytes);
        }
    }
}
