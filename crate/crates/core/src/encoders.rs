//! Frozen feature providers.
//!
//! [`SyntheticImageEncoder`] produces visual token features directly in
//! feature space from per-primitive latent bases. [`FrozenTextEncoder`] maps a
//! sequence of prompt token embeddings to a text feature by mean pooling, a
//! fixed linear projection and `tanh`. Mean pooling makes the text encoder
//! insensitive to token order; this is a known simplification of the stub.
//! Its projection never changes, but gradients flow through it to the input
//! tokens so that soft prompts can be trained.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::{Tensor, Var};
use crate::rng::{self, SplitMix64};

pub use crate::data::format::{load_features, load_features_checked};

/// Visual tokens of one image plus their pooled global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub sample_id: u64,
    /// `n_tokens × d`.
    pub tokens: Tensor,
    /// Length `d`.
    pub pooled: Vec<f64>,
}

impl ImageFeatures {
    /// Pools `tokens` by arithmetic mean over rows.
    pub fn from_tokens(sample_id: u64, tokens: Tensor) -> Result<Self> {
        let (n, d) = tokens.dims2();
        if n == 0 || d == 0 || tokens.rank() != 2 {
            return Err(Error::Shape(format!("token matrix {:?}", tokens.shape())));
        }
        if !tokens.is_finite() {
            return Err(Error::NonFinite("image tokens".into()));
        }
        let mut pooled = vec![0.0; d];
        for t in 0..n {
            for (p, x) in pooled.iter_mut().zip(tokens.row(t)) {
                *p += x;
            }
        }
        for p in &mut pooled {
            *p /= n as f64;
        }
        Ok(Self {
            sample_id,
            tokens,
            pooled,
        })
    }

    /// Uses an externally supplied pooled vector (e.g. a CLS token).
    pub fn with_pooled(sample_id: u64, tokens: Tensor, pooled: Vec<f64>) -> Result<Self> {
        let (_, d) = tokens.dims2();
        if pooled.len() != d {
            return Err(Error::Dimension(format!(
                "pooled length {} vs token width {}",
                pooled.len(),
                d
            )));
        }
        if !tokens.is_finite() || pooled.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("image features".into()));
        }
        Ok(Self {
            sample_id,
            tokens,
            pooled,
        })
    }

    pub fn dim(&self) -> usize {
        self.pooled.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.dims2().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticEncoderConfig {
    pub n_attrs: usize,
    pub n_objs: usize,
    pub d: usize,
    pub d_lat: usize,
    pub n_tokens: usize,
    /// Standard deviation of the attribute and object basis entries.
    pub basis_std: f64,
    pub noise: f64,
    pub seed: u64,
}

// Stream tags for keyed SplitMix64 generators.
const TAG_BASIS: u64 = 0x4241_5345; // "BASE"
const TAG_NOISE: u64 = 0x4E4F_4953; // "NOIS"

/// Deterministic feature-space image generator.
///
/// Token `t` of an image of pair `(a, o)` is
/// `mixing[t] · (attr_basis[a] + obj_basis[o]) + noise · z`, with basis
/// entries drawn from `N(0, basis_std²)`, mixing entries from
/// `N(0, 1/d_lat)` and `z` a
/// standard normal vector drawn from a stream keyed by
/// `(seed, a, o, sample_idx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImageEncoder {
    config: SyntheticEncoderConfig,
    attr_basis: Tensor,
    obj_basis: Tensor,
    mixing: Vec<Tensor>,
}

impl SyntheticImageEncoder {
    pub fn new(config: SyntheticEncoderConfig) -> Result<Self> {
        let c = &config;
        for (name, v) in [
            ("n_attrs", c.n_attrs),
            ("n_objs", c.n_objs),
            ("d", c.d),
            ("d_lat", c.d_lat),
            ("n_tokens", c.n_tokens),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(c.noise >= 0.0 && c.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and >= 0"));
        }
        if !(c.basis_std > 0.0 && c.basis_std.is_finite()) {
            return Err(Error::config("basis_std", "must be finite and positive"));
        }
        let mut g = SplitMix64::keyed(&[c.seed, TAG_BASIS]);
        let mut draw = |rows: usize, cols: usize, scale: f64| {
            let data = (0..rows * cols).map(|_| g.normal() * scale).collect();
            Tensor::matrix(rows, cols, data).expect("sized")
        };
        let attr_basis = draw(c.n_attrs, c.d_lat, c.basis_std);
        let obj_basis = draw(c.n_objs, c.d_lat, c.basis_std);
        let mix_scale = 1.0 / (c.d_lat as f64).sqrt();
        let mixing = (0..c.n_tokens).map(|_| draw(c.d, c.d_lat, mix_scale)).collect();
        Ok(Self {
            config,
            attr_basis,
            obj_basis,
            mixing,
        })
    }

    pub fn config(&self) -> &SyntheticEncoderConfig {
        &self.config
    }

    pub fn encode(&self, attr: usize, obj: usize, sample_idx: u64) -> Result<ImageFeatures> {
        let c = &self.config;
        if attr >= c.n_attrs {
            return Err(Error::IndexOutOfRange {
                what: "attribute",
                index: attr,
                len: c.n_attrs,
            });
        }
        if obj >= c.n_objs {
            return Err(Error::IndexOutOfRange {
                what: "object",
                index: obj,
                len: c.n_objs,
            });
        }
        let latent: Vec<f64> = self
            .attr_basis
            .row(attr)
            .iter()
            .zip(self.obj_basis.row(obj))
            .map(|(x, y)| x + y)
            .collect();
        let mut noise = SplitMix64::keyed(&[c.seed, TAG_NOISE, attr as u64, obj as u64, sample_idx]);
        let mut tokens = Vec::with_capacity(c.n_tokens * c.d);
        for mix in &self.mixing {
            for j in 0..c.d {
                let mut v = 0.0;
                for (m, l) in mix.row(j).iter().zip(&latent) {
                    v += m * l;
                }
                tokens.push(v + c.noise * noise.normal());
            }
        }
        ImageFeatures::from_tokens(sample_idx, Tensor::matrix(c.n_tokens, c.d, tokens)?)
    }

    /// SHA-256 over every generator parameter.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.attr_basis.to_le_bytes());
        h.update(self.obj_basis.to_le_bytes());
        for m in &self.mixing {
            h.update(m.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Mean-pool, fixed projection, `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTextEncoder {
    /// `d × d_tok`, stored output-major.
    projection: Tensor,
    seq_len: usize,
}

impl FrozenTextEncoder {
    /// Projection entries drawn from `N(0, 1/d_tok)`.
    pub fn new(d_tok: usize, d: usize, prefix_len: usize, seed: u64) -> Result<Self> {
        if d_tok == 0 || d == 0 || prefix_len == 0 {
            return Err(Error::config("text encoder", "dimensions must be positive"));
        }
        let mut g = rng::chacha(seed, 0x5445_5854); // "TEXT"
        let projection = rng::gaussian(&mut g, &[d, d_tok], 1.0 / (d_tok as f64).sqrt());
        Ok(Self {
            projection,
            seq_len: prefix_len + 2,
        })
    }

    pub fn from_projection(projection: Tensor, prefix_len: usize) -> Result<Self> {
        if projection.rank() != 2 {
            return Err(Error::Shape("text projection must be a matrix".into()));
        }
        Ok(Self {
            projection,
            seq_len: prefix_len + 2,
        })
    }

    pub fn projection(&self) -> &Tensor {
        &self.projection
    }

    pub fn d_tok(&self) -> usize {
        self.projection.dims2().1
    }

    pub fn d(&self) -> usize {
        self.projection.dims2().0
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn check_seq(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[0] != self.seq_len || shape[1] != self.d_tok() {
            return Err(Error::Shape(format!(
                "text encoder expects {}×{} tokens, got {:?}",
                self.seq_len,
                self.d_tok(),
                shape
            )));
        }
        Ok(())
    }

    /// Plain evaluation of `tanh(projection · mean(tokens))`.
    pub fn encode(&self, tokens: &Tensor) -> Result<Vec<f64>> {
        self.check_seq(tokens.shape())?;
        let (n, c) = tokens.dims2();
        let mut pooled = vec![0.0; c];
        for i in 0..n {
            for (p, x) in pooled.iter_mut().zip(tokens.row(i)) {
                *p += x;
            }
        }
        for p in &mut pooled {
            *p /= n as f64;
        }
        Ok((0..self.d())
            .map(|j| {
                self.projection
                    .row(j)
                    .iter()
                    .zip(&pooled)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    .tanh()
            })
            .collect())
    }

    /// Recorded evaluation. `projection` must be the encoder's projection
    /// placed on the tape as a constant.
    pub fn encode_var<'t>(&self, tokens: Var<'t>, projection: Var<'t>) -> Result<Var<'t>> {
        self.check_seq(&tokens.shape())?;
        debug_assert!(!projection.requires_grad(), "text projection must stay frozen");
        Ok(tokens.mean_rows().reshape(&[1, self.d_tok()]).matmul_t(projection).tanh())
    }

    pub fn param_hash(&self) -> String {
        hex::encode(Sha256::digest(self.projection.to_le_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{check_gradients_masked, Tape};

    fn cfg(noise: f64) -> SyntheticEncoderConfig {
        SyntheticEncoderConfig {
            n_attrs: 3,
            n_objs: 4,
            d: 6,
            d_lat: 5,
            n_tokens: 3,
            basis_std: 1.0,
            noise,
            seed: 42,
        }
    }

    #[test]
    fn noiseless_encoding_is_repeatable() {
        let enc = SyntheticImageEncoder::new(cfg(0.0)).unwrap();
        assert_eq!(enc.encode(1, 2, 0).unwrap(), enc.encode(1, 2, 0).unwrap());
        assert_eq!(enc.encode(1, 2, 0).unwrap().tokens, enc.encode(1, 2, 9).unwrap().tokens);
    }

    #[test]
    fn objects_separate_pooled_vectors() {
        let enc = SyntheticImageEncoder::new(cfg(0.0)).unwrap();
        assert_ne!(enc.encode(0, 0, 0).unwrap().pooled, enc.encode(0, 1, 0).unwrap().pooled);
    }

    #[test]
    fn noisy_encoding_is_pure_function_of_key() {
        let a = SyntheticImageEncoder::new(cfg(0.3)).unwrap();
        let b = SyntheticImageEncoder::new(cfg(0.3)).unwrap();
        assert_eq!(a.encode(2, 3, 7).unwrap(), b.encode(2, 3, 7).unwrap());
        assert_ne!(a.encode(2, 3, 7).unwrap(), a.encode(2, 3, 8).unwrap());
    }

    #[test]
    fn pooled_is_token_mean() {
        let enc = SyntheticImageEncoder::new(cfg(0.2)).unwrap();
        let f = enc.encode(1, 1, 3).unwrap();
        for j in 0..6 {
            let m = (0..3).map(|t| f.tokens.get2(t, j)).sum::<f64>() / 3.0;
            assert!((m - f.pooled[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_primitives_rejected() {
        let enc = SyntheticImageEncoder::new(cfg(0.0)).unwrap();
        assert!(matches!(enc.encode(3, 0, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(enc.encode(0, 4, 0), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn zero_tokens_encode_to_zero() {
        let enc = FrozenTextEncoder::new(4, 5, 3, 1).unwrap();
        let f = enc.encode(&Tensor::zeros(&[5, 4])).unwrap();
        assert!(f.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn token_order_does_not_matter() {
        let enc = FrozenTextEncoder::new(3, 4, 1, 2).unwrap();
        let rows = vec![vec![0.1, 0.2, -0.3], vec![0.5, -0.1, 0.0], vec![-0.4, 0.3, 0.2]];
        let mut perm = rows.clone();
        perm.rotate_left(1);
        let a = enc.encode(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let b = enc.encode(&Tensor::from_rows(&perm).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_sequence_length_rejected() {
        let enc = FrozenTextEncoder::new(3, 4, 3, 2).unwrap();
        assert!(matches!(enc.encode(&Tensor::zeros(&[4, 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn recorded_and_plain_paths_agree() {
        let enc = FrozenTextEncoder::new(3, 4, 2, 5).unwrap();
        let toks = Tensor::from_rows(&[
            vec![0.3, -0.2, 0.9],
            vec![0.1, 0.4, -0.5],
            vec![-0.7, 0.2, 0.05],
            vec![0.6, 0.6, -0.1],
        ])
        .unwrap();
        let tape = Tape::new();
        let v = enc
            .encode_var(tape.var(toks.clone()), tape.constant(enc.projection().clone()))
            .unwrap()
            .value();
        let p = enc.encode(&toks).unwrap();
        for (a, b) in v.data().iter().zip(&p) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_reaches_tokens_through_frozen_projection() {
        let enc = FrozenTextEncoder::new(3, 4, 2, 5).unwrap();
        let toks = Tensor::from_rows(&[
            vec![0.3, -0.2, 0.9],
            vec![0.1, 0.4, -0.5],
            vec![-0.7, 0.2, 0.05],
            vec![0.6, 0.6, -0.1],
        ])
        .unwrap();
        let params = vec![toks, enc.projection().clone()];
        let report = check_gradients_masked(&params, &[true, false], 1e-5, |_, p| {
            let f = enc.encode_var(p[0], p[1]).unwrap();
            f.mul(f).sum()
        })
        .unwrap();
        assert_eq!(report.params.len(), 1);
        assert!(report.params[0].analytic_norm > 0.0);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
