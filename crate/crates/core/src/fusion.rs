//! Pair-space scoring and text-to-visual fusion.
//!
//! All logits are temperature-scaled cosines: both sides are projected into
//! the `d_p`-dimensional pair space, row-normalised and multiplied by a
//! single learnable temperature `τ`. Attribute and object logits are group
//! means of pair logits. Cross-attention uses text features as queries over
//! the visual tokens and adds its output back onto the text features.

use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::numcore::{Bound, ParamId, ParamStore, Tensor, Var};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d: usize,
    /// Pair-space width.
    pub d_p: usize,
    /// Attention width.
    pub d_a: usize,
    pub tau_init: f64,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("d", self.d), ("d_p", self.d_p), ("d_a", self.d_a)] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.tau_init.is_finite() && self.tau_init > 0.0) {
            return Err(Error::config("tau_init", "must be finite and positive"));
        }
        Ok(())
    }
}

/// Four `d_p × d` maps into the shared pair space.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSpaceProjections {
    pub proj_v: ParamId,
    pub proj_t: ParamId,
    pub proj_ret: ParamId,
    pub proj_fuse: ParamId,
}

/// Single-head attention. `W_Q`, `W_K` are `d_a × d`; `W_V` is `d × d` so
/// the output can be added onto the queries' text features.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionBlock {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub d_a: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub config: FusionConfig,
    pub projections: PairSpaceProjections,
    pub attention: CrossAttentionBlock,
    /// Shape `[1]`.
    pub tau: ParamId,
}

const NAMES: [&str; 8] = [
    "fusion.proj_v",
    "fusion.proj_t",
    "fusion.proj_ret",
    "fusion.proj_fuse",
    "fusion.w_q",
    "fusion.w_k",
    "fusion.w_v",
    "fusion.tau",
];

impl Fusion {
    pub fn init(store: &mut ParamStore, config: FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let FusionConfig { d, d_p, d_a, tau_init } = config;
        let mut g = rng::chacha(seed, 0x4655_5345); // "FUSE"
        let std = 1.0 / (d as f64).sqrt();
        let shapes: [&[usize]; 7] = [&[d_p, d], &[d_p, d], &[d_p, d], &[d_p, d], &[d_a, d], &[d_a, d], &[d, d]];
        let mut ids: Vec<ParamId> = NAMES
            .iter()
            .zip(shapes)
            .map(|(name, shape)| store.add(*name, rng::gaussian(&mut g, shape, std), true))
            .collect();
        ids.push(store.add(NAMES[7], Tensor::vector(vec![tau_init]), true));
        Ok(Self::from_ids(config, &ids))
    }

    pub fn attach(store: &ParamStore, config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let ids = NAMES
            .iter()
            .map(|n| {
                store
                    .by_name(n)
                    .ok_or_else(|| Error::Dataset(format!("missing parameter {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_ids(config, &ids))
    }

    fn from_ids(config: FusionConfig, ids: &[ParamId]) -> Self {
        Self {
            config,
            projections: PairSpaceProjections {
                proj_v: ids[0],
                proj_t: ids[1],
                proj_ret: ids[2],
                proj_fuse: ids[3],
            },
            attention: CrossAttentionBlock {
                w_q: ids[4],
                w_k: ids[5],
                w_v: ids[6],
                d_a: config.d_a,
            },
            tau: ids[7],
        }
    }

    /// `1 × K` logits of one image (`f_v`: `1 × d`) against `K` text rows.
    pub fn pair_logits<'t>(&self, bound: &Bound<'t>, f_v: Var<'t>, f_t: Var<'t>) -> Var<'t> {
        let p = &self.projections;
        scaled_cosine(
            f_v.matmul_t(bound.get(p.proj_v)),
            f_t.matmul_t(bound.get(p.proj_t)),
            bound.get(self.tau),
        )
    }

    /// `1 × K` logits of the retrieved-prompt feature against fused rows.
    pub fn retrieval_logits<'t>(&self, bound: &Bound<'t>, f_ret: Var<'t>, fused: Var<'t>) -> Var<'t> {
        let p = &self.projections;
        scaled_cosine(
            f_ret.matmul_t(bound.get(p.proj_ret)),
            fused.matmul_t(bound.get(p.proj_fuse)),
            bound.get(self.tau),
        )
    }

    /// `F_t + softmax(Q Kᵀ/√d_a) V` for text rows `F_t` (`K × d`) and visual
    /// tokens (`n × d`).
    pub fn cross_attention<'t>(&self, bound: &Bound<'t>, f_t: Var<'t>, tokens: Var<'t>) -> Var<'t> {
        f_t.add(self.attend(bound, f_t, tokens))
    }

    /// Attention weights and their output, without the residual.
    pub fn attention_weights<'t>(&self, bound: &Bound<'t>, f_t: Var<'t>, tokens: Var<'t>) -> Var<'t> {
        let a = &self.attention;
        let q = f_t.matmul_t(bound.get(a.w_q));
        let k = tokens.matmul_t(bound.get(a.w_k));
        q.matmul_t(k).scale(1.0 / (a.d_a as f64).sqrt()).softmax_rows()
    }

    fn attend<'t>(&self, bound: &Bound<'t>, f_t: Var<'t>, tokens: Var<'t>) -> Var<'t> {
        let v = tokens.matmul_t(bound.get(self.attention.w_v));
        self.attention_weights(bound, f_t, tokens).matmul(v)
    }

    pub fn tau_value(&self, store: &ParamStore) -> f64 {
        store.value(self.tau).data()[0]
    }
}

fn scaled_cosine<'t>(query: Var<'t>, rows: Var<'t>, tau: Var<'t>) -> Var<'t> {
    query
        .normalize_rows()
        .matmul_t(rows.normalize_rows())
        .scale_by(tau)
}

/// Constant group-mean maps from pair logits to attribute and object logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveGroups {
    /// `K × |A|`.
    attr: Tensor,
    /// `K × |O|`.
    obj: Tensor,
}

impl PrimitiveGroups {
    /// Fails when some attribute or object has no pair in `pairs`.
    pub fn new(pairs: &[Pair], n_attrs: usize, n_objs: usize) -> Result<Self> {
        Ok(Self {
            attr: group_mean_matrix(pairs.iter().map(|p| p.attr), n_attrs, "attribute")?,
            obj: group_mean_matrix(pairs.iter().map(|p| p.obj), n_objs, "object")?,
        })
    }

    /// `(1 × |A|, 1 × |O|)` from `1 × K` pair logits.
    pub fn apply<'t>(&self, pair_logits: Var<'t>) -> (Var<'t>, Var<'t>) {
        let tape = pair_logits.tape();
        (
            pair_logits.matmul(tape.constant(self.attr.clone())),
            pair_logits.matmul(tape.constant(self.obj.clone())),
        )
    }
}

fn group_mean_matrix(keys: impl Iterator<Item = usize>, groups: usize, what: &str) -> Result<Tensor> {
    let keys: Vec<usize> = keys.collect();
    let mut counts = vec![0usize; groups];
    for &k in &keys {
        if k >= groups {
            return Err(Error::IndexOutOfRange {
                what: "primitive",
                index: k,
                len: groups,
            });
        }
        counts[k] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Degenerate(format!("{what} {missing} appears in no pair")));
    }
    let mut m = Tensor::zeros(&[keys.len(), groups]);
    for (row, &k) in keys.iter().enumerate() {
        m.data_mut()[row * groups + k] = 1.0 / counts[k] as f64;
    }
    Ok(m)
}

/// Attribute and object logits as group means of `pair_logits`.
pub fn decompose_attr_obj(
    pair_logits: &[f64],
    pairs: &[Pair],
    n_attrs: usize,
    n_objs: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if pair_logits.len() != pairs.len() {
        return Err(Error::Dimension(format!(
            "{} logits for {} pairs",
            pair_logits.len(),
            pairs.len()
        )));
    }
    let groups = PrimitiveGroups::new(pairs, n_attrs, n_objs)?;
    let row = Tensor::matrix(1, pairs.len(), pair_logits.to_vec())?;
    let project = |m: &Tensor| {
        let (k, g) = m.dims2();
        (0..g)
            .map(|j| (0..k).map(|i| row.data()[i] * m.get2(i, j)).sum())
            .collect::<Vec<f64>>()
    };
    Ok((project(&groups.attr), project(&groups.obj)))
}
