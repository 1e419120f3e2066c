//! Learnable text-side prompts.
//!
//! A pair prompt is the token sequence
//! `[θ'_0 … θ'_p, attr_table[a], obj_table[o]]`, where the prefix
//! `θ'_i = θ_i + φ_i(f_v)` is shifted per image by the prompt adapter
//! `φ(f_v) = W_2·ReLU(W_1·f_v + b_1) + b_2`.
//!
//! Because the stub text encoder mean-pools its input, the text feature of
//! every candidate pair for one image can be computed from two pieces: the
//! projection of `attr_table[a] + obj_table[o]` (shared across images) and
//! the projection of the summed shifted prefix (shared across pairs). The
//! recorded batch path in [`SoftPrompt::encode_pairs_var`] relies on this
//! and is tested against the per-pair loop in [`encode_all_pairs`].

use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::encoders::FrozenTextEncoder;
use crate::error::{Error, Result};
use crate::numcore::{Bound, ParamId, ParamStore, Tensor, Var};
use crate::rng;

pub const PREFIX_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterMode {
    /// One bias per prefix token.
    PerToken,
    /// One bias added to every prefix token.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftPromptConfig {
    pub n_attrs: usize,
    pub n_objs: usize,
    /// Visual feature width.
    pub d: usize,
    pub d_tok: usize,
    /// Number of prefix tokens `p + 1`.
    pub prefix_len: usize,
    pub adapter_hidden: usize,
    pub adapter_mode: AdapterMode,
    pub train_tables: bool,
}

impl SoftPromptConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_attrs", self.n_attrs),
            ("n_objs", self.n_objs),
            ("d", self.d),
            ("d_tok", self.d_tok),
            ("prefix_len", self.prefix_len),
            ("adapter_hidden", self.adapter_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn adapter_out(&self) -> usize {
        match self.adapter_mode {
            AdapterMode::PerToken => self.prefix_len * self.d_tok,
            AdapterMode::Shared => self.d_tok,
        }
    }

    /// Length of a full pair prompt.
    pub fn seq_len(&self) -> usize {
        self.prefix_len + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrompt {
    pub config: SoftPromptConfig,
    /// `(p+1) × d_tok`.
    pub prefix: ParamId,
    pub attr_table: ParamId,
    pub obj_table: ParamId,
    pub adapter: PromptAdapter,
}

/// `W_1` is stored `h × d` and `W_2` is `out × h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptAdapter {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

const NAMES: [&str; 7] = [
    "prompt.prefix",
    "prompt.attr_table",
    "prompt.obj_table",
    "adapter.w1",
    "adapter.b1",
    "adapter.w2",
    "adapter.b2",
];

impl SoftPrompt {
    /// Prefix and tables from `N(0, 0.02²)`; adapter weights with std
    /// `1/√fan_in` and zero biases.
    pub fn init(store: &mut ParamStore, config: SoftPromptConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut g = rng::chacha(seed, 0x5052_4F4D); // "PROM"
        let c = config;
        let h = c.adapter_hidden;
        let values = [
            rng::gaussian(&mut g, &[c.prefix_len, c.d_tok], PREFIX_INIT_STD),
            rng::gaussian(&mut g, &[c.n_attrs, c.d_tok], PREFIX_INIT_STD),
            rng::gaussian(&mut g, &[c.n_objs, c.d_tok], PREFIX_INIT_STD),
            rng::gaussian(&mut g, &[h, c.d], 1.0 / (c.d as f64).sqrt()),
            Tensor::zeros(&[h]),
            rng::gaussian(&mut g, &[c.adapter_out(), h], 1.0 / (h as f64).sqrt()),
            Tensor::zeros(&[c.adapter_out()]),
        ];
        let ids: Vec<ParamId> = NAMES
            .iter()
            .zip(values)
            .map(|(name, v)| {
                let table = name.ends_with("_table");
                store.add(*name, v, !table || c.train_tables)
            })
            .collect();
        Ok(Self::from_ids(config, &ids))
    }

    pub fn attach(store: &ParamStore, config: SoftPromptConfig) -> Result<Self> {
        config.validate()?;
        let ids = NAMES
            .iter()
            .map(|n| {
                store
                    .by_name(n)
                    .ok_or_else(|| Error::Dataset(format!("missing parameter {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let this = Self::from_ids(config, &ids);
        let c = config;
        let expected: [&[usize]; 7] = [
            &[c.prefix_len, c.d_tok],
            &[c.n_attrs, c.d_tok],
            &[c.n_objs, c.d_tok],
            &[c.adapter_hidden, c.d],
            &[c.adapter_hidden],
            &[c.adapter_out(), c.adapter_hidden],
            &[c.adapter_out()],
        ];
        for ((id, want), name) in ids.iter().zip(expected).zip(NAMES) {
            if store.value(*id).shape() != want {
                return Err(Error::Shape(format!(
                    "{name}: stored {:?}, config implies {want:?}",
                    store.value(*id).shape()
                )));
            }
        }
        Ok(this)
    }

    fn from_ids(config: SoftPromptConfig, ids: &[ParamId]) -> Self {
        Self {
            config,
            prefix: ids[0],
            attr_table: ids[1],
            obj_table: ids[2],
            adapter: PromptAdapter {
                w1: ids[3],
                b1: ids[4],
                w2: ids[5],
                b2: ids[6],
            },
        }
    }

    pub fn adapter_params(&self) -> [ParamId; 4] {
        let a = &self.adapter;
        [a.w1, a.b1, a.w2, a.b2]
    }

    /// `φ(f_v)` shaped `(p+1) × d_tok` (per-token) or `1 × d_tok` (shared).
    pub fn adapter_forward(&self, store: &ParamStore, f_v: &[f64]) -> Result<Tensor> {
        let c = &self.config;
        if f_v.len() != c.d {
            return Err(Error::Dimension(format!("f_v length {} vs d = {}", f_v.len(), c.d)));
        }
        let (w1, b1) = (store.value(self.adapter.w1), store.value(self.adapter.b1));
        let (w2, b2) = (store.value(self.adapter.w2), store.value(self.adapter.b2));
        let hidden: Vec<f64> = (0..c.adapter_hidden)
            .map(|i| {
                let z: f64 = w1.row(i).iter().zip(f_v).map(|(w, x)| w * x).sum::<f64>() + b1.data()[i];
                z.max(0.0)
            })
            .collect();
        let out: Vec<f64> = (0..c.adapter_out())
            .map(|k| w2.row(k).iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b2.data()[k])
            .collect();
        let rows = match c.adapter_mode {
            AdapterMode::PerToken => c.prefix_len,
            AdapterMode::Shared => 1,
        };
        Tensor::matrix(rows, c.d_tok, out)
    }

    /// Recorded adapter over a batch of pooled features (`B × d`), giving
    /// `B × out`.
    pub fn adapter_var<'t>(&self, bound: &Bound<'t>, f_v: Var<'t>) -> Var<'t> {
        let a = &self.adapter;
        f_v.matmul_t(bound.get(a.w1))
            .add_row(bound.get(a.b1))
            .relu()
            .matmul_t(bound.get(a.w2))
            .add_row(bound.get(a.b2))
    }

    /// `[θ'_0 … θ'_p, attr_table[a], obj_table[o]]`.
    pub fn build_pair_prompt(&self, store: &ParamStore, shifted: &Tensor, attr: usize, obj: usize) -> Result<Tensor> {
        let c = &self.config;
        if shifted.shape() != [c.prefix_len, c.d_tok] {
            return Err(Error::Shape(format!(
                "shifted prefix {:?}, expected [{}, {}]",
                shifted.shape(),
                c.prefix_len,
                c.d_tok
            )));
        }
        for (what, index, len) in [("attribute", attr, c.n_attrs), ("object", obj, c.n_objs)] {
            if index >= len {
                return Err(Error::IndexOutOfRange { what, index, len });
            }
        }
        let mut data = shifted.data().to_vec();
        data.extend_from_slice(store.value(self.attr_table).row(attr));
        data.extend_from_slice(store.value(self.obj_table).row(obj));
        Tensor::matrix(c.seq_len(), c.d_tok, data)
    }

    /// Summed projection input of each pair's primitive tokens, `K × d_tok`.
    pub fn pair_tokens_var<'t>(&self, bound: &Bound<'t>, pairs: &[Pair]) -> Var<'t> {
        let attrs: Vec<usize> = pairs.iter().map(|p| p.attr).collect();
        let objs: Vec<usize> = pairs.iter().map(|p| p.obj).collect();
        bound
            .get(self.attr_table)
            .gather_rows(&attrs)
            .add(bound.get(self.obj_table).gather_rows(&objs))
    }

    /// Summed shifted prefix per image, `B × d_tok`, from adapter output
    /// `phi` (`B × out`). Without an adapter pass `None`; the result is then
    /// the `1 × d_tok` static prefix sum.
    pub fn prefix_sum_var<'t>(&self, bound: &Bound<'t>, phi: Option<Var<'t>>) -> Var<'t> {
        let c = &self.config;
        let base = bound.get(self.prefix).sum_rows();
        let Some(phi) = phi else {
            return base.reshape(&[1, c.d_tok]);
        };
        let summed = match c.adapter_mode {
            AdapterMode::PerToken => {
                // Stacked identities fold the per-token chunks of each row.
                let mut fold = Tensor::zeros(&[c.prefix_len * c.d_tok, c.d_tok]);
                for t in 0..c.prefix_len {
                    for j in 0..c.d_tok {
                        fold.data_mut()[(t * c.d_tok + j) * c.d_tok + j] = 1.0;
                    }
                }
                phi.matmul(phi.tape().constant(fold))
            }
            AdapterMode::Shared => phi.scale(c.prefix_len as f64),
        };
        summed.add_row(base)
    }

    /// Text features of all pairs for one image: `tanh((T + s)·Wᵀ / L)` where
    /// `T` holds the pair tokens, `s` the image's prefix sum (`1 × d_tok`)
    /// and `L` the sequence length.
    pub fn encode_pairs_var<'t>(&self, pair_proj: Var<'t>, prefix_sum: Var<'t>, projection: Var<'t>) -> Var<'t> {
        pair_proj
            .add_row(prefix_sum.matmul_t(projection))
            .scale(1.0 / self.config.seq_len() as f64)
            .tanh()
    }
}

/// `θ' = θ + φ`; a shared `1 × d_tok` bias is added to every row.
pub fn shift_prefix(prefix: &Tensor, phi: &Tensor) -> Result<Tensor> {
    let (p, d) = prefix.dims2();
    let (r, c) = phi.dims2();
    if c != d || (r != p && r != 1) {
        return Err(Error::Shape(format!(
            "bias {:?} does not fit prefix {:?}",
            phi.shape(),
            prefix.shape()
        )));
    }
    let mut out = prefix.clone();
    for i in 0..p {
        let bias = phi.row(if r == 1 { 0 } else { i });
        for (x, b) in out.data_mut()[i * d..(i + 1) * d].iter_mut().zip(bias) {
            *x += b;
        }
    }
    Ok(out)
}

/// One text feature row per pair, each encoded independently.
pub fn encode_all_pairs(
    prompt: &SoftPrompt,
    store: &ParamStore,
    encoder: &FrozenTextEncoder,
    shifted: &Tensor,
    pairs: &[Pair],
) -> Result<Tensor> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("pairs"));
    }
    let rows = pairs
        .iter()
        .map(|p| encoder.encode(&prompt.build_pair_prompt(store, shifted, p.attr, p.obj)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{check_gradients, Tape};

    fn cfg(mode: AdapterMode) -> SoftPromptConfig {
        SoftPromptConfig {
            n_attrs: 3,
            n_objs: 4,
            d: 6,
            d_tok: 5,
            prefix_len: 3,
            adapter_hidden: 3,
            adapter_mode: mode,
            train_tables: true,
        }
    }

    fn setup(mode: AdapterMode) -> (ParamStore, SoftPrompt) {
        let mut store = ParamStore::new();
        let sp = SoftPrompt::init(&mut store, cfg(mode), 17).unwrap();
        (store, sp)
    }

    fn fv() -> Vec<f64> {
        vec![0.5, -1.0, 0.25, 2.0, -0.75, 1.5]
    }

    #[test]
    fn zero_adapter_gives_zero_bias() {
        let (mut store, sp) = setup(AdapterMode::PerToken);
        for id in sp.adapter_params() {
            store.get_mut(id).value.data_mut().fill(0.0);
        }
        let phi = sp.adapter_forward(&store, &fv()).unwrap();
        assert_eq!(phi.shape(), &[3, 5]);
        assert!(phi.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn constant_path_ignores_input() {
        let (mut store, sp) = setup(AdapterMode::Shared);
        store.get_mut(sp.adapter.w2).value.data_mut().fill(0.0);
        store.get_mut(sp.adapter.b2).value.data_mut().fill(0.7);
        let a = sp.adapter_forward(&store, &fv()).unwrap();
        let b = sp.adapter_forward(&store, &[9.0; 6]).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|x| *x == 0.7));
    }

    #[test]
    fn adapter_matches_hand_arithmetic() {
        let (mut store, sp) = setup(AdapterMode::PerToken);
        let mut g = rng::chacha(2, 0);
        store.get_mut(sp.adapter.b1).value = rng::gaussian(&mut g, &[3], 1.0);
        store.get_mut(sp.adapter.b2).value = rng::gaussian(&mut g, &[15], 1.0);
        let (w1, b1) = (store.value(sp.adapter.w1).clone(), store.value(sp.adapter.b1).clone());
        let (w2, b2) = (store.value(sp.adapter.w2).clone(), store.value(sp.adapter.b2).clone());
        let x = fv();
        let mut h = [0.0; 3];
        for (i, hi) in h.iter_mut().enumerate() {
            let mut z = b1.data()[i];
            for (j, xj) in x.iter().enumerate() {
                z += w1.get2(i, j) * xj;
            }
            *hi = if z > 0.0 { z } else { 0.0 };
        }
        let got = sp.adapter_forward(&store, &x).unwrap();
        for k in 0..15 {
            let mut o = b2.data()[k];
            for (i, hi) in h.iter().enumerate() {
                o += w2.get2(k, i) * hi;
            }
            assert!((got.data()[k] - o).abs() < 1e-14);
        }
        assert!(matches!(sp.adapter_forward(&store, &[1.0; 5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn shift_semantics() {
        let prefix = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(shift_prefix(&prefix, &Tensor::zeros(&[3, 2])).unwrap(), prefix);
        let shared = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let s = shift_prefix(&prefix, &shared).unwrap();
        assert_eq!(s.data(), &[1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
        assert_eq!(prefix.data()[0], 1.0);
        assert!(shift_prefix(&prefix, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn different_images_give_different_prefixes() {
        let (store, sp) = setup(AdapterMode::PerToken);
        let prefix = store.value(sp.prefix);
        let a = shift_prefix(prefix, &sp.adapter_forward(&store, &fv()).unwrap()).unwrap();
        let other: Vec<f64> = fv().iter().rev().copied().collect();
        let b = shift_prefix(prefix, &sp.adapter_forward(&store, &other).unwrap()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn pair_prompt_layout() {
        let (store, sp) = setup(AdapterMode::PerToken);
        let shifted = store.value(sp.prefix).clone();
        let seq = sp.build_pair_prompt(&store, &shifted, 1, 2).unwrap();
        assert_eq!(seq.shape(), &[5, 5]);
        assert_eq!(seq.row(3), store.value(sp.attr_table).row(1));
        assert_eq!(seq.row(4), store.value(sp.obj_table).row(2));
        assert_eq!(seq, sp.build_pair_prompt(&store, &shifted, 1, 2).unwrap());
        assert_ne!(seq, sp.build_pair_prompt(&store, &shifted, 2, 1).unwrap());
        assert!(matches!(
            sp.build_pair_prompt(&store, &shifted, 3, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    fn batch_vs_loop(mode: AdapterMode) {
        let (store, sp) = setup(mode);
        let enc = FrozenTextEncoder::new(5, 6, 3, 4).unwrap();
        let pairs = [Pair::new(0, 0), Pair::new(2, 3), Pair::new(1, 1), Pair::new(2, 3)];
        let images = [fv(), vec![-0.3, 0.8, 1.1, 0.0, 0.4, -2.0]];
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let w = tape.constant(enc.projection().clone());
        let fvs = tape.constant(Tensor::from_rows(&images).unwrap());
        let sums = sp.prefix_sum_var(&bound, Some(sp.adapter_var(&bound, fvs)));
        let pair_proj = sp.pair_tokens_var(&bound, &pairs).matmul_t(w);
        for (b, img) in images.iter().enumerate() {
            let batch = sp.encode_pairs_var(pair_proj, sums.gather_rows(&[b]), w).value();
            let shifted = shift_prefix(store.value(sp.prefix), &sp.adapter_forward(&store, img).unwrap()).unwrap();
            let looped = encode_all_pairs(&sp, &store, &enc, &shifted, &pairs).unwrap();
            assert_eq!(batch.shape(), looped.shape());
            for (x, y) in batch.data().iter().zip(looped.data()) {
                assert!((x - y).abs() < 1e-14, "{x} vs {y}");
            }
            assert_eq!(looped.row(1), looped.row(3));
        }
    }

    #[test]
    fn batched_encoding_matches_loop_per_token() {
        batch_vs_loop(AdapterMode::PerToken);
    }

    #[test]
    fn batched_encoding_matches_loop_shared() {
        batch_vs_loop(AdapterMode::Shared);
    }

    #[test]
    fn single_pair_equals_single_encoding() {
        let (store, sp) = setup(AdapterMode::PerToken);
        let enc = FrozenTextEncoder::new(5, 6, 3, 4).unwrap();
        let shifted = store.value(sp.prefix).clone();
        let one = encode_all_pairs(&sp, &store, &enc, &shifted, &[Pair::new(1, 0)]).unwrap();
        let direct = enc.encode(&sp.build_pair_prompt(&store, &shifted, 1, 0).unwrap()).unwrap();
        assert_eq!(one.data(), &direct[..]);
        assert!(encode_all_pairs(&sp, &store, &enc, &shifted, &[]).is_err());
    }

    #[test]
    fn static_prefix_sum_without_adapter() {
        let (store, sp) = setup(AdapterMode::PerToken);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let s = sp.prefix_sum_var(&bound, None).value();
        let p = store.value(sp.prefix);
        for j in 0..5 {
            let want: f64 = (0..3).map(|i| p.get2(i, j)).sum();
            assert!((s.data()[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_tables_switch() {
        let mut store = ParamStore::new();
        let c = SoftPromptConfig {
            train_tables: false,
            ..cfg(AdapterMode::PerToken)
        };
        let sp = SoftPrompt::init(&mut store, c, 1).unwrap();
        assert!(!store.get(sp.attr_table).trainable);
        assert!(store.get(sp.prefix).trainable);
        let re = SoftPrompt::attach(&store, c).unwrap();
        assert_eq!(re, sp);
        assert!(SoftPrompt::attach(&store, SoftPromptConfig { d_tok: 4, ..c }).is_err());
    }

    #[test]
    fn prompt_parameters_pass_gradient_check() {
        let (store, sp) = setup(AdapterMode::PerToken);
        let enc = FrozenTextEncoder::new(5, 6, 3, 4).unwrap();
        let pairs = [Pair::new(0, 1), Pair::new(2, 3), Pair::new(1, 0)];
        let ids = [sp.prefix, sp.attr_table, sp.obj_table, sp.adapter.w1, sp.adapter.b1, sp.adapter.w2, sp.adapter.b2];
        let mut params: Vec<Tensor> = ids.iter().map(|id| store.value(*id).clone()).collect();
        // Nonzero biases keep the ReLU away from its kink at the test point.
        params[4] = Tensor::vector(vec![0.3, -0.2, 0.4]);
        let proj = enc.projection().clone();
        let x = Tensor::from_rows(&[fv()]).unwrap();
        let report = check_gradients(&params, 1e-5, |tape, v| {
            let mut vars = store.bind(tape);
            let mut all: Vec<Var> = (0..store.len()).map(|i| vars.get(crate::numcore::ParamId(i))).collect();
            for (id, var) in ids.iter().zip(v) {
                all[id.index()] = *var;
            }
            vars = Bound::from_vars(all);
            let w = tape.constant(proj.clone());
            let phi = sp.adapter_var(&vars, tape.constant(x.clone()));
            let sum = sp.prefix_sum_var(&vars, Some(phi));
            let pp = sp.pair_tokens_var(&vars, &pairs).matmul_t(w);
            let ft = sp.encode_pairs_var(pp, sum, w);
            ft.mul(ft).sum()
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.params.iter().all(|p| p.analytic_norm > 0.0));
    }
}
