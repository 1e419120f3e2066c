use sha2::{Digest, Sha256};

use crate::data::Pair;
use crate::encoders::{FrozenTextEncoder, ImageFeatures};
use crate::error::{Error, Result};
use crate::fusion::Fusion;
use crate::numcore::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::repository::{PromptRepository, RecordedRetrieval};
use crate::soft_prompt::SoftPrompt;

use super::config::RunConfig;

const TEXT_PROJECTION: &str = "text_encoder.projection";

/// All parameters of a run plus the component handles that index them.
///
/// The frozen text projection lives in the same store (marked
/// non-trainable) so that checkpoints are self-contained.
#[derive(Debug, Clone, PartialEq)]
pub struct VapsModel {
    pub config: RunConfig,
    pub n_attrs: usize,
    pub n_objs: usize,
    pub store: ParamStore,
    pub text_projection: ParamId,
    pub repository: PromptRepository,
    pub prompt: SoftPrompt,
    pub fusion: Fusion,
}

/// Recorded outputs for one image.
#[derive(Debug, Clone)]
pub struct ImageForward<'t> {
    /// `1 × K` pair logits.
    pub sp: Var<'t>,
    /// `1 × K` retrieval logits and the retrieval behind them, when the
    /// repository is enabled and requested.
    pub ret: Option<(Var<'t>, RecordedRetrieval<'t>)>,
}

/// Plain logits of one image over a pair list.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLogits {
    pub sp: Vec<f64>,
    pub ret: Option<Vec<f64>>,
    /// Repository indices retrieved for the image.
    pub retrieved: Vec<usize>,
}

impl VapsModel {
    pub fn init(config: &RunConfig, n_attrs: usize, n_objs: usize) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let text = FrozenTextEncoder::new(config.d_tok, config.d, config.prefix_len, config.seed)?;
        let text_projection = store.add(TEXT_PROJECTION, text.projection().clone(), false);
        let repository = PromptRepository::init(&mut store, config.repository(), config.seed)?;
        let prompt = SoftPrompt::init(&mut store, config.soft_prompt(n_attrs, n_objs), config.seed)?;
        let fusion = Fusion::init(&mut store, config.fusion(), config.seed)?;
        Ok(Self {
            config: config.clone(),
            n_attrs,
            n_objs,
            store,
            text_projection,
            repository,
            prompt,
            fusion,
        })
    }

    /// Rebuilds component handles over a loaded parameter store.
    pub fn attach(config: &RunConfig, n_attrs: usize, n_objs: usize, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let text_projection = store
            .by_name(TEXT_PROJECTION)
            .ok_or_else(|| Error::Dataset(format!("missing parameter {TEXT_PROJECTION}")))?;
        let repository = PromptRepository::attach(&store, config.repository())?;
        let prompt = SoftPrompt::attach(&store, config.soft_prompt(n_attrs, n_objs))?;
        let fusion = Fusion::attach(&store, config.fusion())?;
        let fresh = Self::init(config, n_attrs, n_objs)?;
        for ((_, want), (_, got)) in fresh.store.iter().zip(store.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} does not match config ({} {:?})",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        if fresh.store.len() != store.len() {
            return Err(Error::Shape(format!(
                "{} parameters stored, config implies {}",
                store.len(),
                fresh.store.len()
            )));
        }
        Ok(Self {
            config: config.clone(),
            n_attrs,
            n_objs,
            store,
            text_projection,
            repository,
            prompt,
            fusion,
        })
    }

    pub fn text_encoder(&self) -> FrozenTextEncoder {
        FrozenTextEncoder::from_projection(self.store.value(self.text_projection).clone(), self.config.prefix_len)
            .expect("projection is a matrix")
    }

    /// SHA-256 over every frozen parameter.
    pub fn frozen_hash(&self) -> String {
        let mut h = Sha256::new();
        for (_, p) in self.store.iter().filter(|(_, p)| !p.trainable) {
            h.update(p.name.as_bytes());
            h.update(p.value.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Records the forward pass of a batch of images against `pairs`.
    pub fn forward_batch<'t>(
        &self,
        tape: &'t Tape,
        bound: &Bound<'t>,
        images: &[&ImageFeatures],
        pairs: &[Pair],
        with_retrieval: bool,
    ) -> Result<Vec<ImageForward<'t>>> {
        if images.is_empty() {
            return Err(Error::EmptyInput("images"));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyInput("pairs"));
        }
        let c = &self.config;
        for (what, index, len) in pairs
            .iter()
            .flat_map(|p| [("attribute", p.attr, self.n_attrs), ("object", p.obj, self.n_objs)])
        {
            if index >= len {
                return Err(Error::IndexOutOfRange { what, index, len });
            }
        }
        for f in images {
            c.check_features(f.dim(), f.n_tokens())?;
        }
        let pooled: Vec<Vec<f64>> = images.iter().map(|f| f.pooled.clone()).collect();
        let fv = tape.constant(Tensor::from_rows(&pooled)?);
        let w = bound.get(self.text_projection);
        let phi = c.use_adapter.then(|| self.prompt.adapter_var(bound, fv));
        let prefix_sums = self.prompt.prefix_sum_var(bound, phi);
        let pair_proj = self.prompt.pair_tokens_var(bound, pairs).matmul_t(w);
        let retrieve = with_retrieval && c.use_repository;

        images
            .iter()
            .enumerate()
            .map(|(b, f)| {
                let prefix_sum = if c.use_adapter { prefix_sums.gather_rows(&[b]) } else { prefix_sums };
                let f_t = self.prompt.encode_pairs_var(pair_proj, prefix_sum, w);
                let fv_b = fv.gather_rows(&[b]);
                let sp = self.fusion.pair_logits(bound, fv_b, f_t);
                let ret = if retrieve {
                    let fused = if c.use_cross_attention {
                        self.fusion.cross_attention(bound, f_t, tape.constant(f.tokens.clone()))
                    } else {
                        f_t
                    };
                    let rec = self.repository.retrieve_var(&self.store, bound, fv_b, &f.pooled)?;
                    Some((self.fusion.retrieval_logits(bound, rec.f_ret, fused), rec))
                } else {
                    None
                };
                Ok(ImageForward { sp, ret })
            })
            .collect()
    }

    /// Logits of one image over `pairs`, evaluated on a private tape.
    pub fn image_logits(&self, features: &ImageFeatures, pairs: &[Pair]) -> Result<ImageLogits> {
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let out = self
            .forward_batch(&tape, &bound, &[features], pairs, self.config.combine_ret_logits)?
            .pop()
            .expect("one image in, one out");
        tape.check_finite()?;
        let (ret, retrieved) = match out.ret {
            Some((logits, rec)) => (Some(logits.value().into_data()), rec.indices),
            None => (None, Vec::new()),
        };
        Ok(ImageLogits {
            sp: out.sp.value().into_data(),
            ret,
            retrieved,
        })
    }

    /// The logits used for prediction: pair logits, or their average with
    /// retrieval logits when `combine_ret_logits` is set and the repository
    /// is enabled.
    pub fn inference_logits(&self, features: &ImageFeatures, pairs: &[Pair]) -> Result<Vec<f64>> {
        let l = self.image_logits(features, pairs)?;
        Ok(match l.ret {
            Some(ret) => l.sp.iter().zip(&ret).map(|(a, b)| (a + b) / 2.0).collect(),
            None => l.sp,
        })
    }
}
