//! Visual prompt repository: `M` learnable prompts `P_i (l×d)`, each paired
//! with a learnable key `a_i (d)`.
//!
//! Keys are only used to score an image's pooled feature by cosine
//! similarity; the top `N` prompts are averaged into `f_ret`. Selection is
//! hard: only the selected keys and prompts enter the gradient graph for a
//! given image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{cosine_similarity, Bound, ParamId, ParamStore, Tensor, Var};
use crate::rng;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositoryConfig {
    /// Number of prompts `M`.
    pub size: usize,
    /// Prompt length `l`.
    pub prompt_len: usize,
    pub dim: usize,
    /// Prompts retrieved per image.
    pub n_select: usize,
}

impl RepositoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::config("repo_size", "need at least 2 prompts"));
        }
        if self.prompt_len == 0 {
            return Err(Error::config("prompt_len", "must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::config("d", "must be positive"));
        }
        if self.n_select == 0 || self.n_select > self.size {
            return Err(Error::config(
                "n_select",
                format!("must be in 1..={}", self.size),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRepository {
    pub config: RepositoryConfig,
    /// `M × d`.
    pub keys: ParamId,
    /// `M × l × d`.
    pub prompts: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub indices: Vec<usize>,
    /// Cosine scores of `indices`, descending.
    pub scores: Vec<f64>,
    pub f_ret: Vec<f64>,
}

/// Retrieval recorded on a tape.
#[derive(Debug, Clone)]
pub struct RecordedRetrieval<'t> {
    pub indices: Vec<usize>,
    /// `N × 1` cosine scores of the selected keys.
    pub scores: Var<'t>,
    /// `1 × d`.
    pub f_ret: Var<'t>,
}

impl PromptRepository {
    /// Keys and prompts drawn from `N(0, 0.02²)` under `seed`.
    pub fn init(store: &mut ParamStore, config: RepositoryConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut g = rng::chacha(seed, 0x5245_504F); // "REPO"
        let RepositoryConfig {
            size,
            prompt_len,
            dim,
            ..
        } = config;
        let keys = store.add("repository.keys", rng::gaussian(&mut g, &[size, dim], INIT_STD), true);
        let prompts = store.add(
            "repository.prompts",
            rng::gaussian(&mut g, &[size, prompt_len, dim], INIT_STD),
            true,
        );
        Ok(Self {
            config,
            keys,
            prompts,
        })
    }

    /// Reattaches to parameters already present in `store` (checkpoint load).
    pub fn attach(store: &ParamStore, config: RepositoryConfig) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            store
                .by_name(name)
                .ok_or_else(|| Error::Dataset(format!("missing parameter {name}")))
        };
        Ok(Self {
            config,
            keys: find("repository.keys")?,
            prompts: find("repository.prompts")?,
        })
    }

    /// Top-`N` keys by cosine similarity to `f_v`; ties go to the lower index.
    pub fn select(&self, store: &ParamStore, f_v: &[f64]) -> Result<Vec<(usize, f64)>> {
        let keys = store.value(self.keys);
        let (m, d) = keys.dims2();
        if f_v.len() != d {
            return Err(Error::Dimension(format!("f_v length {} vs key dim {d}", f_v.len())));
        }
        let scores = (0..m)
            .map(|i| cosine_similarity(f_v, keys.row(i)))
            .collect::<Result<Vec<f64>>>()?;
        let mut taken = vec![false; m];
        let mut out = Vec::with_capacity(self.config.n_select);
        for _ in 0..self.config.n_select {
            let mut best: Option<usize> = None;
            for i in (0..m).filter(|&i| !taken[i]) {
                if best.is_none_or(|b| scores[i] > scores[b]) {
                    best = Some(i);
                }
            }
            let b = best.expect("n_select <= M");
            taken[b] = true;
            out.push((b, scores[b]));
        }
        Ok(out)
    }

    pub fn retrieve(&self, store: &ParamStore, f_v: &[f64]) -> Result<RetrievalResult> {
        let picked = self.select(store, f_v)?;
        let prompts = store.value(self.prompts);
        let rows: Vec<Tensor> = picked
            .iter()
            .map(|&(i, _)| self.prompt_matrix(prompts, i))
            .collect();
        Ok(RetrievalResult {
            indices: picked.iter().map(|p| p.0).collect(),
            scores: picked.iter().map(|p| p.1).collect(),
            f_ret: aggregate(&rows)?,
        })
    }

    fn prompt_matrix(&self, prompts: &Tensor, i: usize) -> Tensor {
        let RepositoryConfig {
            prompt_len: l,
            dim: d,
            ..
        } = self.config;
        let data = prompts.data()[i * l * d..(i + 1) * l * d].to_vec();
        Tensor::matrix(l, d, data).expect("prompt slice")
    }

    /// Records scoring of the selected keys and the prompt average.
    /// `f_v` is the `1×d` pooled feature on the tape; `f_v_raw` its value.
    pub fn retrieve_var<'t>(
        &self,
        store: &ParamStore,
        bound: &Bound<'t>,
        f_v: Var<'t>,
        f_v_raw: &[f64],
    ) -> Result<RecordedRetrieval<'t>> {
        let picked = self.select(store, f_v_raw)?;
        let indices: Vec<usize> = picked.iter().map(|p| p.0).collect();
        let scores = bound
            .get(self.keys)
            .gather_rows(&indices)
            .normalize_rows()
            .matmul_t(f_v.normalize_rows());
        let l = self.config.prompt_len;
        let rows: Vec<usize> = indices.iter().flat_map(|&i| i * l..(i + 1) * l).collect();
        let (m, d) = (self.config.size, self.config.dim);
        let f_ret = bound
            .get(self.prompts)
            .reshape(&[m * l, d])
            .gather_rows(&rows)
            .mean_rows()
            .reshape(&[1, d]);
        Ok(RecordedRetrieval {
            indices,
            scores,
            f_ret,
        })
    }
}

/// Mean over the selected prompts, then over their `l` rows.
pub fn aggregate(selected: &[Tensor]) -> Result<Vec<f64>> {
    let first = selected.first().ok_or(Error::EmptyInput("selected prompts"))?;
    let (l, d) = first.dims2();
    if selected.iter().any(|p| p.dims2() != (l, d)) {
        return Err(Error::Shape("selected prompts differ in shape".into()));
    }
    let mut out = vec![0.0; d];
    for p in selected {
        for i in 0..l {
            for (o, x) in out.iter_mut().zip(p.row(i)) {
                *o += x;
            }
        }
    }
    let n = (selected.len() * l) as f64;
    Ok(out.into_iter().map(|x| x / n).collect())
}
