use serde::{Deserialize, Serialize};

use crate::data::WorldMode;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::numcore::AdamConfig;
use crate::objective::LossWeights;
use crate::repository::RepositoryConfig;
use crate::soft_prompt::{AdapterMode, SoftPromptConfig};

/// Every hyperparameter of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    pub d_tok: usize,
    pub d_p: usize,
    pub d_a: usize,
    pub n_tokens: usize,
    /// Number of learnable prefix tokens `p + 1`.
    pub prefix_len: usize,
    /// Rows per repository prompt.
    pub prompt_len: usize,
    pub repo_size: usize,
    pub n_select: usize,
    pub adapter_hidden: usize,
    pub adapter_mode: AdapterMode,
    pub train_tables: bool,
    pub lambda_att_obj: f64,
    pub lambda_sp: f64,
    pub tau_init: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub use_repository: bool,
    pub use_adapter: bool,
    pub use_cross_attention: bool,
    pub mode: WorldMode,
    /// Average pair and retrieval logits at inference instead of using the
    /// pair logits alone.
    pub combine_ret_logits: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d: 32,
            d_tok: 32,
            d_p: 32,
            d_a: 32,
            n_tokens: 8,
            prefix_len: 3,
            prompt_len: 4,
            repo_size: 20,
            n_select: 2,
            adapter_hidden: 16,
            adapter_mode: AdapterMode::PerToken,
            train_tables: true,
            lambda_att_obj: 1.0,
            lambda_sp: 1.0,
            tau_init: 10.0,
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            use_repository: true,
            use_adapter: true,
            use_cross_attention: true,
            mode: WorldMode::Closed,
            combine_ret_logits: false,
        }
    }
}

/// Named component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoPr,
    NoPa,
    NoCa,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoPr, Ablation::NoPa, Ablation::NoCa];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoPr => "no-pr",
            Ablation::NoPa => "no-pa",
            Ablation::NoCa => "no-ca",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// The config with this component switched off.
    pub fn apply(self, config: &RunConfig) -> RunConfig {
        let mut c = config.clone();
        match self {
            Ablation::Full => {}
            Ablation::NoPr => c.use_repository = false,
            Ablation::NoPa => c.use_adapter = false,
            Ablation::NoCa => c.use_cross_attention = false,
        }
        c
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("d", self.d),
            ("d_tok", self.d_tok),
            ("d_p", self.d_p),
            ("d_a", self.d_a),
            ("n_tokens", self.n_tokens),
            ("prefix_len", self.prefix_len),
            ("prompt_len", self.prompt_len),
            ("adapter_hidden", self.adapter_hidden),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        self.repository().validate()?;
        self.weights().validate()?;
        if !(self.tau_init.is_finite() && self.tau_init > 0.0) {
            return Err(Error::config("tau_init", "must be finite and positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be finite and positive"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must be in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("eps", "must be finite and positive"));
        }
        Ok(())
    }

    /// Checks the feature dimensions a dataset provides against the config.
    pub fn check_features(&self, d: usize, n_tokens: usize) -> Result<()> {
        if d != self.d {
            return Err(Error::Dimension(format!("features have d = {d}, config has d = {}", self.d)));
        }
        if n_tokens != self.n_tokens {
            return Err(Error::Dimension(format!(
                "features have {n_tokens} tokens, config has n_tokens = {}",
                self.n_tokens
            )));
        }
        Ok(())
    }

    pub fn repository(&self) -> RepositoryConfig {
        RepositoryConfig {
            size: self.repo_size,
            prompt_len: self.prompt_len,
            dim: self.d,
            n_select: self.n_select,
        }
    }

    pub fn soft_prompt(&self, n_attrs: usize, n_objs: usize) -> SoftPromptConfig {
        SoftPromptConfig {
            n_attrs,
            n_objs,
            d: self.d,
            d_tok: self.d_tok,
            prefix_len: self.prefix_len,
            adapter_hidden: self.adapter_hidden,
            adapter_mode: self.adapter_mode,
            train_tables: self.train_tables,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            d: self.d,
            d_p: self.d_p,
            d_a: self.d_a,
            tau_init: self.tau_init,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_att_obj: self.lambda_att_obj,
            lambda_sp: self.lambda_sp,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Names of the switched-off components, for reports.
    pub fn ablation_label(&self) -> String {
        let mut off = Vec::new();
        if !self.use_repository {
            off.push("no-pr");
        }
        if !self.use_adapter {
            off.push("no-pa");
        }
        if !self.use_cross_attention {
            off.push("no-ca");
        }
        if off.is_empty() {
            "full".into()
        } else {
            off.join("+")
        }
    }
}
