//! Visual adaptive prompting for compositional zero-shot learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: tape-based reverse-mode differentiation, Adam, gradient checks
//! - [`encoders`]: frozen stand-ins for the image and text encoders
//! - [`repository`]: learnable key/prompt pool with top-N cosine retrieval
//! - [`soft_prompt`]: prefix tokens, primitive tables and the prompt adapter
//! - [`fusion`]: pair logits, primitive decomposition and cross-attention
//! - [`objective`]: the four training losses and their weighted sum
//! - [`pipeline`]: training, inference, checkpoints and experiment drivers
//! - [`evalmetrics`]: bias sweep, S/U/H/AUC and open-world feasibility
//! - [`data`]: composition spaces, synthetic data and the feature file format

pub mod data;
pub mod encoders;
pub mod error;
pub mod evalmetrics;
pub mod fusion;
pub mod numcore;
pub mod objective;
pub mod pipeline;
pub mod repository;
pub mod rng;
pub mod soft_prompt;

pub use error::{Error, Result};
