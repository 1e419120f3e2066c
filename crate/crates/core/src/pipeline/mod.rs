//! Training, inference, checkpoints and experiment drivers.
//!
//! A training step encodes a batch of images, shifts the prompt prefix per
//! image with the adapter, scores all seen pairs, retrieves repository
//! prompts, fuses text and visual tokens by cross-attention, and takes one
//! Adam step on the weighted objective. Each ablation switch removes one of
//! those stages: without the repository the retrieval loss is dropped,
//! without the adapter the prefix is static, and without cross-attention the
//! fused features are the text features themselves.
//!
//! Prediction always uses the pair logits unless `combine_ret_logits` asks
//! for an average with the retrieval logits.

mod checkpoint;
mod config;
mod experiments;
mod model;
mod predict;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{Ablation, RunConfig};
pub use experiments::{
    ablate, ablation_csv, run_cell, sweep, sweep_csv, write_text, AblationRow, CellMetrics, SweepRow,
    ABLATION_CSV_HEADER, SWEEP_CSV_HEADER,
};
pub use model::{ImageForward, ImageLogits, VapsModel};
pub use predict::{
    collect_logits, collect_logits_sequential, evaluate, predict_closed, predict_open, EvalOutcome, Threshold,
};
pub use train::{epoch_mean, train, train_model, write_log_csv, BatchLoss, LogRow, TrainContext, TrainOutcome};
