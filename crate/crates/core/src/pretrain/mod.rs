//! Hashtag-driven contrastive pre-training of the encoder.
//!
//! The objective is in-batch-negative InfoNCE over pair embeddings plus an
//! `alpha`-weighted masked-token loss on the anchor view.

mod loss;
mod mlm;
mod optim;
mod trainer;

pub use loss::{contrastive_loss, cross_entropy_mean, unit_grad_to_raw, ContrastiveLoss};
pub use mlm::{apply_mlm_mask, MlmSplit};
pub use optim::{Adam, LrSchedule};
pub use trainer::{
    check_gradients, pretrain_loss, tiny_pretrain_batch, EpochSummary, LossBreakdown,
    PretrainBatch, PretrainConfig, Pretrainer, StepMetrics,
};
