//! Retrieval-enriched fine-tuning with trigger terms.
//!
//! An input `x` is enriched with the texts its nearest #Database neighbours
//! and with blocks of trainable trigger embeddings, then classified by a
//! backbone encoder plus linear head. Training alternates a joint pass over
//! all parameters with a pass that updates the trigger table alone.

mod data;
mod icl;
mod layout;
mod metrics;
mod model;
mod train;

pub use data::{
    attach_retrievals, index_digest, retrieval_cache_key, thread_cap, Dataset, LabeledExample, Retriever,
    SPLITS,
};
pub use icl::build_icl_demonstrations;
pub use layout::{reformulate_input, Placement, ReformulatedInput, Segment, TriggerConfig};
pub use metrics::{accuracy, macro_f1, Metric};
pub use model::{
    check_classification_gradients, classification_loss, tiny_classification_check, load_model, model_bytes, predict_input, save_model,
    ClassificationGrads, FinetuneModel, HEAD_BIAS, HEAD_WEIGHT, TRIGGERS,
};
pub use train::{
    evaluate, finetune, predict_batch, prepare_inputs, EarlyStopping, EpochRecord, FinetuneConfig, History,
    InputMode, TriggerPhase,
};

use crate::corpus::Vocab;
use crate::error::Result;

/// Retrieves (when the model uses retrieval), reformulates and classifies
/// one text. Returns the argmax label and the class distribution.
pub fn predict(
    model: &FinetuneModel,
    vocab: &Vocab,
    x: &str,
    retriever: Option<&Retriever<'_>>,
    max_len: usize,
) -> Result<(usize, Vec<f64>)> {
    let retrieved = match (model.k_retrieved, retriever) {
        (0, _) | (_, None) => Vec::new(),
        (k, Some(r)) => r.retrieve(x, k)?,
    };
    let tokens: Vec<Vec<u32>> = retrieved.iter().map(|t| vocab.tokenize(t)).collect();
    let input = reformulate_input(&vocab.tokenize(x), &tokens, &model.trigger_cfg, max_len)?;
    predict_input(model, &input)
}

/// Top-`k` retrieved texts for `x`; see [`Retriever::retrieve`].
pub fn retrieve_context(x: &str, retriever: &Retriever<'_>, k: usize) -> Result<Vec<String>> {
    retriever.retrieve(x, k)
}
