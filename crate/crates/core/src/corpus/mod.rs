//! Corpus ingestion and pre-training data preparation.
//!
//! Posts come in as newline-delimited JSON (`{"id": ..., "text": ...}`);
//! hashtags are always derived from the text. From there the pipeline is
//! group by hashtag, drop rare hashtags, sample with inverse hashtag
//! frequency, form contrastive pairs, noise the hashtags and optionally pack
//! same-hashtag posts into long documents.

mod hashtags;
mod noise;
mod packing;
mod sampling;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hashtags::{build_index, extract_hashtags, filter_by_frequency, DropStats, HashtagIndex};
pub use noise::{noise_hashtags, segment_hashtag, NoiseConfig};
pub use packing::{pack_greedy, pack_long_documents};
pub use sampling::{build_pairs, inverse_frequency_sample, PairMode, TrainingPair};
pub use vocab::{
    build_vocab, encode_single, tokenize_words, Vocab, CLS_ID, MASK_ID, NUM_SPECIAL, PAD_ID,
    SEP_ID, SPECIAL_TOKENS, UNK_ID,
};

/// One social-media post.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPost {
    pub id: String,
    pub text: String,
    /// Lowercased, deduplicated in first-occurrence order, always derived from `text`.
    pub hashtags: Vec<String>,
}

impl RawPost {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let hashtags = extract_hashtags(&text);
        Self {
            id: id.into(),
            text,
            hashtags,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PostRecord {
    id: String,
    text: String,
}

/// Reads a newline-delimited JSON corpus. Blank lines are skipped; any
/// other field in a record is ignored, including a stray `hashtags` field.
pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawPost>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut posts = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PostRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), lineno + 1), e))?;
        posts.push(RawPost::new(rec.id, rec.text));
    }
    Ok(posts)
}

pub fn write_corpus_jsonl(path: impl AsRef<Path>, posts: &[RawPost]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in posts {
        let rec = PostRecord {
            id: p.id.clone(),
            text: p.text.clone(),
        };
        let line = serde_json::to_string(&rec).expect("post record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
