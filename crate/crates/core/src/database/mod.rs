//! The #Database: a per-hashtag-capped post store with unit embeddings and
//! exact cosine top-k search.

mod file;

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{build_index, encode_single, RawPost, Vocab};
use crate::encoder::{embed_sequences, EncoderParams, SentenceEmbedding};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::rng::SeedTree;

pub use file::{index_bytes, load_index, save_index};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatabaseConfig {
    pub per_hashtag_cap: usize,
    pub seed: u64,
}

impl Default for DatabaseConfig {
    fn default() -> Self {
        Self {
            per_hashtag_cap: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredPost {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMeta {
    pub encoder_digest: String,
    pub config: DatabaseConfig,
    /// Seconds since the epoch; taken from `SOURCE_DATE_EPOCH`, else 0, so
    /// that identical inputs give identical index bytes.
    pub built_at: u64,
}

/// Stored posts in ascending id order, one unit-norm embedding row each.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    posts: Vec<StoredPost>,
    normalized: Vec<String>,
    matrix: Mat,
    meta: IndexMeta,
}

/// Per-hashtag sample sizes before cross-hashtag deduplication.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct BuildReport {
    pub sampled_per_hashtag: BTreeMap<String, usize>,
    pub stored: usize,
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl EmbeddingIndex {
    /// Assembles an index from unit-norm rows. Post ids must be strictly
    /// ascending; row `i` belongs to post `i`.
    pub fn from_parts(posts: Vec<StoredPost>, matrix: Mat, meta: IndexMeta) -> Result<Self> {
        if posts.len() != matrix.nrows() {
            return Err(Error::Format(format!(
                "{} posts but {} embedding rows",
                posts.len(),
                matrix.nrows()
            )));
        }
        if let Some(w) = posts.windows(2).find(|w| w[0].id >= w[1].id) {
            return Err(Error::Format(format!(
                "post ids must be strictly ascending: {:?} before {:?}",
                w[0].id, w[1].id
            )));
        }
        let normalized = posts.iter().map(|p| normalize_whitespace(&p.text)).collect();
        Ok(Self {
            posts,
            normalized,
            matrix,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn d_model(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn posts(&self) -> &[StoredPost] {
        &self.posts
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn text_of(&self, id: &str) -> Option<&str> {
        self.posts
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| self.posts[i].text.as_str())
    }

    /// Refuses use with an encoder other than the one the index was built by.
    pub fn check_digest(&self, active: &str) -> Result<()> {
        if self.meta.encoder_digest != active {
            return Err(Error::DigestMismatch {
                expected: self.meta.encoder_digest.clone(),
                found: active.to_string(),
            });
        }
        Ok(())
    }

    /// Exact top-k by cosine; ties go to the smaller post id. Posts whose
    /// whitespace-normalized text equals `exclude_text` are skipped.
    pub fn query_top_k(
        &self,
        query: &SentenceEmbedding,
        k: usize,
        exclude_text: Option<&str>,
    ) -> Vec<(String, f64)> {
        self.query_rows(&query.unit, k, exclude_text)
            .into_iter()
            .map(|(i, s)| (self.posts[i].id.clone(), s))
            .collect()
    }

    /// Like [`Self::query_top_k`] but returns row numbers.
    pub fn query_rows(&self, unit: &[f64], k: usize, exclude_text: Option<&str>) -> Vec<(usize, f64)> {
        if k == 0 || unit.len() != self.d_model() {
            return Vec::new();
        }
        let excluded = exclude_text.map(normalize_whitespace);
        let q = ndarray::ArrayView1::from(unit);
        let scores = self.matrix.dot(&q);
        let mut ranked: Vec<(usize, f64)> = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| excluded.as_deref() != Some(self.normalized[*i].as_str()))
            .map(|(i, &s)| (i, s))
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if ranked.len() > k {
            ranked.select_nth_unstable_by(k - 1, order);
            ranked.truncate(k);
        }
        ranked.sort_by(order);
        ranked
    }
}

/// Uniformly samples `min(cap, group size)` posts per hashtag without
/// replacement, each hashtag on its own seed stream, and returns the
/// id-deduplicated union in ascending id order.
pub fn sample_database_posts(
    posts: &[RawPost],
    cfg: &DatabaseConfig,
) -> Result<(Vec<RawPost>, BTreeMap<String, usize>)> {
    if cfg.per_hashtag_cap == 0 {
        return Err(Error::Config("per_hashtag_cap must be >= 1".into()));
    }
    let (index, _) = build_index(posts.to_vec())?;
    let seeds = SeedTree::new(cfg.seed).child("database");
    let mut chosen = BTreeSet::new();
    let mut sampled = BTreeMap::new();
    for tag in index.hashtags() {
        let group = index.group_indices(tag);
        let take = cfg.per_hashtag_cap.min(group.len());
        let mut rng = seeds.child(tag).rng();
        for i in rand::seq::index::sample(&mut rng, group.len(), take) {
            chosen.insert(group[i]);
        }
        sampled.insert(tag.to_string(), take);
    }
    let mut out: Vec<RawPost> = chosen.into_iter().map(|i| index.posts()[i].clone()).collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((out, sampled))
}

pub(crate) fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Samples, encodes (dropout off) and normalizes the database posts.
///
/// Rows are rounded to f32 so that the in-memory index equals its on-disk
/// form bit for bit.
pub fn build_database(
    posts: &[RawPost],
    cfg: &DatabaseConfig,
    params: &EncoderParams,
    vocab: &Vocab,
) -> Result<(EmbeddingIndex, BuildReport)> {
    let (survivors, sampled_per_hashtag) = sample_database_posts(posts, cfg)?;
    if survivors.is_empty() {
        return Err(Error::Invalid("no post survived database sampling".into()));
    }
    let max_len = params.config.max_seq_len;
    let seqs: Vec<Vec<u32>> = survivors
        .iter()
        .map(|p| encode_single(&vocab.tokenize(&p.text), max_len))
        .collect();
    let emb = embed_sequences(params, &seqs, 64)?;
    let d = params.config.d_model;
    let matrix = Mat::from_shape_fn((emb.len(), d), |(i, j)| emb[i].unit[j] as f32 as f64);
    let stored = survivors
        .into_iter()
        .map(|p| StoredPost { id: p.id, text: p.text })
        .collect::<Vec<_>>();
    let report = BuildReport {
        sampled_per_hashtag,
        stored: stored.len(),
    };
    let meta = IndexMeta {
        encoder_digest: params.digest(),
        config: *cfg,
        built_at: build_timestamp(),
    };
    Ok((EmbeddingIndex::from_parts(stored, matrix, meta)?, report))
}

/// Encodes one text with dropout off.
pub fn embed_text(params: &EncoderParams, vocab: &Vocab, text: &str) -> Result<SentenceEmbedding> {
    let seq = encode_single(&vocab.tokenize(text), params.config.max_seq_len);
    Ok(embed_sequences(params, &[seq], 1)?.remove(0))
}
