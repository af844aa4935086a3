//! Synthetic fixtures with known topic structure.
//!
//! Every topic owns a disjoint vocabulary: many rare *source* words and a few
//! frequent *cue* words. Corpus posts mix both and end with one of the
//! topic's hashtags. Classification inputs for the topic-cue task contain
//! source words only, so a classifier trained on few examples sees mostly
//! unseen words; the label is recoverable through retrieved topic-mates,
//! which carry the cue words.

use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::corpus::RawPost;
use crate::finetune::{Dataset, LabeledExample};
use crate::rng::{Rng, SeedTree};

const FILLERS: [&str; 12] = [
    "the", "a", "and", "is", "so", "just", "today", "really", "this", "my", "now", "lol",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TopicCorpusConfig {
    pub topics: usize,
    pub hashtags_per_topic: usize,
    pub posts: usize,
    pub source_words_per_topic: usize,
    pub cue_words_per_topic: usize,
    /// Inclusive range of source words per post.
    pub source_per_post: (usize, usize),
    /// Probability that a corpus post carries a cue word.
    pub cue_probability: f64,
    pub seed: u64,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        Self {
            topics: 5,
            hashtags_per_topic: 2,
            posts: 2000,
            source_words_per_topic: 150,
            cue_words_per_topic: 3,
            source_per_post: (4, 7),
            cue_probability: 0.9,
            seed: 0,
        }
    }
}

pub fn source_word(topic: usize, i: usize) -> String {
    format!("s{topic}w{i}")
}

pub fn cue_word(topic: usize, i: usize) -> String {
    format!("cue{topic}k{i}")
}

pub fn topic_hashtag(topic: usize, i: usize) -> String {
    format!("#topic{topic}tag{i}")
}

/// A post with its generating topic.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicPost {
    pub post: RawPost,
    pub topic: usize,
}

impl TopicCorpusConfig {
    fn source_text(&self, topic: usize, rng: &mut Rng) -> Vec<String> {
        let (lo, hi) = self.source_per_post;
        let n = rng.random_range(lo..=hi);
        let mut words: Vec<String> = (0..n)
            .map(|_| source_word(topic, rng.random_range(0..self.source_words_per_topic)))
            .collect();
        if rng.random::<f64>() < 0.5 {
            let at = rng.random_range(0..=words.len());
            words.insert(at, FILLERS.choose(rng).expect("non-empty").to_string());
        }
        words
    }

    /// A corpus-style post: source words, maybe a cue word, one hashtag.
    pub fn corpus_post(&self, id: String, topic: usize, rng: &mut Rng) -> RawPost {
        let mut words = self.source_text(topic, rng);
        if rng.random::<f64>() < self.cue_probability {
            let at = rng.random_range(0..=words.len());
            words.insert(at, cue_word(topic, rng.random_range(0..self.cue_words_per_topic)));
        }
        words.push(topic_hashtag(topic, rng.random_range(0..self.hashtags_per_topic)));
        RawPost::new(id, words.join(" "))
    }

    /// A classification-style input: source words only, no cue, no hashtag.
    pub fn source_only(&self, topic: usize, rng: &mut Rng) -> String {
        self.source_text(topic, rng).join(" ")
    }
}

/// `cfg.posts` posts, topics assigned round-robin, ids `post00000`...
pub fn topic_corpus(cfg: &TopicCorpusConfig) -> Vec<TopicPost> {
    let mut rng = SeedTree::new(cfg.seed).child("topic-corpus").rng();
    (0..cfg.posts)
        .map(|i| {
            let topic = i % cfg.topics;
            TopicPost {
                post: cfg.corpus_post(format!("post{i:05}"), topic, &mut rng),
                topic,
            }
        })
        .collect()
}

/// Fresh corpus-style posts not in [`topic_corpus`], ids `query00000`...
pub fn held_out_posts(cfg: &TopicCorpusConfig, n: usize, seed: u64) -> Vec<TopicPost> {
    let mut rng = SeedTree::new(cfg.seed).child("held-out").child(&seed.to_string()).rng();
    (0..n)
        .map(|i| {
            let topic = i % cfg.topics;
            TopicPost {
                post: cfg.corpus_post(format!("query{i:05}"), topic, &mut rng),
                topic,
            }
        })
        .collect()
}

/// Labeled `(text, topic)` inputs made of source words only.
pub fn source_only_examples(cfg: &TopicCorpusConfig, n: usize, stream: &str) -> Vec<(String, usize)> {
    let mut rng = SeedTree::new(cfg.seed).child("source-only").child(stream).rng();
    (0..n)
        .map(|i| {
            let topic = i % cfg.topics;
            (cfg.source_only(topic, &mut rng), topic)
        })
        .collect()
}

/// Split sizes for [`topic_cue_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for TaskSizes {
    fn default() -> Self {
        Self {
            train: 40,
            val: 50,
            test: 250,
        }
    }
}

/// Topic-classification dataset whose inputs hold source words only;
/// label `t` is named `topic<t>`.
pub fn topic_cue_dataset(cfg: &TopicCorpusConfig, sizes: TaskSizes) -> Dataset {
    let split = |name: &str, n: usize| -> Vec<LabeledExample> {
        source_only_examples(cfg, n, name)
            .into_iter()
            .enumerate()
            .map(|(i, (text, topic))| LabeledExample::new(format!("{name}-{i}"), text, topic))
            .collect()
    };
    Dataset {
        train: split("train", sizes.train),
        val: split("val", sizes.val),
        test: split("test", sizes.test),
        label_names: (0..cfg.topics).map(|t| format!("topic{t}")).collect(),
    }
}
