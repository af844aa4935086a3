use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;

use super::RawPost;
use crate::error::{Error, Result};

fn hashtag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#\w+").expect("valid regex"))
}

/// Byte ranges of every hashtag occurrence in `text`.
pub(crate) fn hashtag_spans(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    hashtag_re().find_iter(text).map(|m| (m.start(), m.end()))
}

/// `#` followed by word characters, lowercased, deduplicated in
/// first-occurrence order.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for m in hashtag_re().find_iter(text) {
        let tag = m.as_str().to_lowercase();
        if seen.insert(tag.clone()) {
            out.push(tag);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropStats {
    /// Posts excluded because they carry no hashtag.
    pub without_hashtags: usize,
}

/// Posts grouped by hashtag.
///
/// Multi-hashtag posts belong to every one of their groups. Group members are
/// stored as indices into `posts`, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct HashtagIndex {
    posts: Vec<RawPost>,
    groups: BTreeMap<String, Vec<usize>>,
}

impl HashtagIndex {
    pub fn posts(&self) -> &[RawPost] {
        &self.posts
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn hashtags(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn frequency(&self, hashtag: &str) -> usize {
        self.groups.get(hashtag).map_or(0, Vec::len)
    }

    pub fn frequencies(&self) -> BTreeMap<String, usize> {
        self.groups
            .iter()
            .map(|(h, g)| (h.clone(), g.len()))
            .collect()
    }

    /// Members of one hashtag group, in corpus order.
    pub fn group(&self, hashtag: &str) -> Vec<&RawPost> {
        self.group_indices(hashtag)
            .iter()
            .map(|&i| &self.posts[i])
            .collect()
    }

    pub fn group_ids(&self, hashtag: &str) -> Vec<&str> {
        self.group_indices(hashtag)
            .iter()
            .map(|&i| self.posts[i].id.as_str())
            .collect()
    }

    pub(crate) fn group_indices(&self, hashtag: &str) -> &[usize] {
        self.groups.get(hashtag).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn groups(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.groups
    }

    /// Hashtags of `post` that still have a group in this index.
    pub(crate) fn live_hashtags<'a>(&'a self, post: &'a RawPost) -> impl Iterator<Item = &'a str> {
        post.hashtags
            .iter()
            .map(String::as_str)
            .filter(|h| self.groups.contains_key(*h))
    }
}

/// Groups posts by hashtag; posts without hashtags are dropped and counted.
pub fn build_index(posts: Vec<RawPost>) -> Result<(HashtagIndex, DropStats)> {
    let mut seen = HashSet::new();
    for p in &posts {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicatePostId(p.id.clone()));
        }
    }
    let mut stats = DropStats::default();
    let mut kept = Vec::with_capacity(posts.len());
    for p in posts {
        if p.hashtags.is_empty() {
            stats.without_hashtags += 1;
        } else {
            kept.push(p);
        }
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in kept.iter().enumerate() {
        for h in &p.hashtags {
            groups.entry(h.clone()).or_default().push(i);
        }
    }
    Ok((
        HashtagIndex {
            posts: kept,
            groups,
        },
        stats,
    ))
}

/// Keeps hashtags seen in at least `min_count` posts; posts left without any
/// surviving hashtag are removed.
pub fn filter_by_frequency(index: &HashtagIndex, min_count: usize) -> HashtagIndex {
    let min_count = min_count.max(1);
    let surviving: HashSet<&str> = index
        .groups
        .iter()
        .filter(|(_, g)| g.len() >= min_count)
        .map(|(h, _)| h.as_str())
        .collect();

    let mut remap = HashMap::new();
    let mut posts = Vec::new();
    for (i, p) in index.posts.iter().enumerate() {
        if p.hashtags.iter().any(|h| surviving.contains(h.as_str())) {
            remap.insert(i, posts.len());
            posts.push(p.clone());
        }
    }
    let groups = index
        .groups
        .iter()
        .filter(|(h, _)| surviving.contains(h.as_str()))
        .map(|(h, g)| (h.clone(), g.iter().map(|i| remap[i]).collect()))
        .collect();
    HashtagIndex { posts, groups }
}
