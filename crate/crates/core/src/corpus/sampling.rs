use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use super::{HashtagIndex, RawPost};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairMode {
    /// Two distinct posts sharing a hashtag.
    HashtagPair,
    /// A post paired with itself; the two views differ only through dropout.
    DropoutSelf,
}

/// The unit of contrastive learning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub anchor: RawPost,
    pub positive: RawPost,
    /// `None` in [`PairMode::DropoutSelf`].
    pub shared_hashtag: Option<String>,
    pub mode: PairMode,
}

/// Per-post weight `sum over hashtags of 1 / frequency`.
fn inverse_frequency_weights(index: &HashtagIndex) -> Vec<f64> {
    index
        .posts()
        .iter()
        .map(|p| {
            index
                .live_hashtags(p)
                .map(|h| 1.0 / index.frequency(h) as f64)
                .sum()
        })
        .collect()
}

/// Draws `n` posts with replacement, each weighted by the summed inverse
/// frequency of its hashtags. For single-tagged posts every hashtag group gets
/// the same expected share of draws regardless of its size.
pub fn inverse_frequency_sample<'a>(
    index: &'a HashtagIndex,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<&'a RawPost>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if index.is_empty() {
        return Err(Error::Invalid("cannot sample from an empty hashtag index".into()));
    }
    let weights = inverse_frequency_weights(index);
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::Invalid(format!("inverse-frequency weights: {e}")))?;
    let posts = index.posts();
    Ok((0..n).map(|_| &posts[dist.sample(rng)]).collect())
}

/// Forms `n` contrastive pairs.
///
/// Hashtag mode picks the hashtag first (uniformly among groups with at least
/// two posts, which is what inverse-frequency weighting reduces to at group
/// level), then two distinct members of that group uniformly.
pub fn build_pairs(
    index: &HashtagIndex,
    n: usize,
    mode: PairMode,
    rng: &mut Rng,
) -> Result<Vec<TrainingPair>> {
    match mode {
        PairMode::DropoutSelf => Ok(inverse_frequency_sample(index, n, rng)?
            .into_iter()
            .map(|p| TrainingPair {
                anchor: p.clone(),
                positive: p.clone(),
                shared_hashtag: None,
                mode,
            })
            .collect()),
        PairMode::HashtagPair => {
            let eligible: Vec<(&String, &Vec<usize>)> =
                index.groups().iter().filter(|(_, g)| g.len() >= 2).collect();
            if eligible.is_empty() {
                return Err(Error::NoPairableHashtag);
            }
            let posts = index.posts();
            let mut pairs = Vec::with_capacity(n);
            for _ in 0..n {
                let (tag, group) = eligible[rng.random_range(0..eligible.len())];
                let picked = rand::seq::index::sample(rng, group.len(), 2);
                pairs.push(TrainingPair {
                    anchor: posts[group[picked.index(0)]].clone(),
                    positive: posts[group[picked.index(1)]].clone(),
                    shared_hashtag: Some(tag.clone()),
                    mode,
                });
            }
            Ok(pairs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_index;
    use crate::rng::rng_from_seed;
    use std::collections::HashMap;

    fn index_with(groups: &[(&str, usize)]) -> HashtagIndex {
        let mut posts = Vec::new();
        for (tag, count) in groups {
            for i in 0..*count {
                posts.push(RawPost::new(format!("{tag}-{i}"), format!("post {i} {tag}")));
            }
        }
        build_index(posts).unwrap().0
    }

    #[test]
    fn inverse_frequency_equalizes_groups() {
        let idx = index_with(&[("#small", 100), ("#big", 900)]);
        let mut rng = rng_from_seed(11);
        let draws = inverse_frequency_sample(&idx, 10_000, &mut rng).unwrap();
        let small = draws.iter().filter(|p| p.hashtags[0] == "#small").count() as f64;
        // binomial(10000, 0.5): sigma = 50
        assert!((small - 5000.0).abs() <= 150.0, "small draws {small}");
    }

    #[test]
    fn single_hashtag_and_zero_draws() {
        let idx = index_with(&[("#only", 5)]);
        let mut rng = rng_from_seed(1);
        let draws = inverse_frequency_sample(&idx, 50, &mut rng).unwrap();
        assert!(draws.iter().all(|p| p.hashtags == vec!["#only"]));
        assert!(inverse_frequency_sample(&idx, 0, &mut rng).unwrap().is_empty());
        let (empty, _) = build_index(vec![]).unwrap();
        assert!(inverse_frequency_sample(&empty, 3, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let idx = index_with(&[("#a", 10), ("#b", 30)]);
        let a: Vec<_> = inverse_frequency_sample(&idx, 200, &mut rng_from_seed(5))
            .unwrap()
            .iter()
            .map(|p| p.id.clone())
            .collect();
        let b: Vec<_> = inverse_frequency_sample(&idx, 200, &mut rng_from_seed(5))
            .unwrap()
            .iter()
            .map(|p| p.id.clone())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_group_never_shared() {
        let idx = index_with(&[("#lonely", 1), ("#pair", 2), ("#many", 7)]);
        let pairs = build_pairs(&idx, 500, PairMode::HashtagPair, &mut rng_from_seed(2)).unwrap();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for p in &pairs {
            let tag = p.shared_hashtag.clone().unwrap();
            assert_ne!(tag, "#lonely");
            assert_ne!(p.anchor.id, p.positive.id);
            *seen.entry(tag).or_default() += 1;
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn dropout_self_pairs_share_text() {
        let idx = index_with(&[("#a", 3)]);
        let pairs = build_pairs(&idx, 20, PairMode::DropoutSelf, &mut rng_from_seed(3)).unwrap();
        assert_eq!(pairs.len(), 20);
        for p in pairs {
            assert_eq!(p.anchor.text, p.positive.text);
            assert!(p.shared_hashtag.is_none());
        }
    }

    #[test]
    fn no_pairable_hashtag_is_an_error() {
        let idx = index_with(&[("#a", 1), ("#b", 1)]);
        let err = build_pairs(&idx, 1, PairMode::HashtagPair, &mut rng_from_seed(0)).unwrap_err();
        assert!(matches!(err, Error::NoPairableHashtag));
    }
}
