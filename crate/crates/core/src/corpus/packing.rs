use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{HashtagIndex, Vocab, SEP_ID};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Concatenates `first` and then whole posts from `rest`, separated by
/// `<sep>`, while they fit in `max_len`. Only a first post that alone exceeds
/// `max_len` is truncated. Returns the sequence and the number of posts in it.
pub fn pack_greedy<'a>(
    first: &[u32],
    rest: impl IntoIterator<Item = &'a [u32]>,
    max_len: usize,
) -> (Vec<u32>, usize) {
    let mut seq: Vec<u32> = first.iter().copied().take(max_len).collect();
    let mut count = 1;
    for post in rest {
        if seq.len() + 1 + post.len() > max_len {
            break;
        }
        seq.push(SEP_ID);
        seq.extend_from_slice(post);
        count += 1;
    }
    (seq, count)
}

/// Emits content sequences (no `<cls>`/`<sep>` framing) for MLM-style use.
///
/// Each hashtag group is shuffled and walked once. At each step, with
/// probability `fraction`, a long document is packed greedily from the
/// following group members; otherwise the next post is emitted alone.
pub fn pack_long_documents(
    index: &HashtagIndex,
    max_len: usize,
    vocab: &Vocab,
    fraction: f64,
    rng: &mut Rng,
) -> Result<Vec<Vec<u32>>> {
    if max_len < 2 {
        return Err(Error::Invalid(format!("max_len must be >= 2, got {max_len}")));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Invalid(format!("fraction must lie in [0,1], got {fraction}")));
    }
    let tokenized: Vec<Vec<u32>> = index
        .posts()
        .iter()
        .map(|p| vocab.tokenize(&p.text))
        .collect();
    let mut out = Vec::new();
    for members in index.groups().values() {
        let mut order = members.clone();
        order.shuffle(rng);
        let mut i = 0;
        while i < order.len() {
            let pack = rng.random::<f64>() < fraction;
            if pack {
                let rest = order[i + 1..].iter().map(|&j| tokenized[j].as_slice());
                let (seq, used) = pack_greedy(&tokenized[order[i]], rest, max_len);
                out.push(seq);
                i += used;
            } else {
                out.push(tokenized[order[i]].iter().copied().take(max_len).collect());
                i += 1;
            }
        }
    }
    Ok(out)
}
