use rand::seq::IndexedRandom;

use super::data::LabeledExample;
use crate::corpus::{Vocab, CLS_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `<cls> d_1 <sep> w_1 <sep> ... d_L <sep> w_L <sep> x <sep>` with one
/// uniformly sampled training example `d_c` per class `c` and `w_c` the
/// tokenized label name. Oldest (leftmost) demonstrations are dropped first
/// to fit `max_len`; `x` is truncated only if it alone overflows.
pub fn build_icl_demonstrations(
    train: &[LabeledExample],
    x: &str,
    label_names: &[String],
    vocab: &Vocab,
    max_len: usize,
    rng: &mut Rng,
) -> Result<Vec<u32>> {
    if max_len < 3 {
        return Err(Error::Invalid(format!("max_len {max_len} cannot hold <cls> x <sep>")));
    }
    let mut demos: Vec<Vec<u32>> = Vec::with_capacity(label_names.len());
    for (c, name) in label_names.iter().enumerate() {
        let pool: Vec<&LabeledExample> = train.iter().filter(|e| e.label == c).collect();
        let pick = pool
            .choose(rng)
            .ok_or_else(|| Error::Invalid(format!("class {c} ({name:?}) has no training example")))?;
        let mut d = vocab.tokenize(&pick.text);
        d.push(SEP_ID);
        d.extend(vocab.tokenize(name));
        d.push(SEP_ID);
        demos.push(d);
    }
    let x_tokens = vocab.tokenize(x);
    let x_len = x_tokens.len().min(max_len - 2);
    let mut room = max_len - 2 - x_len;
    let mut first_kept = demos.len();
    while first_kept > 0 && demos[first_kept - 1].len() <= room {
        first_kept -= 1;
        room -= demos[first_kept].len();
    }
    let mut seq = vec![CLS_ID];
    for d in &demos[first_kept..] {
        seq.extend_from_slice(d);
    }
    seq.extend_from_slice(&x_tokens[..x_len]);
    seq.push(SEP_ID);
    Ok(seq)
}
