use std::collections::BTreeMap;

use rand::Rng as _;

use crate::corpus::{MASK_ID, NUM_SPECIAL};
use crate::encoder::trigger_row;
use crate::rng::Rng;

/// What happens to a position once selected for prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmSplit {
    pub to_mask: f64,
    pub to_random: f64,
}

impl Default for MlmSplit {
    /// 80% `<mask>`, 10% random token, 10% unchanged.
    fn default() -> Self {
        Self {
            to_mask: 0.8,
            to_random: 0.1,
        }
    }
}

/// Selects each non-special position with probability `mask_rate` and
/// corrupts it per `split`. Returns the corrupted sequence and
/// `position -> original id` targets.
pub fn apply_mlm_mask(
    tokens: &[u32],
    mask_rate: f64,
    split: MlmSplit,
    vocab_size: usize,
    rng: &mut Rng,
) -> (Vec<u32>, BTreeMap<usize, u32>) {
    let mut out = tokens.to_vec();
    let mut targets = BTreeMap::new();
    for (pos, &id) in tokens.iter().enumerate() {
        if (id as usize) < NUM_SPECIAL || trigger_row(id).is_some() {
            continue;
        }
        if rng.random::<f64>() >= mask_rate {
            continue;
        }
        targets.insert(pos, id);
        let r: f64 = rng.random();
        if r < split.to_mask {
            out[pos] = MASK_ID;
        } else if r < split.to_mask + split.to_random && vocab_size > NUM_SPECIAL {
            out[pos] = rng.random_range(NUM_SPECIAL as u32..vocab_size as u32);
        }
    }
    (out, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CLS_ID, SEP_ID};
    use crate::rng::rng_from_seed;

    #[test]
    fn zero_rate_leaves_sequence() {
        let seq = vec![CLS_ID, 10, 11, 12, SEP_ID];
        let (out, t) = apply_mlm_mask(&seq, 0.0, MlmSplit::default(), 50, &mut rng_from_seed(0));
        assert_eq!(out, seq);
        assert!(t.is_empty());
    }

    #[test]
    fn full_rate_forced_mask() {
        let seq = vec![CLS_ID, 10, 11, 12, SEP_ID];
        let split = MlmSplit {
            to_mask: 1.0,
            to_random: 0.0,
        };
        let (out, t) = apply_mlm_mask(&seq, 1.0, split, 50, &mut rng_from_seed(0));
        assert_eq!(out, vec![CLS_ID, MASK_ID, MASK_ID, MASK_ID, SEP_ID]);
        assert_eq!(t.into_iter().collect::<Vec<_>>(), vec![(1, 10), (2, 11), (3, 12)]);
    }

    #[test]
    fn selection_rate_is_binomial() {
        let seq: Vec<u32> = (0..10_000).map(|i| 5 + (i % 40) as u32).collect();
        let (_, t) = apply_mlm_mask(&seq, 0.15, MlmSplit::default(), 50, &mut rng_from_seed(21));
        let frac = t.len() as f64 / 10_000.0;
        let sigma = (0.15f64 * 0.85 / 10_000.0).sqrt();
        assert!((frac - 0.15).abs() <= 3.0 * sigma, "fraction {frac}");
    }
}
