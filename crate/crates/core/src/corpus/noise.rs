use rand::Rng as _;

use super::hashtags::hashtag_spans;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-occurrence probabilities of deleting or segmenting a hashtag; the
/// remaining mass leaves it intact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub p_delete: f64,
    pub p_segment: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            p_delete: 0.25,
            p_segment: 0.25,
        }
    }
}

impl NoiseConfig {
    pub fn new(p_delete: f64, p_segment: f64) -> Result<Self> {
        let cfg = Self {
            p_delete,
            p_segment,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn none() -> Self {
        Self {
            p_delete: 0.0,
            p_segment: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_delete) || !ok(self.p_segment) || self.p_delete + self.p_segment > 1.0 + 1e-12
        {
            return Err(Error::Config(format!(
                "noise probabilities must lie in [0,1] and sum to at most 1, got delete={} segment={}",
                self.p_delete, self.p_segment
            )));
        }
        Ok(())
    }
}

/// Splits a hashtag into lowercase words: `#ActOnClimate` -> `act on climate`.
///
/// Boundaries are lowercase->uppercase, letter->digit and underscores.
pub fn segment_hashtag(tag: &str) -> String {
    let body = tag.strip_prefix('#').unwrap_or(tag);
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<char> = None;
    for c in body.chars() {
        if c == '_' {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            let boundary = (p.is_lowercase() && c.is_uppercase())
                || (p.is_alphabetic() && c.is_numeric());
            if boundary && !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        }
        cur.extend(c.to_lowercase());
        prev = Some(c);
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words.join(" ")
}

/// Randomly deletes or segments each hashtag occurrence independently.
///
/// One uniform draw is consumed per occurrence whatever the outcome, so the
/// stream position after the call depends only on the text.
pub fn noise_hashtags(text: &str, cfg: &NoiseConfig, rng: &mut Rng) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut deleted_any = false;
    for (start, end) in hashtag_spans(text) {
        let u: f64 = rng.random();
        out.push_str(&text[cursor..start]);
        cursor = end;
        if u < cfg.p_delete {
            deleted_any = true;
            if out.is_empty() || out.ends_with(char::is_whitespace) {
                let rest = &text[cursor..];
                let trimmed = rest.trim_start();
                cursor += rest.len() - trimmed.len();
            }
        } else if u < cfg.p_delete + cfg.p_segment {
            out.push_str(&segment_hashtag(&text[start..end]));
        } else {
            out.push_str(&text[start..end]);
        }
    }
    out.push_str(&text[cursor..]);
    if deleted_any {
        let trimmed_len = out.trim_end().len();
        out.truncate(trimmed_len);
    }
    out
}
