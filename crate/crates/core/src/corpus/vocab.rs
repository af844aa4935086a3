use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::RawPost;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const NUM_SPECIAL: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "<unk>", "<cls>", "<sep>", "<mask>"];

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#\w+|\w+|[^\w\s]").expect("valid regex"))
}

/// Lowercased word-level tokens; hashtags stay whole, punctuation is one
/// token per character.
pub fn tokenize_words(text: &str) -> Vec<String> {
    token_re()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

/// `<cls> tokens <sep>`, truncating the body so the whole fits in `max_len`.
pub fn encode_single(tokens: &[u32], max_len: usize) -> Vec<u32> {
    let body = max_len.saturating_sub(2).min(tokens.len());
    let mut seq = Vec::with_capacity(body + 2);
    seq.push(CLS_ID);
    seq.extend_from_slice(&tokens[..body]);
    seq.push(SEP_ID);
    seq
}

/// Word-level vocabulary with the five reserved tokens at ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Builds from an explicit token list; reserved tokens are prepended.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Format(format!("vocab id {i} must be {s}")));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        tokenize_words(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK_ID as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tokens = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_full_list(tokens)
    }
}

/// The `size - 5` most frequent tokens after the reserved ones; ties broken
/// by token string so the result is independent of corpus order.
pub fn build_vocab(posts: &[RawPost], size: usize) -> Result<Vocab> {
    if size < NUM_SPECIAL + 1 {
        return Err(Error::Invalid(format!("vocab size must be >= 6, got {size}")));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for p in posts {
        for t in tokenize_words(&p.text) {
            if SPECIAL_TOKENS.contains(&t.as_str()) {
                continue;
            }
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(size - NUM_SPECIAL);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_unk() {
        let posts = vec![RawPost::new("1", "Hello hello world! #Tag")];
        let v = build_vocab(&posts, 100).unwrap();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i as u32));
        }
        assert_eq!(v.id("hello"), Some(5));
        assert_eq!(v.tokenize("never seen"), vec![UNK_ID, UNK_ID]);
        let ids = v.tokenize("hello #tag !");
        assert_eq!(v.detokenize(&ids), "hello #tag !");
    }

    #[test]
    fn tokenizer_keeps_hashtags_whole() {
        assert_eq!(
            tokenize_words("Go #Team_1, go!"),
            vec!["go", "#team_1", ",", "go", "!"]
        );
    }

    #[test]
    fn size_cap_and_tie_break() {
        let posts = vec![RawPost::new("1", "b a c c"), RawPost::new("2", "a b d")];
        let v = build_vocab(&posts, 7).unwrap();
        assert_eq!(&v.tokens()[5..], &["a".to_string(), "b".to_string()]);
        assert!(build_vocab(&posts, 5).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::from_tokens(["x", "y", "#z"]).unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
        std::fs::write(&p, "<pad>\nfoo\n").unwrap();
        assert!(Vocab::load(&p).is_err());
    }

    #[test]
    fn single_encoding_frames_and_truncates() {
        assert_eq!(encode_single(&[7, 8, 9], 4), vec![CLS_ID, 7, 8, SEP_ID]);
        assert_eq!(encode_single(&[], 4), vec![CLS_ID, SEP_ID]);
    }
}
