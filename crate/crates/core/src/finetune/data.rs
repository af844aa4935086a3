use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocab;
use crate::database::{embed_text, index_bytes, EmbeddingIndex};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    /// Defaults to `<split>-<line>` when the file has none.
    #[serde(default)]
    pub id: String,
    pub text: String,
    pub label: usize,
    /// Precomputed retrieved texts, best first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved: Option<Vec<String>>,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: usize) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            retrieved: None,
        }
    }
}

/// A classification dataset: train/val/test splits and label names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub label_names: Vec<String>,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

fn read_split(path: &Path, split: &str, labels: usize) -> Result<Vec<LabeledExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut ex: LabeledExample = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        if ex.id.is_empty() {
            ex.id = format!("{split}-{i}");
        }
        if ex.label >= labels {
            return Err(Error::Invalid(format!(
                "{}:{}: label {} out of range for {labels} labels",
                path.display(),
                i + 1,
                ex.label
            )));
        }
        out.push(ex);
    }
    Ok(out)
}

fn write_split(path: &Path, rows: &[LabeledExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in rows {
        let plain = LabeledExample {
            retrieved: None,
            ..ex.clone()
        };
        let line = serde_json::to_string(&plain).expect("serializable");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Reads `train.jsonl`, `val.jsonl`, `test.jsonl` and `labels.json`
    /// (an object mapping label id strings to names).
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let labels_path = dir.join("labels.json");
        let raw = std::fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let map: BTreeMap<String, String> =
            serde_json::from_str(&raw).map_err(|e| Error::json(labels_path.display().to_string(), e))?;
        let mut label_names = vec![String::new(); map.len()];
        for (k, v) in map {
            let id: usize = k
                .parse()
                .ok()
                .filter(|&i| i < label_names.len())
                .ok_or_else(|| Error::Format(format!("labels.json: bad label id {k:?}")))?;
            label_names[id] = v;
        }
        let n = label_names.len();
        let split = |s: &str| read_split(&dir.join(format!("{s}.jsonl")), s, n);
        Ok(Self {
            train: split("train")?,
            val: split("val")?,
            test: split("test")?,
            label_names,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_split(&dir.join("train.jsonl"), &self.train)?;
        write_split(&dir.join("val.jsonl"), &self.val)?;
        write_split(&dir.join("test.jsonl"), &self.test)?;
        let map: BTreeMap<String, &String> = self
            .label_names
            .iter()
            .enumerate()
            .map(|(i, n)| (i.to_string(), n))
            .collect();
        let path = dir.join("labels.json");
        std::fs::write(&path, serde_json::to_string_pretty(&map).expect("serializable") + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn labels(&self) -> usize {
        self.label_names.len()
    }

    /// SHA-256 over the split contents and label names.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, rows) in SPLITS.iter().zip([&self.train, &self.val, &self.test]) {
            h.update(name.as_bytes());
            for ex in rows {
                h.update(serde_json::to_string(&(&ex.id, &ex.text, ex.label)).expect("serializable"));
                h.update(b"\n");
            }
        }
        for n in &self.label_names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn split_mut(&mut self, name: &str) -> Option<&mut Vec<LabeledExample>> {
        match name {
            "train" => Some(&mut self.train),
            "val" => Some(&mut self.val),
            "test" => Some(&mut self.test),
            _ => None,
        }
    }
}

/// Frozen #Encoder plus the index it built.
pub struct Retriever<'a> {
    params: &'a EncoderParams,
    vocab: &'a Vocab,
    index: &'a EmbeddingIndex,
}

impl<'a> Retriever<'a> {
    /// Fails if `index` was built by a different encoder.
    pub fn new(params: &'a EncoderParams, vocab: &'a Vocab, index: &'a EmbeddingIndex) -> Result<Self> {
        index.check_digest(&params.digest())?;
        Ok(Self { params, vocab, index })
    }

    pub fn index(&self) -> &EmbeddingIndex {
        self.index
    }

    /// Top-`k` stored texts for `x`, best first, never `x` itself.
    pub fn retrieve(&self, x: &str, k: usize) -> Result<Vec<String>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = embed_text(self.params, self.vocab, x)?;
        Ok(self
            .index
            .query_rows(&q.unit, k, Some(x))
            .into_iter()
            .map(|(row, _)| self.index.posts()[row].text.clone())
            .collect())
    }

    /// Retrieves for every text in parallel (at most `threads` workers, or
    /// `HICL_THREADS`); output order matches input order.
    pub fn retrieve_all(&self, texts: &[&str], k: usize, threads: Option<usize>) -> Result<Vec<Vec<String>>> {
        let threads = threads.or_else(thread_cap).unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| texts.par_iter().map(|t| self.retrieve(t, k)).collect())
    }
}

/// Worker cap from the `HICL_THREADS` environment variable.
pub fn thread_cap() -> Option<usize> {
    std::env::var("HICL_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Cache file name for `(dataset digest, index digest, k)`.
pub fn retrieval_cache_key(dataset_digest: &str, index_digest: &str, k: usize) -> String {
    let mut h = Sha256::new();
    h.update(dataset_digest.as_bytes());
    h.update(b"\n");
    h.update(index_digest.as_bytes());
    h.update(b"\n");
    h.update(k.to_le_bytes());
    format!("retrieval-{}.jsonl", &hex::encode(h.finalize())[..16])
}

pub fn index_digest(index: &EmbeddingIndex) -> String {
    hex::encode(Sha256::digest(index_bytes(index)))
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    id: String,
    retrieved: Vec<String>,
}

/// Fills `retrieved` on every example of every split, reading
/// `<cache_dir>/<key>` when present and writing it otherwise. Returns the
/// cache path. `threads` caps the retrieval workers as in
/// [`Retriever::retrieve_all`].
pub fn attach_retrievals(
    dataset: &mut Dataset,
    retriever: &Retriever<'_>,
    k: usize,
    cache_dir: Option<&Path>,
    threads: Option<usize>,
) -> Result<Option<PathBuf>> {
    let mut seen = std::collections::BTreeSet::new();
    for ex in dataset.train.iter().chain(&dataset.val).chain(&dataset.test) {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::Invalid(format!("example id {:?} appears twice", ex.id)));
        }
    }
    let key = retrieval_cache_key(&dataset.digest(), &index_digest(retriever.index()), k);
    let path = cache_dir.map(|d| d.join(&key));
    let mut cached: BTreeMap<String, Vec<String>> = BTreeMap::new();
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let file = File::open(p).map_err(|e| Error::io(p, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(p, e))?;
            let row: CacheRow =
                serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", p.display(), i + 1), e))?;
            cached.insert(row.id, row.retrieved);
        }
    } else {
        let all: Vec<&LabeledExample> = dataset.train.iter().chain(&dataset.val).chain(&dataset.test).collect();
        let texts: Vec<&str> = all.iter().map(|e| e.text.as_str()).collect();
        let results = retriever.retrieve_all(&texts, k, threads)?;
        let ids: Vec<String> = all.iter().map(|e| e.id.clone()).collect();
        if let Some(p) = &path {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(file);
            for (id, r) in ids.iter().zip(&results) {
                let row = CacheRow {
                    id: id.clone(),
                    retrieved: r.clone(),
                };
                writeln!(w, "{}", serde_json::to_string(&row).expect("serializable")).map_err(|e| Error::io(p, e))?;
            }
            w.flush().map_err(|e| Error::io(p, e))?;
        }
        cached = ids.into_iter().zip(results).collect();
    }
    for split in SPLITS {
        for ex in dataset.split_mut(split).expect("known split") {
            let r = cached
                .get(&ex.id)
                .ok_or_else(|| Error::CacheMismatch(format!("retrieval cache lacks example {:?}", ex.id)))?;
            ex.retrieved = Some(r.clone());
        }
    }
    Ok(path)
}
