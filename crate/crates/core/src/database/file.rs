use std::path::Path;

use super::{DatabaseConfig, EmbeddingIndex, IndexMeta, StoredPost};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::nn::Mat;

const MAGIC: &[u8; 8] = b"HICLINDX";
const VERSION: u32 = 1;

/// Header, then length-prefixed posts, then the row-major f32 matrix.
pub fn index_bytes(index: &EmbeddingIndex) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(index.len() as u64);
    w.u32(index.d_model() as u32);
    w.str(&index.meta.encoder_digest);
    w.u64(index.meta.config.per_hashtag_cap as u64);
    w.u64(index.meta.config.seed);
    w.u64(index.meta.built_at);
    for p in &index.posts {
        w.str(&p.id);
        w.str(&p.text);
    }
    for v in index.matrix.iter() {
        w.f32(*v as f32);
    }
    w.buf
}

pub fn save_index(index: &EmbeddingIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, index_bytes(index)).map_err(|e| Error::io(path, e))
}

/// Loads an index; with `active_digest`, an index built by a different
/// encoder is refused.
pub fn load_index(path: impl AsRef<Path>, active_digest: Option<&str>) -> Result<EmbeddingIndex> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported index version {version}")));
    }
    let count = r.u64()? as usize;
    let d = r.u32()? as usize;
    let encoder_digest = r.str()?;
    let config = DatabaseConfig {
        per_hashtag_cap: r.u64()? as usize,
        seed: r.u64()?,
    };
    let built_at = r.u64()?;
    let mut posts = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let id = r.str()?;
        let text = r.str()?;
        posts.push(StoredPost { id, text });
    }
    let mut data = Vec::with_capacity(count * d);
    for _ in 0..count * d {
        data.push(r.f32()? as f64);
    }
    r.finish()?;
    let matrix = Mat::from_shape_vec((count, d), data).expect("shape matches payload");
    let index = EmbeddingIndex::from_parts(
        posts,
        matrix,
        IndexMeta {
            encoder_digest,
            config,
            built_at,
        },
    )?;
    if let Some(active) = active_digest {
        index.check_digest(active)?;
    }
    Ok(index)
}
