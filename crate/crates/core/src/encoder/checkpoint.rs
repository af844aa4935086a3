//! Encoder checkpoint file:
//!
//! ```text
//! magic "HICLCKPT" | version u32
//! vocab_size u32 | d_model u32 | n_heads u32 | n_layers u32 | d_ff u32 | max_seq_len u32
//! dropout_rate f64 | pooling u8 | attention_scale u8
//! record count u32, then per record:
//!   name (u32 len + UTF-8) | rank u32 (=2) | rows u64 | cols u64 | rows*cols f32
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::{AttentionScale, EncoderConfig, EncoderParams, Pooling};
use crate::binio::{get_records, put_records, ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HICLCKPT";
const VERSION: u32 = 1;

pub(crate) fn put_config(w: &mut ByteWriter, c: &EncoderConfig) {
    for v in [c.vocab_size, c.d_model, c.n_heads, c.n_layers, c.d_ff, c.max_seq_len] {
        w.u32(v as u32);
    }
    w.f64(c.dropout_rate);
    w.u8(match c.pooling {
        Pooling::FirstToken => 0,
        Pooling::Mean => 1,
    });
    w.u8(match c.attention_scale {
        AttentionScale::SqrtDk => 0,
        AttentionScale::Dk => 1,
    });
}

pub(crate) fn get_config(r: &mut ByteReader<'_>) -> Result<EncoderConfig> {
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let dropout_rate = r.f64()?;
    let pooling = match r.u8()? {
        0 => Pooling::FirstToken,
        1 => Pooling::Mean,
        x => return Err(Error::Format(format!("unknown pooling tag {x}"))),
    };
    let attention_scale = match r.u8()? {
        0 => AttentionScale::SqrtDk,
        1 => AttentionScale::Dk,
        x => return Err(Error::Format(format!("unknown attention scale tag {x}"))),
    };
    let cfg = EncoderConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        n_layers: dims[3],
        d_ff: dims[4],
        max_seq_len: dims[5],
        dropout_rate,
        pooling,
        attention_scale,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn checkpoint_bytes(params: &EncoderParams) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    put_config(&mut w, &params.config);
    put_records(&mut w, &params.tensors);
    w.buf
}

pub fn save_checkpoint(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; with `expected`, any config difference is refused.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&EncoderConfig>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = get_config(&mut r)?;
    if let Some(exp) = expected {
        if *exp != config {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {config:?}, expected {exp:?}"
            )));
        }
    }
    let tensors = get_records(&mut r)?;
    r.finish()?;
    let params = EncoderParams { config, tensors };
    params.check_shapes()?;
    Ok(params)
}
