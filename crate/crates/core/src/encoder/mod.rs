//! Small transformer sentence encoder with a hand-written backward pass.
//!
//! Pre-LayerNorm blocks over learned token and absolute position
//! embeddings, a final LayerNorm, a `linear + tanh` pooler and a linear MLM
//! head. Trigger embeddings can be spliced into the input through sentinel
//! ids (see [`trigger_sentinel`]).

mod backward;
mod checkpoint;
mod forward;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::rng::Rng;
use crate::tensors::TensorMap;

pub use backward::{backward, mlm_backward, EncoderGrads, Upstream};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint};
pub(crate) use checkpoint::{get_config, put_config};
pub use forward::{forward, mlm_logits, ForwardOutput, TokenBatch};

/// Token ids at or above this value address rows of a trigger table.
pub const TRIGGER_ID_BASE: u32 = 0x8000_0000;

pub fn trigger_sentinel(row: usize) -> u32 {
    TRIGGER_ID_BASE + row as u32
}

pub fn trigger_row(id: u32) -> Option<usize> {
    (id >= TRIGGER_ID_BASE).then(|| (id - TRIGGER_ID_BASE) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    /// The `<cls>` position (first position when no `<cls>` is present).
    FirstToken,
    /// Mean over unmasked positions.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionScale {
    SqrtDk,
    Dk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
    pub attention_scale: AttentionScale,
}

impl EncoderConfig {
    /// Desk-scale defaults: 2 layers, width 64, 4 heads, 128 positions.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            max_seq_len: 128,
            dropout_rate: 0.1,
            pooling: Pooling::FirstToken,
            attention_scale: AttentionScale::SqrtDk,
        }
    }

    /// The gradient-check configuration: 2 layers of width 8.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_seq_len: 16,
            dropout_rate: 0.0,
            pooling: Pooling::FirstToken,
            attention_scale: AttentionScale::SqrtDk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn scale(&self) -> f64 {
        let dk = self.head_dim() as f64;
        match self.attention_scale {
            AttentionScale::SqrtDk => dk.sqrt(),
            AttentionScale::Dk => dk,
        }
    }

    /// Every tensor name with its shape, in a fixed order.
    pub fn tensor_shapes(&self) -> Vec<(String, (usize, usize))> {
        let (v, d, f, l) = (self.vocab_size, self.d_model, self.d_ff, self.max_seq_len);
        let mut out = vec![
            ("embeddings.token".to_string(), (v, d)),
            ("embeddings.position".to_string(), (l, d)),
        ];
        for i in 0..self.n_layers {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.extend([
                (p("ln1.gamma"), (1, d)),
                (p("ln1.beta"), (1, d)),
                (p("attn.q.weight"), (d, d)),
                (p("attn.q.bias"), (1, d)),
                (p("attn.k.weight"), (d, d)),
                (p("attn.k.bias"), (1, d)),
                (p("attn.v.weight"), (d, d)),
                (p("attn.v.bias"), (1, d)),
                (p("attn.out.weight"), (d, d)),
                (p("attn.out.bias"), (1, d)),
                (p("ln2.gamma"), (1, d)),
                (p("ln2.beta"), (1, d)),
                (p("ffn.in.weight"), (d, f)),
                (p("ffn.in.bias"), (1, f)),
                (p("ffn.out.weight"), (f, d)),
                (p("ffn.out.bias"), (1, d)),
            ]);
        }
        out.extend([
            ("final_ln.gamma".to_string(), (1, d)),
            ("final_ln.beta".to_string(), (1, d)),
            ("pooler.weight".to_string(), (d, d)),
            ("pooler.bias".to_string(), (1, d)),
            ("mlm.weight".to_string(), (d, v)),
            ("mlm.bias".to_string(), (1, v)),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(_, (r, c))| r * c).sum()
    }
}

/// All learnable encoder tensors, addressable by name.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tensors: TensorMap,
}

impl EncoderParams {
    /// Embeddings ~ N(0, 0.02); weights ~ N(0, 2/(fan_in + fan_out));
    /// biases and LayerNorm shifts 0, LayerNorm gains 1.
    pub fn init(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut tensors = TensorMap::new();
        for (name, (r, c)) in config.tensor_shapes() {
            let t = if name.ends_with(".gamma") {
                Array2::ones((r, c))
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                Array2::zeros((r, c))
            } else {
                let std = if name.starts_with("embeddings.") {
                    0.02
                } else {
                    (2.0 / (r + c) as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("valid std");
                Array2::from_shape_simple_fn((r, c), || normal.sample(rng))
            };
            tensors.insert(name, t);
        }
        Ok(Self { config, tensors })
    }

    pub fn get(&self, name: &str) -> &Mat {
        self.tensors.expect(name)
    }

    pub fn token_embeddings(&self) -> &Mat {
        self.get("embeddings.token")
    }

    /// Checks that names and shapes agree with the config.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = self.config.tensor_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, (r, c)) in expected {
            match self.tensors.get(&name) {
                Some(t) if t.dim() == (r, c) => {}
                Some(t) => {
                    return Err(Error::ConfigMismatch(format!(
                        "{name}: expected {r}x{c}, found {}x{}",
                        t.nrows(),
                        t.ncols()
                    )))
                }
                None => return Err(Error::ConfigMismatch(format!("missing tensor {name}"))),
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the checkpoint serialization.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(checkpoint_bytes(self)))
    }
}

/// A pooled sentence vector and its unit-normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub raw: Vec<f64>,
    pub unit: Vec<f64>,
}

impl SentenceEmbedding {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit = if norm > 0.0 {
            raw.iter().map(|v| v / norm).collect()
        } else {
            raw.clone()
        };
        Self { raw, unit }
    }

    pub fn norm(&self) -> f64 {
        self.raw.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Encodes whole sentences with dropout off, in chunks of `batch_size`.
pub fn embed_sequences(
    params: &EncoderParams,
    seqs: &[Vec<u32>],
    batch_size: usize,
) -> Result<Vec<SentenceEmbedding>> {
    let mut out = Vec::with_capacity(seqs.len());
    let mut rng = crate::rng::rng_from_seed(0);
    for chunk in seqs.chunks(batch_size.max(1)) {
        let batch = TokenBatch::from_sequences(chunk);
        let fwd = forward(params, &batch, None, false, &mut rng)?;
        out.extend(fwd.embeddings());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn param_count_is_a_function_of_config() {
        let cfg = EncoderConfig::tiny(20);
        let p = EncoderParams::init(cfg.clone(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(p.tensors.scalar_count(), cfg.param_count());
        let q = EncoderParams::init(cfg.clone(), &mut rng_from_seed(1)).unwrap();
        assert_eq!(q.tensors.scalar_count(), p.tensors.scalar_count());
        p.check_shapes().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut cfg = EncoderConfig::tiny(10);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::tiny(10);
        cfg.max_seq_len = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::tiny(10);
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scaling_modes() {
        let mut cfg = EncoderConfig::desk(10);
        assert_eq!(cfg.scale(), 4.0);
        cfg.attention_scale = AttentionScale::Dk;
        assert_eq!(cfg.scale(), 16.0);
    }

    #[test]
    fn unit_norm() {
        let e = SentenceEmbedding::from_raw(vec![3.0, 4.0]);
        assert!((e.unit.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        let z = SentenceEmbedding::from_raw(vec![0.0, 0.0]);
        assert_eq!(z.unit, vec![0.0, 0.0]);
    }
}
