//! Flat `key = value` configuration with defaults, file values and flag
//! overrides, in that order of precedence.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::{NoiseConfig, PairMode};
use crate::database::DatabaseConfig;
use crate::encoder::{AttentionScale, EncoderConfig, Pooling};
use crate::error::{Error, Result};
use crate::finetune::{FinetuneConfig, InputMode, Placement, TriggerConfig, TriggerPhase};
use crate::pretrain::PretrainConfig;

/// Every recognised key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    ("analysis.exclude_tasks", ""),
    ("analysis.top_n", "10"),
    ("corpus.min_hashtag_count", "100"),
    ("corpus.vocab_size", "5000"),
    ("database.cap", "500"),
    ("encoder.attention_scale", "sqrt_dk"),
    ("encoder.d_ff", "256"),
    ("encoder.d_model", "64"),
    ("encoder.dropout", "0.1"),
    ("encoder.max_seq_len", "128"),
    ("encoder.n_heads", "4"),
    ("encoder.n_layers", "2"),
    ("encoder.pooling", "first_token"),
    ("finetune.batch_size", "16"),
    ("finetune.epochs", "30"),
    ("finetune.init_scale", "auto"),
    ("finetune.input_mode", "retrieval"),
    ("finetune.k_retrieved", "1"),
    ("finetune.max_len", "128"),
    ("finetune.metric", "macro_f1"),
    ("finetune.patience", "5"),
    ("finetune.peak_lr", "0.001"),
    ("finetune.placement", "middle"),
    ("finetune.runs", "10"),
    ("finetune.trigger_phase", "per_epoch"),
    ("finetune.triggers", "5"),
    ("finetune.warmup_fraction", "0.1"),
    ("pretrain.alpha", "0.1"),
    ("pretrain.batch_size", "32"),
    ("pretrain.checkpoint_every", "0"),
    ("pretrain.epochs", "10"),
    ("pretrain.mask_rate", "0.15"),
    ("pretrain.p_delete", "0.25"),
    ("pretrain.p_segment", "0.25"),
    ("pretrain.pack_fraction", "0.5"),
    ("pretrain.pack_max_len", "48"),
    ("pretrain.pair_mode", "hashtag"),
    ("pretrain.pairs_per_epoch", "auto"),
    ("pretrain.peak_lr", "0.001"),
    ("pretrain.tau", "0.05"),
    ("pretrain.warmup_fraction", "0.1"),
    ("seed", "0"),
    ("sweep.k_values", "0,1,2,3"),
    ("sweep.placements", "middle"),
    ("sweep.triggers", "5"),
    ("threads", "auto"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse_into(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`", i + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.parse_into(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown setting {key:?}"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("cannot parse {key} = {raw:?}")))
    }

    fn get_auto<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("cannot parse {key} item {s:?}")))
            })
            .collect()
    }

    /// `key = value` lines for the given key prefixes, sorted.
    pub fn canonical(&self, prefixes: &[&str]) -> String {
        self.values
            .iter()
            .filter(|(k, _)| prefixes.is_empty() || prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Digest of [`Settings::canonical`], leaving out `threads`, which
    /// never changes results.
    pub fn digest(&self, prefixes: &[&str]) -> String {
        let text: String = self
            .canonical(prefixes)
            .lines()
            .filter(|l| !l.starts_with("threads ="))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(text))
    }

    /// Worker cap: the `threads` setting, else `HICL_THREADS`, else all cores.
    pub fn threads(&self) -> Result<Option<usize>> {
        Ok(self.get_auto("threads")?.or_else(crate::finetune::thread_cap))
    }

    pub fn encoder_config(&self, vocab_size: usize) -> Result<EncoderConfig> {
        let pooling = match self.raw("encoder.pooling") {
            "first_token" | "cls" => Pooling::FirstToken,
            "mean" => Pooling::Mean,
            other => return Err(Error::Config(format!("unknown pooling {other:?}"))),
        };
        let attention_scale = match self.raw("encoder.attention_scale") {
            "sqrt_dk" => AttentionScale::SqrtDk,
            "dk" => AttentionScale::Dk,
            other => return Err(Error::Config(format!("unknown attention_scale {other:?}"))),
        };
        let cfg = EncoderConfig {
            vocab_size,
            d_model: self.get("encoder.d_model")?,
            n_heads: self.get("encoder.n_heads")?,
            n_layers: self.get("encoder.n_layers")?,
            d_ff: self.get("encoder.d_ff")?,
            max_seq_len: self.get("encoder.max_seq_len")?,
            dropout_rate: self.get("encoder.dropout")?,
            pooling,
            attention_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pretrain_config(&self, seed: u64) -> Result<PretrainConfig> {
        let pair_mode = match self.raw("pretrain.pair_mode") {
            "hashtag" => PairMode::HashtagPair,
            "dropout_self" => PairMode::DropoutSelf,
            other => return Err(Error::Config(format!("unknown pair_mode {other:?}"))),
        };
        let cfg = PretrainConfig {
            tau: self.get("pretrain.tau")?,
            alpha: self.get("pretrain.alpha")?,
            batch_size: self.get("pretrain.batch_size")?,
            peak_lr: self.get("pretrain.peak_lr")?,
            warmup_fraction: self.get("pretrain.warmup_fraction")?,
            epochs: self.get("pretrain.epochs")?,
            mask_rate: self.get("pretrain.mask_rate")?,
            seed,
            pair_mode,
            noise: NoiseConfig::new(self.get("pretrain.p_delete")?, self.get("pretrain.p_segment")?)?,
            pack_fraction: self.get("pretrain.pack_fraction")?,
            pack_max_len: self.get("pretrain.pack_max_len")?,
            pairs_per_epoch: self.get_auto("pretrain.pairs_per_epoch")?,
            ..PretrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn database_config(&self, seed: u64) -> Result<DatabaseConfig> {
        let cap: usize = self.get("database.cap")?;
        if cap == 0 {
            return Err(Error::Config("database.cap must be >= 1".into()));
        }
        Ok(DatabaseConfig {
            per_hashtag_cap: cap,
            seed,
        })
    }

    pub fn trigger_config(&self, placement: Placement, n: usize) -> Result<TriggerConfig> {
        Ok(TriggerConfig {
            init_scale: self.get_auto("finetune.init_scale")?,
            ..TriggerConfig::preset(placement, n)
        })
    }

    pub fn finetune_config(&self, backbone_vocab: usize) -> Result<FinetuneConfig> {
        let trigger_phase = match self.raw("finetune.trigger_phase") {
            "per_epoch" => TriggerPhase::PerEpoch,
            "per_step" => TriggerPhase::PerStep,
            "off" => TriggerPhase::Off,
            other => return Err(Error::Config(format!("unknown trigger_phase {other:?}"))),
        };
        let input_mode = match self.raw("finetune.input_mode") {
            "retrieval" => InputMode::Retrieval,
            "demonstrations" => InputMode::Demonstrations,
            other => return Err(Error::Config(format!("unknown input_mode {other:?}"))),
        };
        let placement: Placement = self.get_str("finetune.placement")?;
        let runs: usize = self.get("finetune.runs")?;
        let cfg = FinetuneConfig {
            epochs: self.get("finetune.epochs")?,
            batch_size: self.get("finetune.batch_size")?,
            peak_lr: self.get("finetune.peak_lr")?,
            warmup_fraction: self.get("finetune.warmup_fraction")?,
            patience: self.get("finetune.patience")?,
            k_retrieved: self.get("finetune.k_retrieved")?,
            trigger: self.trigger_config(placement, self.get("finetune.triggers")?)?,
            trigger_phase,
            input_mode,
            seeds: (0..runs as u64).collect(),
            metric: self.get_str("finetune.metric")?,
            max_len: self.get("finetune.max_len")?,
            backbone: Some(self.encoder_config(backbone_vocab)?),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn get_str<T: FromStr<Err = Error>>(&self, key: &str) -> Result<T> {
        self.raw(key).parse()
    }

    pub fn sweep_grid(&self) -> Result<(Vec<Placement>, Vec<usize>, Vec<usize>)> {
        let placements = self
            .raw("sweep.placements")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Placement>>>()?;
        Ok((placements, self.get_list("sweep.triggers")?, self.get_list("sweep.k_values")?))
    }

    pub fn exclude_tasks(&self) -> Vec<String> {
        self.raw("analysis.exclude_tasks")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect()
    }
}
