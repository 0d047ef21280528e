use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::DEFAULT_INPUT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Transformer,
    Conformer,
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transformer" => Ok(Self::Transformer),
            "conformer" => Ok(Self::Conformer),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Transformer => "transformer",
            Self::Conformer => "conformer",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub attn_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Zero disables the Enhancer.
    pub enh_layers: usize,
    pub enc_ff_dim: usize,
    /// Feed-forward width of decoder and Enhancer layers.
    pub dec_ff_dim: usize,
    pub encoder_kind: EncoderKind,
    pub conformer_kernel: usize,
    /// Enhancer layers 2.. reuse the parameters of decoder layers 2...
    pub share_dec_enh_layers: bool,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    /// Transformer AED-EEND at full size: D=256, 4 heads, 4+4 layers, FF 2048.
    fn default() -> Self {
        Self {
            input_dim: DEFAULT_INPUT_DIM,
            attn_dim: 256,
            heads: 4,
            enc_layers: 4,
            dec_layers: 4,
            enh_layers: 0,
            enc_ff_dim: 2048,
            dec_ff_dim: 2048,
            encoder_kind: EncoderKind::Transformer,
            conformer_kernel: 31,
            share_dec_enh_layers: true,
            dropout: 0.1,
            layer_norm_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-size model with a 4-layer Enhancer sharing decoder layers 2–4.
    pub fn with_enhancer() -> Self {
        Self {
            enh_layers: 4,
            ..Self::default()
        }
    }

    pub fn conformer() -> Self {
        Self {
            encoder_kind: EncoderKind::Conformer,
            enc_ff_dim: 1024,
            dec_ff_dim: 1024,
            ..Self::default()
        }
    }

    pub fn has_enhancer(&self) -> bool {
        self.enh_layers > 0
    }

    pub fn head_dim(&self) -> usize {
        self.attn_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.attn_dim == 0 || !self.attn_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "attention dim {} must be a positive multiple of heads {}",
                self.attn_dim, self.heads
            )));
        }
        if self.conformer_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conformer kernel {} must be odd",
                self.conformer_kernel
            )));
        }
        if self.input_dim == 0 || self.enc_ff_dim == 0 || self.dec_ff_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.dec_layers == 0 {
            return Err(Error::Config("decoder needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "input_dim" => self.input_dim = num(key, value)?,
            "attn_dim" => self.attn_dim = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "enc_layers" => self.enc_layers = num(key, value)?,
            "dec_layers" => self.dec_layers = num(key, value)?,
            "enh_layers" => self.enh_layers = num(key, value)?,
            "enc_ff_dim" => self.enc_ff_dim = num(key, value)?,
            "dec_ff_dim" => self.dec_ff_dim = num(key, value)?,
            "encoder_kind" => self.encoder_kind = value.parse()?,
            "conformer_kernel" => self.conformer_kernel = num(key, value)?,
            "share_dec_enh_layers" => self.share_dec_enh_layers = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "layer_norm_eps" => self.layer_norm_eps = num(key, value)?,
            "init_seed" => self.init_seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("input_dim".into(), self.input_dim.to_string()),
            ("attn_dim".into(), self.attn_dim.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("enc_layers".into(), self.enc_layers.to_string()),
            ("dec_layers".into(), self.dec_layers.to_string()),
            ("enh_layers".into(), self.enh_layers.to_string()),
            ("enc_ff_dim".into(), self.enc_ff_dim.to_string()),
            ("dec_ff_dim".into(), self.dec_ff_dim.to_string()),
            ("encoder_kind".into(), self.encoder_kind.to_string()),
            ("conformer_kernel".into(), self.conformer_kernel.to_string()),
            ("share_dec_enh_layers".into(), self.share_dec_enh_layers.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("layer_norm_eps".into(), self.layer_norm_eps.to_string()),
            ("init_seed".into(), self.init_seed.to_string()),
        ]
    }
}
