use serde::{Deserialize, Serialize};

use super::EncoderError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEncoderConfig")]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub type_vocab: usize,
    pub dropout: f64,
    pub seed: u64,
}

/// On-disk form, where `intermediate_size` may be omitted.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEncoderConfig {
    num_layers: usize,
    num_heads: usize,
    hidden_size: usize,
    intermediate_size: Option<usize>,
    vocab_size: usize,
    #[serde(default = "default_max_positions")]
    max_positions: usize,
    #[serde(default = "default_type_vocab")]
    type_vocab: usize,
    #[serde(default = "default_dropout")]
    dropout: f64,
    #[serde(default)]
    seed: u64,
}

fn default_max_positions() -> usize {
    512
}

fn default_type_vocab() -> usize {
    2
}

fn default_dropout() -> f64 {
    0.1
}

impl TryFrom<RawEncoderConfig> for EncoderConfig {
    type Error = EncoderError;

    fn try_from(r: RawEncoderConfig) -> Result<Self, EncoderError> {
        let cfg = EncoderConfig {
            num_layers: r.num_layers,
            num_heads: r.num_heads,
            hidden_size: r.hidden_size,
            intermediate_size: r.intermediate_size.unwrap_or(4 * r.hidden_size),
            vocab_size: r.vocab_size,
            max_positions: r.max_positions,
            type_vocab: r.type_vocab,
            dropout: r.dropout,
            seed: r.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EncoderConfig {
    pub fn new(num_layers: usize, num_heads: usize, hidden_size: usize, vocab_size: usize) -> Self {
        Self {
            num_layers,
            num_heads,
            hidden_size,
            intermediate_size: 4 * hidden_size,
            vocab_size,
            max_positions: 512,
            type_vocab: 2,
            dropout: 0.1,
            seed: 0,
        }
    }

    /// 12 layers, 12 heads, hidden 768, vocabulary 32000.
    pub fn base() -> Self {
        Self::new(12, 12, 768, 32000)
    }

    /// Desk-scale default: 2 layers, 2 heads, hidden 128, vocabulary 8000.
    pub fn tiny() -> Self {
        Self::new(2, 2, 128, 8000)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.hidden_size == 0 || self.num_heads == 0 {
            return bad("hidden_size and num_heads must be positive".into());
        }
        if self.hidden_size % self.num_heads != 0 {
            return bad(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.intermediate_size == 0 || self.vocab_size == 0 || self.max_positions == 0 {
            return bad("intermediate_size, vocab_size and max_positions must be positive".into());
        }
        if self.type_vocab == 0 {
            return bad("type_vocab must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Closed-form parameter count, output projection tied to the word
/// embeddings.
pub fn count_params(cfg: &EncoderConfig) -> u64 {
    let h = cfg.hidden_size as u64;
    let i = cfg.intermediate_size as u64;
    let v = cfg.vocab_size as u64;
    let p = cfg.max_positions as u64;
    let t = cfg.type_vocab as u64;
    let embeddings = v * h + p * h + t * h + 2 * h;
    let attention = 4 * (h * h + h) + 2 * h;
    let ffn = (h * i + i) + (i * h + h) + 2 * h;
    let mlm_head = (h * h + h) + 2 * h + v;
    embeddings + cfg.num_layers as u64 * (attention + ffn) + mlm_head
}
