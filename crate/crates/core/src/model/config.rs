use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Tagger plus span decoder.
    Editor,
    /// Baseline decoding the whole next revision; only gPPL is defined.
    Seq2seq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Markov order: the number of previous revisions conditioning the next edit.
    pub order_n: usize,
    pub vocab_size: usize,
    /// Longest encoder input (document plus optional comment) and longest
    /// decoded span, in tokens.
    pub max_len: usize,
    pub max_history_spans: usize,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            n_heads: 4,
            ff_dim: 1024,
            enc_layers: 4,
            dec_layers: 4,
            order_n: 1,
            vocab_size: 4096,
            max_len: 512,
            max_history_spans: 256,
            mode: Mode::Editor,
        }
    }
}

impl ModelConfig {
    /// The 768 / 3072 / 6+6 / 2048 architecture.
    pub fn large(vocab_size: usize, order_n: usize) -> Self {
        ModelConfig {
            d_model: 768,
            n_heads: 12,
            ff_dim: 3072,
            enc_layers: 6,
            dec_layers: 6,
            order_n,
            vocab_size,
            max_len: 2048,
            max_history_spans: 512,
            mode: Mode::Editor,
        }
    }

    pub fn tiny(vocab_size: usize, order_n: usize) -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 2,
            ff_dim: 64,
            enc_layers: 1,
            dec_layers: 1,
            order_n,
            vocab_size,
            max_len: 64,
            max_history_spans: 64,
            mode: Mode::Editor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ff_dim", self.ff_dim),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("order_n", self.order_n),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size < crate::tokenizer::BYTE_OFFSET as usize + 1 {
            return bad(format!("vocab_size {} too small", self.vocab_size));
        }
        Ok(())
    }
}
