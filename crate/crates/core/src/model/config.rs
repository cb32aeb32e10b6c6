use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub latent: usize,
    pub vocab_size: usize,
    pub max_knowledge: usize,
    pub max_context: usize,
    /// Response slots, including the leading `[BOS]` in generation mode.
    pub max_response: usize,
    pub max_turns: usize,
    pub ln_eps: f64,
}

pub const NUM_ROLES: usize = 4;

impl ModelConfig {
    /// Two layers, four heads, width 64, five latent acts.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 64,
            ffn: 256,
            latent: 5,
            vocab_size,
            max_knowledge: 48,
            max_context: 32,
            max_response: 16,
            max_turns: 16,
            ln_eps: 1e-5,
        }
    }

    pub fn max_positions(&self) -> usize {
        1 + self.max_knowledge + self.max_context + self.max_response + 1
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ffn", self.ffn),
            ("latent", self.latent),
            ("vocab_size", self.vocab_size),
            ("max_knowledge", self.max_knowledge),
            ("max_context", self.max_context),
            ("max_turns", self.max_turns),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model config `{name}` must be positive")));
        }
        if self.max_response < 2 {
            return Err(Error::invalid("max_response must leave room for [BOS] and one token"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::invalid("ln_eps must be positive"));
        }
        Ok(())
    }

    /// Every parameter name with its shape, in creation order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f, v, k) = (self.hidden, self.ffn, self.vocab_size, self.latent);
        let mut out = vec![
            ("embed.token".to_string(), vec![v, d]),
            ("embed.position".to_string(), vec![self.max_positions(), d]),
            ("embed.role".to_string(), vec![NUM_ROLES, d]),
            ("embed.turn".to_string(), vec![self.max_turns, d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            out.extend([
                (p("ln1.gamma"), vec![d]),
                (p("ln1.beta"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.bq"), vec![d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.bk"), vec![d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.bv"), vec![d]),
                (p("attn.wo"), vec![d, d]),
                (p("attn.bo"), vec![d]),
                (p("ln2.gamma"), vec![d]),
                (p("ln2.beta"), vec![d]),
                (p("ffn.w1"), vec![d, f]),
                (p("ffn.b1"), vec![f]),
                (p("ffn.w2"), vec![f, d]),
                (p("ffn.b2"), vec![d]),
            ]);
        }
        out.extend([
            ("final_ln.gamma".to_string(), vec![d]),
            ("final_ln.beta".to_string(), vec![d]),
            ("out.w".to_string(), vec![d, v]),
            ("out.b".to_string(), vec![v]),
            ("posterior.w".to_string(), vec![d, k]),
            ("posterior.b".to_string(), vec![k]),
            ("gate.w".to_string(), vec![d, 1]),
            ("gate.b".to_string(), vec![1]),
            ("bow.w".to_string(), vec![d, v]),
            ("bow.b".to_string(), vec![v]),
            ("switch.w".to_string(), vec![d, 1]),
            ("switch.b".to_string(), vec![1]),
            ("pointer.w".to_string(), vec![d, d]),
        ]);
        out
    }
}
