#![allow(dead_code)]

use pkchat_core::model::{DialogueModel, ModelConfig};
use pkchat_core::text::{Utterance, Vocab};

pub const TEXTS: &[&str] = &[
    "basalt is_a igneous rock",
    "basalt formed_by lava cooling",
    "granite is_a igneous rock",
    "what is the formed_by of basalt ?",
    "which is the is_a of granite ?",
    "it is igneous rock .",
    "it is lava cooling .",
];

pub fn vocab(num_latent: usize) -> Vocab {
    Vocab::build(TEXTS.iter().copied(), 1, num_latent).unwrap()
}

pub fn small_config(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 16,
        ffn: 32,
        latent: vocab.num_latent(),
        vocab_size: vocab.len(),
        max_knowledge: 24,
        max_context: 16,
        max_response: 8,
        max_turns: 8,
        ln_eps: 1e-5,
    }
}

pub fn small_model(num_latent: usize, seed: u64) -> DialogueModel {
    let v = vocab(num_latent);
    let cfg = small_config(&v);
    DialogueModel::new(cfg, v, seed).unwrap()
}

pub fn knowledge() -> Vec<String> {
    vec!["basalt is_a igneous rock".into(), "basalt formed_by lava cooling".into()]
}

pub fn negative() -> Vec<String> {
    vec!["granite is_a igneous rock".into()]
}

pub fn context() -> Vec<Utterance> {
    vec![Utterance::user("what is the formed_by of basalt ?")]
}
