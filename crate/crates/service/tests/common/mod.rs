#![allow(dead_code)]

use pkchat_core::keywords::KeywordExtractor;
use pkchat_core::kg::fixture_kg;
use pkchat_core::model::{DecodeConfig, DialogueModel, ModelConfig};
use pkchat_core::text::Vocab;
use pkchat_service::orchestrator::kg_stats;
use pkchat_service::Orchestrator;

pub fn tiny_orchestrator(tau: f64) -> Orchestrator {
    let texts = [
        "basalt is_a igneous rock",
        "basalt formed_by lava cooling",
        "granite is_a igneous rock",
        "what is the formed_by of basalt ?",
        "it is lava cooling .",
    ];
    let vocab = Vocab::build(texts, 1, 2).unwrap();
    let cfg = ModelConfig {
        layers: 1,
        heads: 2,
        hidden: 8,
        ffn: 16,
        latent: 2,
        vocab_size: vocab.len(),
        max_knowledge: 24,
        max_context: 24,
        max_response: 6,
        max_turns: 8,
        ln_eps: 1e-5,
    };
    let model = DialogueModel::new(cfg, vocab, 3).unwrap();
    let kg = fixture_kg();
    let extractor = KeywordExtractor::new(kg_stats(&kg), None);
    let mut o = Orchestrator::new(model, kg, extractor, tau);
    o.decode = DecodeConfig { max_len: 4, ..DecodeConfig::default() };
    o
}
