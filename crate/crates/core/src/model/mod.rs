//! The dialogue network: input assembly, the shared transformer, latent
//! posterior, pointer-generator output, auxiliary heads and decoding.

mod config;
mod generate;
mod grid;
mod mix;
mod network;

pub use config::{ModelConfig, NUM_ROLES};
pub use generate::{Attribution, DecodeConfig, GenerationResult, Hypothesis, Strategy, TokenSource};
pub use grid::{
    assemble_input, assign_placeholders, ExtendedVocab, InputGrid, MaskMode, Segment, ROLE_BOT, ROLE_KNOWLEDGE, ROLE_LATENT, ROLE_USER,
};
pub use mix::{mix_distribution, mixture_terms};
pub use network::{DecodeOutput, DialogueModel, LatentChoice, LossInput, LossParts, WordDropout};
