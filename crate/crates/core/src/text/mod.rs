//! Text handling: tokens, vocabulary, the scenario corpus and its tooling.

mod annotate;
mod corpus;
mod synth;
mod tokenize;
mod unify;
mod vocab;

pub use annotate::{auto_annotate, valid_bio, AnnotatedUtterance, AnnotationRecord, EntityMatcher, Tag};
pub use corpus::{
    corpus_stats, parse_corpus, read_corpus, write_corpus, CorpusSummary, Role, Scenario, Utterance,
};
pub use synth::{gen_synthetic_corpus, SynthOptions};
pub use tokenize::{detokenize, tokenize};
pub use unify::{unify_format, ExternalScenario};
pub use vocab::{Vocab, BOS, EOS, KSEP, OOV_SLOTS, PAD, STATUS, UNK};
