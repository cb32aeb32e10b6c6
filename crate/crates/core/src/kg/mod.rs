//! In-memory triple store with exact entity lookup and neighborhood recall.

mod store;
mod synth;

pub use store::{
    linearize, normalize, Direction, KgStore, LoadReport, Neighbor, Recall, Triple, TripleFormat,
};
pub use synth::{fixture_kg, synth_kg, topic_relations, SynthKgOptions};
