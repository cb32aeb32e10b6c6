use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::store::{KgStore, Triple};
use crate::error::{Error, Result};

/// The three-triple store used throughout the examples and tests.
pub fn fixture_kg() -> KgStore {
    KgStore::from_triples([
        Triple::new("basalt", "is_a", "igneous rock"),
        Triple::new("basalt", "formed_by", "lava cooling"),
        Triple::new("granite", "is_a", "igneous rock"),
    ])
    .expect("fixture triples are well formed")
}

#[derive(Clone, Debug)]
pub struct SynthKgOptions {
    pub seed: u64,
    pub entities_per_topic: usize,
    /// Share of generated tails made of two words instead of one.
    pub multiword_fraction: f64,
}

impl Default for SynthKgOptions {
    fn default() -> Self {
        Self { seed: 7, entities_per_topic: 48, multiword_fraction: 0.2 }
    }
}

struct Topic {
    heads: &'static [&'static str],
    head_suffix: &'static str,
    category_relation: &'static str,
    categories: &'static [&'static str],
    relations: &'static [&'static str],
}

const TOPICS: [Topic; 2] = [
    Topic {
        heads: &[
            "basalt", "granite", "obsidian", "pumice", "gabbro", "diorite", "andesite", "rhyolite",
            "shale", "sandstone", "limestone", "marble", "slate", "quartzite", "gneiss", "schist",
        ],
        head_suffix: "ite",
        category_relation: "is_a",
        categories: &["igneous rock", "sedimentary rock", "metamorphic rock"],
        relations: &["formed_by", "found_in", "composed_of"],
    },
    Topic {
        heads: &[
            "trilobite", "ammonite", "belemnite", "crinoid", "brachiopod", "graptolite",
            "nautiloid", "eurypterid", "archaeopteryx", "ichthyosaur", "plesiosaur", "stegosaurus",
        ],
        head_suffix: "odon",
        category_relation: "lived_during",
        categories: &["cambrian period", "jurassic period", "cretaceous period", "devonian period"],
        relations: &["discovered_at", "described_by", "preserved_in"],
    },
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "n", "r", "k", "l", "x"];

fn pseudo_word(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

/// Two-topic toy graph. Topics use disjoint relation names; each head has one
/// shared-category edge plus one edge per topic relation, and every
/// non-category tail is a fresh pseudo-word (or pair) appearing nowhere else.
pub fn synth_kg(opts: &SynthKgOptions) -> Result<KgStore> {
    if opts.entities_per_topic == 0 {
        return Err(Error::invalid("entities_per_topic must be at least 1"));
    }
    if !(0.0..=1.0).contains(&opts.multiword_fraction) {
        return Err(Error::invalid("multiword_fraction must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut taken: HashSet<String> = TOPICS
        .iter()
        .flat_map(|t| t.heads.iter().chain(t.categories).copied())
        .map(String::from)
        .collect();
    let mut store = KgStore::new();
    for topic in &TOPICS {
        let mut heads: Vec<String> = topic.heads.iter().map(|h| h.to_string()).collect();
        heads.truncate(opts.entities_per_topic);
        while heads.len() < opts.entities_per_topic {
            let name = format!("{}{}", pseudo_word(&mut rng, &mut taken), topic.head_suffix);
            taken.insert(name.clone());
            heads.push(name);
        }
        for head in &heads {
            let category = if head == "granite" || head == "basalt" {
                topic.categories[0]
            } else {
                *topic.categories.choose(&mut rng).unwrap()
            };
            store.insert(Triple::new(head.as_str(), topic.category_relation, category))?;
            for rel in topic.relations {
                let tail = if head == "basalt" && *rel == "formed_by" {
                    "lava cooling".to_string()
                } else if rng.random_bool(opts.multiword_fraction) {
                    format!("{} {}", pseudo_word(&mut rng, &mut taken), pseudo_word(&mut rng, &mut taken))
                } else {
                    pseudo_word(&mut rng, &mut taken)
                };
                store.insert(Triple::new(head.as_str(), *rel, tail))?;
            }
        }
    }
    Ok(store)
}

/// Relation names used by each synthetic topic, category relation first.
pub fn topic_relations() -> Vec<Vec<&'static str>> {
    TOPICS
        .iter()
        .map(|t| std::iter::once(t.category_relation).chain(t.relations.iter().copied()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synth_kg(&SynthKgOptions::default()).unwrap();
        let b = synth_kg(&SynthKgOptions::default()).unwrap();
        assert_eq!(a.triples(), b.triples());
    }

    #[test]
    fn shape() {
        let kg = synth_kg(&SynthKgOptions { entities_per_topic: 20, ..Default::default() }).unwrap();
        assert_eq!(kg.len(), 2 * 20 * 4);
        assert_eq!(kg.neighborhood("basalt").len(), 4);
        assert!(kg
            .neighborhood("basalt")
            .iter()
            .any(|n| n.relation == "formed_by" && n.neighbor == "lava cooling"));
    }

    #[test]
    fn unique_tails_are_unique() {
        let kg = synth_kg(&SynthKgOptions::default()).unwrap();
        let rels = topic_relations();
        let mut seen = HashSet::new();
        for t in kg.triples() {
            if rels.iter().any(|r| r[1..].contains(&t.relation.as_str())) {
                assert!(seen.insert(t.tail.clone()), "repeated tail {}", t.tail);
            }
        }
    }

    #[test]
    fn topics_use_disjoint_relations() {
        let rels = topic_relations();
        assert!(rels[0].iter().all(|r| !rels[1].contains(r)));
    }
}
