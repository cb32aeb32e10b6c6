use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{Scenario, Utterance};
use crate::error::{Error, Result};
use crate::kg::{linearize, Direction, KgStore, Neighbor};

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub seed: u64,
    pub n_scenarios: usize,
    /// Probability that a scenario switches to a second entity halfway.
    pub switch_fraction: f64,
    /// Question/answer pairs asked per entity.
    pub max_questions: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { seed: 0, n_scenarios: 32, switch_fraction: 0.25, max_questions: 4 }
    }
}

fn question(rng: &mut ChaCha8Rng, n: &Neighbor, anchor: &str) -> (String, String) {
    let frame = ["what", "which"].choose(rng).unwrap();
    match n.direction {
        Direction::Out => (
            format!("{frame} is the {} of {anchor} ?", n.relation),
            format!("it is {} .", n.neighbor),
        ),
        Direction::In => (
            format!("{frame} entity has {} {anchor} ?", n.relation),
            format!("it is {} .", n.neighbor),
        ),
    }
}

fn ask(rng: &mut ChaCha8Rng, kg: &KgStore, anchor: &str, max_questions: usize, turns: &mut Vec<Utterance>) {
    let mut entries = kg.neighborhood(anchor);
    entries.shuffle(rng);
    for n in entries.iter().take(max_questions) {
        let (q, a) = question(rng, n, anchor);
        turns.push(Utterance::user(q));
        turns.push(Utterance::bot(a));
    }
}

/// Template question/answer dialogues over sampled head entities. Every bot
/// reply quotes a tail that appears verbatim in the scenario knowledge.
pub fn gen_synthetic_corpus(kg: &KgStore, opts: &SynthOptions) -> Result<Vec<Scenario>> {
    if opts.n_scenarios < 1 {
        return Err(Error::invalid("n_scenarios must be at least 1"));
    }
    if opts.max_questions < 1 {
        return Err(Error::invalid("max_questions must be at least 1"));
    }
    let heads = kg.head_names();
    if heads.is_empty() {
        return Err(Error::invalid("knowledge graph has no head entities"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pool: Vec<String> = Vec::new();
    let mut out = Vec::with_capacity(opts.n_scenarios);
    for i in 0..opts.n_scenarios {
        if pool.is_empty() {
            pool = heads.clone();
            pool.shuffle(&mut rng);
        }
        let anchor = pool.pop().unwrap();
        let anchor_name = kg.display_name(&anchor).unwrap_or(&anchor).to_string();
        let mut knowledge = linearize(&kg.neighborhood(&anchor), &anchor_name);
        let mut turns = Vec::new();
        ask(&mut rng, kg, &anchor, opts.max_questions, &mut turns);
        let mut goal = format!("talk about {anchor_name}");
        if heads.len() > 1 && rng.random_bool(opts.switch_fraction) {
            let second = loop {
                let c = heads.choose(&mut rng).unwrap();
                if *c != anchor {
                    break c.clone();
                }
            };
            let second_name = kg.display_name(&second).unwrap_or(&second).to_string();
            knowledge.extend(linearize(&kg.neighborhood(&second), &second_name));
            ask(&mut rng, kg, &second, opts.max_questions, &mut turns);
            goal = format!("{goal} then {second_name}");
        }
        let scenario = Scenario { id: format!("synth-{i:04}"), knowledge, goal: Some(goal), turns };
        scenario.validate()?;
        out.push(scenario);
    }
    Ok(out)
}
