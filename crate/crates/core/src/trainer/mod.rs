//! Example construction, the multi-task training loop and checkpoints.

mod checkpoint;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use pkchat_tensor::{adam_step, AdamConfig, OptimizerState, TensorError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;

use crate::error::{Error, Result};
use crate::keywords::CrfModel;
use crate::kg::KgStore;
use crate::model::{DialogueModel, LatentChoice, LossInput, LossParts, ModelConfig, WordDropout};
use crate::text::{auto_annotate, EntityMatcher, Scenario, Tag, Utterance, Vocab};

/// One bot turn to predict, with its history and a negative knowledge set
/// taken from another scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub scenario_id: String,
    pub turn_index: usize,
    pub context: Vec<Utterance>,
    pub knowledge: Vec<String>,
    pub response: String,
    pub negative_id: String,
    pub negative: Vec<String>,
}

impl TrainExample {
    pub fn input(&self) -> LossInput<'_> {
        LossInput {
            context: &self.context,
            knowledge: &self.knowledge,
            response: &self.response,
            negative: &self.negative,
        }
    }
}

/// One example per bot turn, in corpus order. The seed only affects which
/// scenario supplies each negative.
pub fn build_examples(scenarios: &[Scenario], seed: u64) -> Result<Vec<TrainExample>> {
    build_examples_from(scenarios, scenarios, seed)
}

/// Like [`build_examples`], drawing negatives from `pool` instead.
fn build_examples_from(scenarios: &[Scenario], pool: &[Scenario], seed: u64) -> Result<Vec<TrainExample>> {
    if pool.len() < 2 {
        return Err(Error::invalid(
            "need at least two scenarios: negatives are drawn from a different scenario",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in scenarios {
        for t in s.bot_turn_indices() {
            let others: Vec<&Scenario> = pool.iter().filter(|o| o.id != s.id && !o.knowledge.is_empty()).collect();
            if others.is_empty() {
                return Err(Error::invalid(format!("no other scenario to draw negatives for `{}`", s.id)));
            }
            let neg = others[rng.random_range(0..others.len())];
            out.push(TrainExample {
                scenario_id: s.id.clone(),
                turn_index: t,
                context: s.turns[..t].to_vec(),
                knowledge: s.knowledge.clone(),
                response: s.turns[t].text.clone(),
                negative_id: neg.id.clone(),
                negative: neg.knowledge.clone(),
            });
        }
    }
    Ok(out)
}

/// Seeded split by whole scenarios. Both halves keep corpus order.
pub fn split_by_scenario(scenarios: &[Scenario], val_fraction: f64, seed: u64) -> Result<(Vec<Scenario>, Vec<Scenario>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    let n_val = (scenarios.len() as f64 * val_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..scenarios.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val: HashSet<usize> = idx[..n_val].iter().copied().collect();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, s) in scenarios.iter().enumerate() {
        if val.contains(&i) {
            valid.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, valid))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Validation loss is logged every this many steps; 0 disables it.
    pub eval_every: usize,
    pub clip_norm: f64,
    pub val_fraction: f64,
    /// Minimum corpus count for a word to enter the vocabulary.
    pub min_count: usize,
    /// Probability of hiding a knowledge or context word type behind an
    /// out-of-vocabulary placeholder in a training example.
    pub word_dropout: f64,
    /// Architecture; `vocab_size` is replaced by the built vocabulary's size.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            eval_every: 200,
            clip_norm: 1.0,
            val_fraction: 0.1,
            min_count: 3,
            word_dropout: 0.2,
            model: ModelConfig::toy(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid("learning rate and clip norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return Err(Error::invalid("word dropout must lie in [0, 1)"));
        }
        if self.min_count == 0 {
            return Err(Error::invalid("min count must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, clip_norm: Some(self.clip_norm), ..AdamConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossParts,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("step,nll,bow,ts,total\n");
    for r in rows {
        let l = r.loss;
        let _ = writeln!(out, "{},{},{},{},{}", r.step, l.nll, l.bow, l.ts, l.total);
    }
    out
}

pub fn write_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trace_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Training-batch loss per step.
    pub trace: Vec<TraceRow>,
    /// Validation loss at each evaluation step.
    pub validation: Vec<TraceRow>,
    pub train_scenarios: Vec<Scenario>,
    pub val_scenarios: Vec<Scenario>,
}

/// Mean loss over `examples` with a fixed latent choice.
pub fn corpus_loss(model: &DialogueModel, examples: &[TrainExample], choice: LatentChoice) -> Result<LossParts> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    let n = examples.len() as f64;
    let (mut nll, mut bow, mut ts) = (0.0, 0.0, 0.0);
    for ex in examples {
        let p = model.compute_losses(&ex.input(), choice)?;
        nll += p.nll / n;
        bow += p.bow / n;
        ts += p.ts / n;
    }
    Ok(LossParts::new(nll, bow, ts))
}

/// Builds the vocabulary from the training split and initializes a model.
pub fn init_model(train: &[Scenario], config: &TrainConfig) -> Result<DialogueModel> {
    let vocab = Vocab::build(train.iter().flat_map(Scenario::texts), config.min_count, config.model.latent)?;
    let mut mcfg = config.model.clone();
    mcfg.vocab_size = vocab.len();
    DialogueModel::new(mcfg, vocab, config.seed)
}

/// Runs the multi-task loop. Every random choice derives from `config.seed`,
/// so equal inputs give bit-identical parameters.
pub fn train(scenarios: &[Scenario], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if scenarios.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (train_sc, val_sc) = split_by_scenario(scenarios, config.val_fraction, config.seed)?;
    let mut model = init_model(&train_sc, config)?;
    let examples = build_examples(&train_sc, config.seed)?;
    if examples.is_empty() {
        return Err(Error::invalid("training split has no bot turns"));
    }
    let val_examples = if val_sc.is_empty() {
        Vec::new()
    } else {
        build_examples_from(&val_sc, scenarios, config.seed)?
    };
    log::info!(
        "training on {} examples ({} scenarios), {} validation examples, vocab {}, {} parameters",
        examples.len(),
        train_sc.len(),
        val_examples.len(),
        model.vocab.len(),
        model.params.num_scalars()
    );

    let mut opt = OptimizerState::new(config.adam(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::with_capacity(config.steps);
    let mut validation = Vec::new();

    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        let mut choices = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(examples[order[cursor]].input());
            choices.push(LatentChoice::Sample(rng.random::<f64>()));
            cursor += 1;
        }
        let dropout = (config.word_dropout > 0.0).then(|| WordDropout { rate: config.word_dropout, seed: rng.random() });
        let (loss, grads) = model.batch_gradients_with(&batch, &choices, dropout)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { step, reason: format!("loss is {}", loss.total) });
        }
        adam_step(&mut model.params, &grads, &mut opt).map_err(|e| match e {
            TensorError::NonFiniteGradient(name) => {
                Error::Diverged { step, reason: format!("non-finite gradient in `{name}`") }
            }
            other => Error::Tensor(other),
        })?;
        trace.push(TraceRow { step, loss });

        if config.eval_every > 0 && step % config.eval_every == 0 {
            if val_examples.is_empty() {
                log::info!("step {step}: train total {:.4}", loss.total);
            } else {
                let v = corpus_loss(&model, &val_examples, LatentChoice::Argmax)?;
                log::info!("step {step}: train total {:.4}, validation total {:.4}", loss.total, v.total);
                validation.push(TraceRow { step, loss: v });
            }
        }
        log::debug!("step {step}: nll {:.4} bow {:.4} ts {:.4}", loss.nll, loss.bow, loss.ts);
    }

    let mut checkpoint = Checkpoint::from_model(&model, config.steps as u64);
    checkpoint.train_config = Some(config.clone());
    Ok(TrainOutcome { checkpoint, trace, validation, train_scenarios: train_sc, val_scenarios: val_sc })
}

/// Trains the BIO tagger on turns annotated with entity names from `kg`.
pub fn train_tagger(scenarios: &[Scenario], kg: &KgStore, epochs: usize, lr: f64) -> Result<(CrfModel, Vec<f64>)> {
    let matcher = EntityMatcher::new(kg.entity_names());
    let data: Vec<_> = scenarios
        .iter()
        .flat_map(|s| auto_annotate(s, &matcher))
        .filter(|a| !a.tokens.is_empty())
        .collect();
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    CrfModel::train(&data, Tag::ALL.to_vec(), epochs, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(id: &str, bots: usize) -> Scenario {
        let mut turns = Vec::new();
        for i in 0..bots {
            turns.push(Utterance::user(format!("question {i} about {id} ?")));
            turns.push(Utterance::bot(format!("answer {i} about {id} .")));
        }
        Scenario { id: id.into(), knowledge: vec![format!("{id} is_a thing")], goal: None, turns }
    }

    #[test]
    fn one_example_per_bot_turn() {
        let ex = build_examples(&[scenario("a", 2), scenario("b", 2)], 0).unwrap();
        assert_eq!(ex.len(), 4);
        assert!(ex.iter().all(|e| e.negative_id != e.scenario_id));
        assert_eq!(ex[1].context.len(), 3);
        assert_eq!(ex[1].response, "answer 1 about a .");
    }

    #[test]
    fn single_scenario_rejected() {
        let err = build_examples(&[scenario("a", 2)], 0).unwrap_err();
        assert!(err.to_string().contains("two scenarios"));
    }

    #[test]
    fn seed_changes_negatives_not_order() {
        let sc: Vec<_> = (0..6).map(|i| scenario(&format!("s{i}"), 3)).collect();
        let a = build_examples(&sc, 1).unwrap();
        let b = build_examples(&sc, 2).unwrap();
        let key = |e: &TrainExample| (e.scenario_id.clone(), e.turn_index);
        assert_eq!(a.iter().map(key).collect::<Vec<_>>(), b.iter().map(key).collect::<Vec<_>>());
        assert_ne!(
            a.iter().map(|e| &e.negative_id).collect::<Vec<_>>(),
            b.iter().map(|e| &e.negative_id).collect::<Vec<_>>()
        );
        assert_eq!(a, build_examples(&sc, 1).unwrap());
    }

    #[test]
    fn split_is_by_scenario() {
        let sc: Vec<_> = (0..20).map(|i| scenario(&format!("s{i}"), 1)).collect();
        let (tr, va) = split_by_scenario(&sc, 0.1, 3).unwrap();
        assert_eq!((tr.len(), va.len()), (18, 2));
        let ids: HashSet<_> = tr.iter().map(|s| &s.id).collect();
        assert!(va.iter().all(|s| !ids.contains(&s.id)));
        assert!(split_by_scenario(&sc, 1.0, 0).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let rows = [TraceRow { step: 1, loss: LossParts::new(1.0, 0.5, 0.25) }];
        assert_eq!(trace_csv(&rows), "step,nll,bow,ts,total\n1,1,0.5,0.25,1.75\n");
    }

    #[test]
    fn config_rejects_zero_batch() {
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
