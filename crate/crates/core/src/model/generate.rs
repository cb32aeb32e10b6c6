use serde::{Deserialize, Serialize};

use super::grid::{ExtendedVocab, InputGrid, MaskMode};
use super::mix::{mix_distribution, mixture_terms};
use super::network::{step_output, DecodeOutput, DialogueModel};
use crate::error::Result;
use crate::text::{tokenize, Utterance, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_len: usize,
    /// Ablation: fix the gate at 1 so nothing can be copied.
    pub force_vocab: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { strategy: Strategy::Greedy, max_len: 15, force_vocab: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenSource {
    Vocab,
    Copy,
}

/// Where an emitted token came from. `copy_index` points into the
/// knowledge-then-context token stream, separators included.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub source: TokenSource,
    pub copy_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub z: usize,
    pub tokens: Vec<String>,
    pub attribution: Vec<Attribution>,
    pub lambdas: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub tokens: Vec<String>,
    pub attribution: Vec<Attribution>,
    pub z: usize,
    /// Topic-switch probability of the chosen reply.
    pub score: f64,
    pub lambdas: Vec<f64>,
    /// Every latent act's reply with its score, in act order.
    pub candidates: Vec<(Hypothesis, f64)>,
}

impl GenerationResult {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

struct Step {
    dist: Vec<f64>,
    out: DecodeOutput,
    grid: InputGrid,
    ext: ExtendedVocab,
}

fn blocked_ids(vocab: &Vocab) -> Vec<usize> {
    (0..vocab.num_specials()).filter(|&i| i != Vocab::EOS_ID).collect()
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl DialogueModel {
    fn step(&self, context: &[Utterance], knowledge: &[String], z: usize, prefix: &[String], cfg: &DecodeConfig) -> Result<Step> {
        let grid = self.assemble(context, knowledge, Some(prefix), Some(z), MaskMode::Generation)?;
        let ext = ExtendedVocab::build(&grid, &self.vocab);
        let (tape, g) = self.generation_outputs(&grid)?;
        let mut out = step_output(&tape, &g, grid.response.len() - 1);
        if cfg.force_vocab {
            out.lambda = 1.0;
        }
        let mut dist = mix_distribution(&out.p_vocab, &out.a, out.lambda, &ext.source_ids, ext.len());
        for id in blocked_ids(&self.vocab) {
            dist[id] = 0.0;
        }
        Ok(Step { dist, out, grid, ext })
    }

    fn attribute(&self, s: &Step, word: usize) -> Attribution {
        let (gen, copy) = mixture_terms(&s.out.p_vocab, &s.out.a, s.out.lambda, &s.ext.source_ids, word);
        if copy > gen {
            let pos = s
                .grid
                .source_positions()
                .into_iter()
                .filter(|&p| s.ext.source_ids[p] == word)
                .fold(None, |best: Option<usize>, p| match best {
                    Some(b) if s.out.a[b] >= s.out.a[p] => Some(b),
                    _ => Some(p),
                });
            Attribution { source: TokenSource::Copy, copy_index: pos.and_then(|p| s.grid.stream_index(p)) }
        } else {
            Attribution { source: TokenSource::Vocab, copy_index: None }
        }
    }

    fn max_len(&self, cfg: &DecodeConfig) -> usize {
        cfg.max_len.min(self.config.max_response - 1)
    }

    /// Decodes one reply under a fixed latent act.
    pub fn decode_with_latent(
        &self,
        context: &[Utterance],
        knowledge: &[String],
        z: usize,
        cfg: &DecodeConfig,
    ) -> Result<Hypothesis> {
        let width = match cfg.strategy {
            Strategy::Greedy => return self.greedy(context, knowledge, z, cfg),
            Strategy::Beam(w) => w.max(1),
        };
        let empty = Hypothesis { z, tokens: vec![], attribution: vec![], lambdas: vec![], log_prob: 0.0 };
        let mut beams: Vec<(Hypothesis, bool)> = vec![(empty, false)];
        for _ in 0..self.max_len(cfg) {
            if beams.iter().all(|(_, done)| *done) {
                break;
            }
            let mut next: Vec<(Hypothesis, bool)> = Vec::new();
            for (h, done) in &beams {
                if *done {
                    next.push((h.clone(), true));
                    continue;
                }
                let s = self.step(context, knowledge, z, &h.tokens, cfg)?;
                let mut order: Vec<usize> = (0..s.dist.len()).filter(|&i| s.dist[i] > 0.0).collect();
                order.sort_by(|&a, &b| s.dist[b].total_cmp(&s.dist[a]).then(a.cmp(&b)));
                for &w in order.iter().take(width) {
                    let mut nh = h.clone();
                    nh.log_prob += s.dist[w].ln();
                    if w == Vocab::EOS_ID {
                        next.push((nh, true));
                        continue;
                    }
                    nh.attribution.push(self.attribute(&s, w));
                    nh.tokens.push(s.ext.word(&self.vocab, w).to_string());
                    nh.lambdas.push(s.out.lambda);
                    next.push((nh, false));
                }
            }
            next.sort_by(|a, b| b.0.log_prob.total_cmp(&a.0.log_prob));
            next.truncate(width);
            beams = next;
        }
        Ok(beams.into_iter().next().map(|(h, _)| h).expect("beam never empties"))
    }

    fn greedy(&self, context: &[Utterance], knowledge: &[String], z: usize, cfg: &DecodeConfig) -> Result<Hypothesis> {
        let mut h = Hypothesis { z, tokens: vec![], attribution: vec![], lambdas: vec![], log_prob: 0.0 };
        for _ in 0..self.max_len(cfg) {
            let s = self.step(context, knowledge, z, &h.tokens, cfg)?;
            let w = argmax(&s.dist);
            h.log_prob += s.dist[w].ln();
            if w == Vocab::EOS_ID {
                break;
            }
            h.attribution.push(self.attribute(&s, w));
            h.tokens.push(s.ext.word(&self.vocab, w).to_string());
            h.lambdas.push(s.out.lambda);
        }
        Ok(h)
    }

    /// Decodes one reply per latent act and keeps the one the topic-switch
    /// head finds most coherent with the knowledge (earliest act on ties).
    pub fn generate(&self, context: &[Utterance], knowledge: &[String], cfg: &DecodeConfig) -> Result<GenerationResult> {
        let mut candidates = Vec::with_capacity(self.config.latent);
        for z in 0..self.config.latent {
            let h = self.decode_with_latent(context, knowledge, z, cfg)?;
            let score = self.topic_switch_score(knowledge, context, &h.tokens.join(" "))?;
            candidates.push((h, score));
        }
        let best = (0..candidates.len()).fold(0, |b, i| if candidates[i].1 > candidates[b].1 { i } else { b });
        let (h, score) = candidates[best].clone();
        Ok(GenerationResult {
            tokens: h.tokens,
            attribution: h.attribution,
            z: h.z,
            score,
            lambdas: h.lambdas,
            candidates,
        })
    }

    /// Fraction of gold response tokens (plus the closing `[EOS]`) that the
    /// argmax of the mixed distribution predicts under teacher forcing, with
    /// the posterior's most probable act. Returns `(correct, total)`.
    pub fn teacher_forced_hits(&self, context: &[Utterance], knowledge: &[String], response: &str) -> Result<(usize, usize)> {
        let resp = tokenize(response);
        let (probs, _) = self.posterior(context, knowledge, response)?;
        let z = argmax(&probs);
        let grid = self.assemble(context, knowledge, Some(&resp), Some(z), MaskMode::Generation)?;
        let ext = ExtendedVocab::build(&grid, &self.vocab);
        let targets = self.targets(&grid, &ext);
        let (tape, g) = self.generation_outputs(&grid)?;
        let mut hits = 0;
        for (t, &target) in targets.iter().enumerate() {
            let out = step_output(&tape, &g, t);
            let dist = mix_distribution(&out.p_vocab, &out.a, out.lambda, &ext.source_ids, ext.len());
            if argmax(&dist) == target {
                hits += 1;
            }
        }
        Ok((hits, targets.len()))
    }
}
