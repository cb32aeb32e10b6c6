use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::text::{tokenize, Role, Utterance, Vocab, BOS, KSEP, OOV_SLOTS, STATUS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Latent, knowledge and context see each other; response position `t`
    /// additionally sees responses up to `t`.
    Generation,
    /// Everything sees everything, with a trailing `[M]`.
    Posterior,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Latent,
    Knowledge,
    Context,
    Response,
    Status,
}

pub const ROLE_USER: usize = 0;
pub const ROLE_BOT: usize = 1;
pub const ROLE_KNOWLEDGE: usize = 2;
pub const ROLE_LATENT: usize = 3;

/// One assembled model input. Layout is `[z][k][c][r]` in generation mode
/// and `[k][c][r][M]` in posterior mode.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGrid {
    pub mode: MaskMode,
    pub token_ids: Vec<usize>,
    pub words: Vec<String>,
    pub role_ids: Vec<usize>,
    pub turn_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub segments: Vec<Segment>,
    /// Row-major `n x n`; `mask[i * n + j]` is true when `i` may attend to `j`.
    pub mask: Vec<bool>,
    pub knowledge: Range<usize>,
    pub context: Range<usize>,
    pub response: Range<usize>,
}

impl InputGrid {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn visible(&self, from: usize, to: usize) -> bool {
        self.mask[from * self.len() + to]
    }

    pub fn latent_pos(&self) -> Option<usize> {
        (self.mode == MaskMode::Generation).then_some(0)
    }

    pub fn status_pos(&self) -> Option<usize> {
        (self.mode == MaskMode::Posterior).then(|| self.len() - 1)
    }

    /// Positions the pointer may copy from: knowledge tokens other than
    /// separators, and context tokens.
    pub fn is_source(&self, pos: usize) -> bool {
        (self.knowledge.contains(&pos) && self.words[pos] != KSEP) || self.context.contains(&pos)
    }

    pub fn source_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&p| self.is_source(p)).collect()
    }

    /// Index of `pos` in the knowledge-then-context token stream (separators
    /// included), as reported in copy attributions.
    pub fn stream_index(&self, pos: usize) -> Option<usize> {
        (self.knowledge.start..self.context.end).contains(&pos).then(|| pos - self.knowledge.start)
    }
}

/// Global vocabulary plus temporary ids for source words it lacks.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedVocab {
    pub base: usize,
    pub oov: Vec<String>,
    index: HashMap<String, usize>,
    /// Extended id per grid position; non-source positions hold 0.
    pub source_ids: Vec<usize>,
}

impl ExtendedVocab {
    pub fn build(grid: &InputGrid, vocab: &Vocab) -> Self {
        let mut oov = Vec::new();
        let mut index = HashMap::new();
        let mut source_ids = vec![0; grid.len()];
        for pos in grid.source_positions() {
            let w = &grid.words[pos];
            source_ids[pos] = match vocab.get(w) {
                Some(id) => id,
                None => *index.entry(w.clone()).or_insert_with(|| {
                    oov.push(w.clone());
                    vocab.len() + oov.len() - 1
                }),
            };
        }
        Self { base: vocab.len(), oov, index, source_ids }
    }

    pub fn len(&self) -> usize {
        self.base + self.oov.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vocabulary id, else temporary id, else `[UNK]`.
    pub fn id(&self, vocab: &Vocab, word: &str) -> usize {
        vocab.get(word).or_else(|| self.index.get(word).copied()).unwrap_or(Vocab::UNK_ID)
    }

    pub fn word<'a>(&'a self, vocab: &'a Vocab, id: usize) -> &'a str {
        if id < self.base {
            vocab.token(id)
        } else {
            &self.oov[id - self.base]
        }
    }
}

/// Rewrites the embedding id of every unknown word, and of every known word
/// that `hide` selects, to a placeholder. The `k`-th distinct such type in
/// grid order gets placeholder `order[k]` (or `k` when `order` is `None`);
/// types past the last placeholder fall back to `[UNK]`.
pub fn assign_placeholders(grid: &mut InputGrid, vocab: &Vocab, order: Option<&[usize]>, hide: impl Fn(&str) -> bool) {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (p, w) in grid.words.iter().enumerate() {
        let id = vocab.id(w);
        if vocab.is_special(id) && id != Vocab::UNK_ID {
            continue;
        }
        if id != Vocab::UNK_ID && !hide(w) {
            grid.token_ids[p] = id;
            continue;
        }
        let next = seen.len();
        let k = *seen.entry(w.as_str()).or_insert(next);
        grid.token_ids[p] = match order {
            _ if k >= OOV_SLOTS => Vocab::UNK_ID,
            Some(o) => vocab.slot_id(o[k]),
            None => vocab.slot_id(k),
        };
    }
}

fn truncate_knowledge(mut entries: Vec<Vec<String>>, max: usize) -> Vec<Vec<String>> {
    let total = |e: &[Vec<String>]| e.iter().map(Vec::len).sum::<usize>() + e.len().saturating_sub(1);
    while total(&entries) > max {
        let longest = (0..entries.len()).max_by_key(|&i| (entries[i].len(), usize::MAX - i)).unwrap();
        entries[longest].pop();
        if entries[longest].is_empty() {
            entries.remove(longest);
        }
    }
    entries
}

fn truncate_context(turns: Vec<(Role, Vec<String>)>, max: usize) -> Vec<(Role, Vec<String>)> {
    let mut kept = Vec::new();
    let mut used = 0;
    for (role, toks) in turns.into_iter().rev() {
        if used + toks.len() <= max {
            used += toks.len();
            kept.push((role, toks));
        } else {
            if kept.is_empty() {
                let skip = toks.len() - max;
                kept.push((role, toks[skip..].to_vec()));
            }
            break;
        }
    }
    kept.reverse();
    kept
}

struct Builder<'a> {
    vocab: &'a Vocab,
    grid: InputGrid,
}

impl Builder<'_> {
    fn push(&mut self, word: &str, id: usize, role: usize, turn: usize, seg: Segment) {
        let g = &mut self.grid;
        g.position_ids.push(g.token_ids.len());
        g.token_ids.push(id);
        g.words.push(word.to_string());
        g.role_ids.push(role);
        g.turn_ids.push(turn);
        g.segments.push(seg);
    }

    fn word(&mut self, word: &str, role: usize, turn: usize, seg: Segment) {
        let id = self.vocab.id(word);
        self.push(word, id, role, turn, seg);
    }
}

/// Builds the model input. Context keeps its newest turns and knowledge
/// entries are shortened longest-first until both fit the configured limits.
pub fn assemble_input(
    config: &ModelConfig,
    vocab: &Vocab,
    context: &[Utterance],
    knowledge: &[String],
    response: Option<&[String]>,
    latent: Option<usize>,
    mode: MaskMode,
) -> Result<InputGrid> {
    let entries: Vec<Vec<String>> =
        knowledge.iter().map(|k| tokenize(k)).filter(|t| !t.is_empty()).collect();
    let turns: Vec<(Role, Vec<String>)> = context
        .iter()
        .map(|u| (u.role, tokenize(&u.text)))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    if entries.is_empty() && turns.is_empty() {
        return Err(Error::invalid("both context and knowledge are empty"));
    }
    let entries = truncate_knowledge(entries, config.max_knowledge);
    let turns = truncate_context(turns, config.max_context);

    let mut b = Builder {
        vocab,
        grid: InputGrid {
            mode,
            token_ids: Vec::new(),
            words: Vec::new(),
            role_ids: Vec::new(),
            turn_ids: Vec::new(),
            position_ids: Vec::new(),
            segments: Vec::new(),
            mask: Vec::new(),
            knowledge: 0..0,
            context: 0..0,
            response: 0..0,
        },
    };
    if mode == MaskMode::Generation {
        let z = latent.ok_or_else(|| Error::invalid("generation mode needs a latent index"))?;
        if z >= vocab.num_latent() {
            return Err(Error::invalid(format!("latent index {z} outside 0..{}", vocab.num_latent())));
        }
        let id = vocab.latent_id(z);
        let word = vocab.token(id).to_string();
        b.push(&word, id, ROLE_LATENT, 0, Segment::Latent);
    }

    let k_start = b.grid.token_ids.len();
    for (i, entry) in entries.iter().enumerate() {
        if i > 0 {
            b.word(KSEP, ROLE_KNOWLEDGE, 0, Segment::Knowledge);
        }
        for w in entry {
            b.word(w, ROLE_KNOWLEDGE, 0, Segment::Knowledge);
        }
    }
    let c_start = b.grid.token_ids.len();
    let n_turns = turns.len();
    for (i, (role, toks)) in turns.iter().enumerate() {
        let r = if *role == Role::User { ROLE_USER } else { ROLE_BOT };
        let dist = (n_turns - i).min(config.max_turns - 1);
        for w in toks {
            b.word(w, r, dist, Segment::Context);
        }
    }
    let r_start = b.grid.token_ids.len();
    let resp = response.unwrap_or(&[]);
    match mode {
        MaskMode::Generation => {
            b.word(BOS, ROLE_BOT, 0, Segment::Response);
            for w in resp.iter().take(config.max_response - 1) {
                b.word(w, ROLE_BOT, 0, Segment::Response);
            }
        }
        MaskMode::Posterior => {
            for w in resp.iter().take(config.max_response) {
                b.word(w, ROLE_BOT, 0, Segment::Response);
            }
        }
    }
    let r_end = b.grid.token_ids.len();
    if mode == MaskMode::Posterior {
        b.word(STATUS, ROLE_LATENT, 0, Segment::Status);
    }

    let mut grid = b.grid;
    assign_placeholders(&mut grid, vocab, None, |_| false);
    grid.knowledge = k_start..c_start;
    grid.context = c_start..r_start;
    grid.response = r_start..r_end;
    let n = grid.len();
    grid.mask = match mode {
        MaskMode::Posterior => vec![true; n * n],
        MaskMode::Generation => {
            let mut m = vec![false; n * n];
            for i in 0..n {
                let limit = if i < r_start { r_start } else { i + 1 };
                for j in 0..limit {
                    m[i * n + j] = true;
                }
            }
            m
        }
    };
    Ok(grid)
}
