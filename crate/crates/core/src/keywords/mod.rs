//! Keyword extraction: question-frame rules, TF-IDF, TextRank and a
//! linear-chain CRF tagger, plus resolution of candidates to graph entities.

mod crf;
mod rule;
mod stopwords;
mod textrank;
mod tfidf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crf::{bio_allowed, token_features, CrfGradient, CrfModel, Potentials};
pub use rule::rule_extract;
pub use stopwords::{is_content, is_punct, is_stopword, stopwords};
pub use textrank::{cooccurrence_graph, textrank, textrank_scores, TextRankConfig};
pub use tfidf::{tfidf_rank, CorpusStats};

use crate::error::{Error, Result};
use crate::kg::{normalize, KgStore};
use crate::text::Tag;

/// Extraction method, declared in resolution priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Crf,
    Rule,
    #[serde(rename = "textrank")]
    TextRank,
    Tfidf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Crf, Method::Rule, Method::TextRank, Method::Tfidf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Crf => "crf",
            Method::Rule => "rule",
            Method::TextRank => "textrank",
            Method::Tfidf => "tfidf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown extraction method `{s}`")))
    }
}

/// A keyword span `[span.0, span.1)` over the utterance tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub span: (usize, usize),
    pub text: String,
    pub score: f64,
    pub method: Method,
}

/// Entity spans from the CRF's Viterbi path, scored by the path probability.
pub fn crf_extract(tokens: &[String], model: &CrfModel) -> Vec<Candidate> {
    let pot = model.potentials(tokens);
    let (path, score) = pot.viterbi();
    let prob = (score - pot.log_partition()).exp();
    let tags: Vec<Tag> = path.into_iter().map(|y| model.tags()[y]).collect();
    let mut out = Vec::new();
    let mut start = None;
    for (i, tag) in tags.iter().chain(std::iter::once(&Tag::O)).enumerate() {
        if *tag != Tag::I {
            if let Some(s) = start.take() {
                out.push(Candidate { span: (s, i), text: tokens[s..i].join(" "), score: prob, method: Method::Crf });
            }
        }
        if *tag == Tag::B {
            start = Some(i);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub entity: String,
    pub candidate: Candidate,
}

fn match_entity(text: &str, kg: &KgStore) -> Option<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    for len in (1..=words.len()).rev() {
        for start in 0..=words.len() - len {
            let key = normalize(&words[start..start + len].join(" "));
            if kg.contains_entity(&key) {
                return Some(key);
            }
        }
    }
    None
}

/// Maps candidates onto graph entities by exact normalized match of the text
/// or its longest sub-span. Method priority decides between matches, then
/// score.
pub fn resolve_entity(candidates: &[Candidate], kg: &KgStore) -> Option<Resolved> {
    let mut best: Option<Resolved> = None;
    for c in candidates {
        let Some(entity) = match_entity(&c.text, kg) else { continue };
        let better = match &best {
            None => true,
            Some(b) => (c.method, -c.score) < (b.candidate.method, -b.candidate.score),
        };
        if better {
            best = Some(Resolved { entity, candidate: c.clone() });
        }
    }
    best
}

/// Runs every configured method over one utterance.
#[derive(Clone, Debug, Default)]
pub struct KeywordExtractor {
    pub stats: CorpusStats,
    pub crf: Option<CrfModel>,
    pub textrank: TextRankConfig,
    pub top_k: usize,
}

impl KeywordExtractor {
    pub fn new(stats: CorpusStats, crf: Option<CrfModel>) -> Self {
        Self { stats, crf, textrank: TextRankConfig::default(), top_k: 3 }
    }

    pub fn extract(&self, method: Method, tokens: &[String]) -> Result<Vec<Candidate>> {
        Ok(match method {
            Method::Rule => rule_extract(tokens),
            Method::Tfidf => tfidf_rank(tokens, &self.stats, self.top_k.max(1))?,
            Method::TextRank => textrank(tokens, &self.textrank, self.top_k),
            Method::Crf => match &self.crf {
                Some(m) => crf_extract(tokens, m),
                None => return Err(Error::invalid("no CRF model loaded")),
            },
        })
    }

    pub fn candidates(&self, tokens: &[String]) -> Vec<Candidate> {
        Method::ALL
            .into_iter()
            .filter(|m| *m != Method::Crf || self.crf.is_some())
            .flat_map(|m| self.extract(m, tokens).unwrap_or_default())
            .collect()
    }

    pub fn resolve(&self, tokens: &[String], kg: &KgStore) -> Option<Resolved> {
        resolve_entity(&self.candidates(tokens), kg)
    }
}
