use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
/// Status token whose final hidden state feeds the posterior and topic heads.
pub const STATUS: &str = "[M]";
pub const KSEP: &str = "[KSEP]";

const FIXED_SPECIALS: [&str; 6] = [PAD, UNK, BOS, EOS, STATUS, KSEP];

/// Placeholder ids for out-of-vocabulary words. Within one model input each
/// unknown word type gets its own placeholder, so repeated mentions of the
/// same unseen entity stay recognizable as the same word.
pub const OOV_SLOTS: usize = 20;

/// Token ↔ id bijection. Specials take the lowest ids, followed by one token
/// per latent category (`[Z0]`..), the placeholders (`[U0]`..), then corpus
/// words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    num_latent: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    num_latent: usize,
    tokens: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;

    fn try_from(r: VocabRepr) -> Result<Self> {
        Vocab::from_tokens(r.tokens, r.num_latent)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { num_latent: v.num_latent, tokens: v.tokens }
    }
}

pub fn latent_token(k: usize) -> String {
    format!("[Z{k}]")
}

pub fn slot_token(i: usize) -> String {
    format!("[U{i}]")
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const BOS_ID: usize = 2;
    pub const EOS_ID: usize = 3;
    pub const STATUS_ID: usize = 4;
    pub const KSEP_ID: usize = 5;

    /// Counts whitespace-separated tokens of already tokenized `texts` and
    /// registers those seen at least `min_count` times.
    pub fn build<I, S>(texts: I, min_count: usize, num_latent: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count < 1 {
            return Err(Error::invalid("min_count must be at least 1"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in super::tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any || counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut words: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = Self::special_tokens(num_latent);
        tokens.extend(words.into_iter().map(|(w, _)| w).filter(|w| !w.starts_with('[')));
        Self::from_tokens(tokens, num_latent)
    }

    fn special_tokens(num_latent: usize) -> Vec<String> {
        FIXED_SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain((0..num_latent).map(latent_token))
            .chain((0..OOV_SLOTS).map(slot_token))
            .collect()
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, num_latent: usize) -> Result<Self> {
        let specials = Self::special_tokens(num_latent);
        if tokens.len() < specials.len() || tokens[..specials.len()] != specials[..] {
            return Err(Error::invalid("vocabulary does not start with the special tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index, num_latent })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_latent(&self) -> usize {
        self.num_latent
    }

    pub fn num_specials(&self) -> usize {
        FIXED_SPECIALS.len() + self.num_latent + OOV_SLOTS
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, or the `[UNK]` id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn latent_id(&self, k: usize) -> usize {
        assert!(k < self.num_latent, "latent index {k} out of range");
        FIXED_SPECIALS.len() + k
    }

    pub fn slot_id(&self, i: usize) -> usize {
        assert!(i < OOV_SLOTS, "placeholder {i} out of range");
        FIXED_SPECIALS.len() + self.num_latent + i
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < self.num_specials()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_excludes_rare_tokens() {
        let v = Vocab::build(["a a b"], 2, 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.encode(&["b"]), vec![Vocab::UNK_ID]);
    }

    #[test]
    fn min_count_one_registers_everything() {
        let v = Vocab::build(["a a b", "c"], 1, 2).unwrap();
        for t in ["a", "b", "c"] {
            assert!(v.contains(t));
        }
        assert_eq!(v.len(), v.num_specials() + 3);
    }

    #[test]
    fn specials_take_lowest_ids() {
        let v = Vocab::build(["x y"], 1, 3).unwrap();
        assert_eq!(v.id(PAD), Vocab::PAD_ID);
        assert_eq!(v.id(UNK), Vocab::UNK_ID);
        assert_eq!(v.id(BOS), Vocab::BOS_ID);
        assert_eq!(v.id(EOS), Vocab::EOS_ID);
        assert_eq!(v.id(STATUS), Vocab::STATUS_ID);
        assert_eq!(v.id(KSEP), Vocab::KSEP_ID);
        assert_eq!(v.id("[Z2]"), v.latent_id(2));
        assert_eq!(v.id("[U0]"), v.latent_id(2) + 1);
        assert_eq!(v.id(&slot_token(OOV_SLOTS - 1)), v.slot_id(OOV_SLOTS - 1));
        assert_eq!(v.slot_id(OOV_SLOTS - 1) + 1, v.num_specials());
        assert!(v.id("x") >= v.num_specials());
    }

    #[test]
    fn bijection_over_registered_tokens() {
        let v = Vocab::build(["the quick brown fox , the end"], 1, 2).unwrap();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), i);
            assert_eq!(v.token(i), t);
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(Vocab::build(Vec::<String>::new(), 1, 2), Err(Error::EmptyCorpus)));
        assert!(Vocab::build(["a"], 0, 2).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::build(["a b c a"], 1, 4).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }
}
