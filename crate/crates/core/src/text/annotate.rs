use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::corpus::Scenario;
use super::tokenize::tokenize;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "B-ENT")]
    B,
    #[serde(rename = "I-ENT")]
    I,
    #[serde(rename = "O")]
    O,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::B, Tag::I, Tag::O];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::B => "B-ENT",
            Tag::I => "I-ENT",
            Tag::O => "O",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown tag `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl AnnotatedUtterance {
    /// Equal lengths, and `I-ENT` only ever continues a `B-ENT`/`I-ENT`.
    pub fn is_valid_bio(&self) -> bool {
        self.tokens.len() == self.tags.len() && valid_bio(&self.tags)
    }

    /// Token spans `[start, end)` of tagged entities.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, tag) in self.tags.iter().enumerate() {
            match tag {
                Tag::B => {
                    if let Some(s) = start.take() {
                        spans.push((s, i));
                    }
                    start = Some(i);
                }
                Tag::I => {}
                Tag::O => {
                    if let Some(s) = start.take() {
                        spans.push((s, i));
                    }
                }
            }
        }
        if let Some(s) = start {
            spans.push((s, self.tags.len()));
        }
        spans
    }
}

pub fn valid_bio(tags: &[Tag]) -> bool {
    let mut prev = Tag::O;
    for &t in tags {
        if t == Tag::I && prev == Tag::O {
            return false;
        }
        prev = t;
    }
    true
}

/// Side-car annotation line:
/// `{"scenario_id", "turn_index", "tokens": [..], "tags": [..]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub scenario_id: String,
    pub turn_index: usize,
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

/// Exact token-sequence matcher over entity names.
#[derive(Clone, Debug, Default)]
pub struct EntityMatcher {
    by_first: HashMap<String, Vec<Vec<String>>>,
}

impl EntityMatcher {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for name in names {
            let toks = tokenize(name.as_ref());
            if let Some(first) = toks.first() {
                by_first.entry(first.clone()).or_default().push(toks);
            }
        }
        for seqs in by_first.values_mut() {
            seqs.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
            seqs.dedup();
        }
        Self { by_first }
    }

    /// Leftmost-longest non-overlapping matches as `[start, end)` spans.
    pub fn find(&self, tokens: &[String]) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.by_first.get(&tokens[i]).and_then(|seqs| {
                seqs.iter()
                    .find(|s| tokens.len() - i >= s.len() && tokens[i..i + s.len()] == s[..])
                    .map(Vec::len)
            });
            match hit {
                Some(len) => {
                    spans.push((i, i + len));
                    i += len;
                }
                None => i += 1,
            }
        }
        spans
    }

    pub fn annotate_tokens(&self, tokens: Vec<String>) -> AnnotatedUtterance {
        let mut tags = vec![Tag::O; tokens.len()];
        for (s, e) in self.find(&tokens) {
            tags[s] = Tag::B;
            for t in &mut tags[s + 1..e] {
                *t = Tag::I;
            }
        }
        AnnotatedUtterance { tokens, tags }
    }

    pub fn annotate(&self, text: &str) -> AnnotatedUtterance {
        self.annotate_tokens(tokenize(text))
    }
}

/// Tags every turn of `scenario` by locating entity names from the graph.
pub fn auto_annotate(scenario: &Scenario, matcher: &EntityMatcher) -> Vec<AnnotatedUtterance> {
    scenario.turns.iter().map(|t| matcher.annotate(&t.text)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::corpus::Utterance;
    use proptest::prelude::*;

    #[test]
    fn single_token_entity() {
        let m = EntityMatcher::new(["basalt"]);
        let a = m.annotate("basalt is my favorite");
        assert_eq!(a.tags, vec![Tag::B, Tag::O, Tag::O, Tag::O]);
    }

    #[test]
    fn multi_token_entity() {
        let m = EntityMatcher::new(["igneous rock"]);
        let a = m.annotate("igneous rock forms");
        assert_eq!(a.tags, vec![Tag::B, Tag::I, Tag::O]);
    }

    #[test]
    fn no_entity_all_outside() {
        let m = EntityMatcher::new(["basalt"]);
        assert!(m.annotate("nice weather today").tags.iter().all(|t| *t == Tag::O));
    }

    #[test]
    fn longest_match_wins() {
        let m = EntityMatcher::new(["rock", "igneous rock", "igneous"]);
        let a = m.annotate("igneous rock rock");
        assert_eq!(a.tags, vec![Tag::B, Tag::I, Tag::B]);
        assert_eq!(a.spans(), vec![(0, 2), (2, 3)]);
    }

    #[test]
    fn scenario_annotation_covers_each_turn() {
        let s = Scenario {
            id: "x".into(),
            knowledge: vec!["basalt is_a igneous rock".into()],
            goal: None,
            turns: vec![Utterance::user("what is basalt ?"), Utterance::bot("an igneous rock .")],
        };
        let m = EntityMatcher::new(["basalt", "igneous rock"]);
        let out = auto_annotate(&s, &m);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].tags, vec![Tag::O, Tag::B, Tag::I, Tag::O]);
    }

    #[test]
    fn tag_strings() {
        assert_eq!(serde_json::to_string(&Tag::B).unwrap(), "\"B-ENT\"");
        assert_eq!("I-ENT".parse::<Tag>().unwrap(), Tag::I);
        assert!("X".parse::<Tag>().is_err());
    }

    proptest! {
        #[test]
        fn output_is_always_valid_bio(
            words in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..20),
            names in prop::collection::vec("[abc]( [abcd]){0,2}", 1..5),
        ) {
            let m = EntityMatcher::new(&names);
            let a = m.annotate(&words.join(" "));
            prop_assert!(a.is_valid_bio());
        }
    }
}
