use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Bot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

impl Utterance {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn bot(text: impl Into<String>) -> Self {
        Self { role: Role::Bot, text: text.into() }
    }
}

/// One dialogue episode grounded in a list of knowledge strings.
///
/// Stored one JSON object per line:
/// `{"id", "knowledge": [..], "goal": string|null, "turns": [{"role", "text"}]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub knowledge: Vec<String>,
    pub goal: Option<String>,
    pub turns: Vec<Utterance>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::InvalidScenario { id: self.id.clone(), reason: reason.into() });
        if self.knowledge.is_empty() {
            return bad("no knowledge entries");
        }
        if self.turns.len() < 2 {
            return bad("fewer than two turns");
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Bot };
            if turn.role != expected {
                return bad(&format!("turn {i} should be {expected:?}"));
            }
            if turn.text.trim().is_empty() {
                return bad(&format!("turn {i} is empty"));
            }
        }
        Ok(())
    }

    pub fn bot_turn_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::Bot)
            .map(|(i, _)| i)
    }

    /// Every text field, for vocabulary building.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.knowledge
            .iter()
            .map(String::as_str)
            .chain(self.turns.iter().map(|t| t.text.as_str()))
    }
}

pub fn parse_corpus(text: &str, source_name: &str) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let scenario: Scenario = serde_json::from_str(line).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        scenario.validate()?;
        out.push(scenario);
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string())
}

pub fn write_corpus(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for s in scenarios {
        let line = serde_json::to_string(s)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub scenarios: usize,
    pub rounds: usize,
    /// Rounds per scenario, truncated to two decimals (8219 / 1000 is 8.21).
    pub avg_rounds: f64,
}

/// A round is one utterance.
pub fn corpus_stats(scenarios: &[Scenario]) -> CorpusSummary {
    let rounds: usize = scenarios.iter().map(|s| s.turns.len()).sum();
    let hundredths = if scenarios.is_empty() { 0 } else { rounds * 100 / scenarios.len() };
    CorpusSummary { scenarios: scenarios.len(), rounds, avg_rounds: hundredths as f64 / 100.0 }
}
