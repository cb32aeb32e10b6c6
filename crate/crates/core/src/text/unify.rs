use serde::Deserialize;
use serde_json::Value;

use super::corpus::{Role, Scenario, Utterance};
use crate::error::{Error, Result};

/// A record in the style of external knowledge-grounded dialogue corpora:
/// conversation goals, background knowledge and an optional user profile
/// alongside the conversation.
///
/// Lines may be plain strings or arrays of strings (triples), which are joined
/// with spaces. A profile may be an object (`key value` lines, keys sorted) or
/// a list of lines. Conversation turns may be plain strings, alternating
/// user/bot from the first, or `{role, text}` objects.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct ExternalScenario {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default, deserialize_with = "lines")]
    pub goal: Vec<String>,
    #[serde(default, deserialize_with = "lines")]
    pub knowledge: Vec<String>,
    #[serde(default, alias = "user_profile", deserialize_with = "lines")]
    pub profile: Vec<String>,
    #[serde(default, alias = "turns")]
    pub conversation: Vec<Value>,
}

fn flatten(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.trim().to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(flatten).collect();
            Some(parts.join(" "))
        }
        other => Some(other.to_string()),
    }
}

fn lines<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    let v = Value::deserialize(d)?;
    let out = match v {
        Value::Null => vec![],
        Value::String(s) => vec![s],
        Value::Array(items) => items.iter().filter_map(flatten).collect(),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            keys.into_iter()
                .filter_map(|k| flatten(&map[k]).map(|v| format!("{k} {v}")))
                .collect()
        }
        other => vec![other.to_string()],
    };
    Ok(out.into_iter().filter(|s| !s.trim().is_empty()).collect())
}

/// Folds goals, knowledge and profile (in that order) into a single knowledge
/// list; the goal lines are also kept, joined, as the scenario goal.
pub fn unify_format(ext: &ExternalScenario, fallback_id: &str) -> Result<Scenario> {
    let id = ext.id.clone().unwrap_or_else(|| fallback_id.to_string());
    if ext.conversation.is_empty() {
        return Err(Error::InvalidScenario { id, reason: "no turns".into() });
    }
    let knowledge: Vec<String> = ext
        .goal
        .iter()
        .chain(&ext.knowledge)
        .chain(&ext.profile)
        .cloned()
        .collect();
    if knowledge.is_empty() {
        return Err(Error::InvalidScenario {
            id,
            reason: "no goal, knowledge or profile lines".into(),
        });
    }
    let mut turns = Vec::with_capacity(ext.conversation.len());
    for (i, t) in ext.conversation.iter().enumerate() {
        let default_role = if i % 2 == 0 { Role::User } else { Role::Bot };
        let turn = match t {
            Value::String(s) => Utterance { role: default_role, text: s.clone() },
            Value::Object(_) => serde_json::from_value::<Utterance>(t.clone())?,
            other => Utterance { role: default_role, text: flatten(other).unwrap_or_default() },
        };
        turns.push(turn);
    }
    Ok(Scenario {
        id,
        knowledge,
        goal: (!ext.goal.is_empty()).then(|| ext.goal.join(" ; ")),
        turns,
    })
}
