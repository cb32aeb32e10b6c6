//! Per-session dialogue flow: gate on the topic-switch head, re-retrieve
//! knowledge when the user moves on, then generate.

use std::time::{SystemTime, UNIX_EPOCH};

use pkchat_core::keywords::{CorpusStats, KeywordExtractor};
use pkchat_core::kg::{linearize, KgStore};
use pkchat_core::model::{DecodeConfig, DialogueModel, TokenSource};
use pkchat_core::text::{tokenize, Utterance};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    /// Index of the user turn in the history that triggered the switch.
    pub turn: usize,
    pub old_entity: Option<String>,
    pub new_entity: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub history: Vec<Utterance>,
    pub active_entity: Option<String>,
    pub active_knowledge: Vec<String>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
    pub switch_log: Vec<SwitchEvent>,
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        let now = now_millis();
        Self {
            id: id.into(),
            history: Vec::new(),
            active_entity: None,
            active_knowledge: Vec::new(),
            created_at: now,
            updated_at: now,
            switch_log: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenOut {
    pub text: String,
    pub source: TokenSource,
    /// Position in the knowledge-then-context source stream for copied tokens.
    pub copy_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub response: String,
    pub tokens: Vec<TokenOut>,
    pub topic_switched: bool,
    /// Coherence of the user turn with the knowledge active before it; 0 when
    /// there was none.
    pub ts_score: f64,
    pub entity: Option<String>,
    pub knowledge: Vec<String>,
    /// A switch was needed but no entity resolved, so the old knowledge stayed.
    pub fallback: bool,
}

pub struct Orchestrator {
    pub model: DialogueModel,
    pub kg: KgStore,
    pub extractor: KeywordExtractor,
    pub tau: f64,
    pub decode: DecodeConfig,
}

/// IDF statistics over entity neighborhoods, one document per head entity.
pub fn kg_stats(kg: &KgStore) -> CorpusStats {
    let docs: Vec<Vec<String>> = kg
        .head_names()
        .iter()
        .map(|e| linearize(&kg.neighborhood(e), e).iter().flat_map(|k| tokenize(k)).collect())
        .collect();
    CorpusStats::from_documents(&docs)
}

impl Orchestrator {
    pub fn new(model: DialogueModel, kg: KgStore, extractor: KeywordExtractor, tau: f64) -> Self {
        Self { model, kg, extractor, tau, decode: DecodeConfig::default() }
    }

    /// Switch-head score of a new user turn against the active knowledge,
    /// 0 when there is none. Below `tau` the orchestrator looks for a new
    /// entity.
    pub fn coherence(&self, knowledge: &[String], history: &[Utterance], text: &str) -> pkchat_core::Result<f64> {
        if knowledge.is_empty() {
            return Ok(0.0);
        }
        self.model.topic_switch_score(knowledge, history, text)
    }

    /// One user turn. On error the session is left exactly as it was.
    pub fn handle_message(&self, session: &mut Session, text: &str) -> pkchat_core::Result<TurnResult> {
        let user = Utterance::user(tokenize(text).join(" "));
        let ts_score = self.coherence(&session.active_knowledge, &session.history, &user.text)?;

        let mut entity = session.active_entity.clone();
        let mut knowledge = session.active_knowledge.clone();
        let mut switch = None;
        let mut fallback = false;
        if session.active_knowledge.is_empty() || ts_score < self.tau {
            match self.extractor.resolve(&tokenize(&user.text), &self.kg) {
                Some(r) if Some(&r.entity) != session.active_entity.as_ref() => {
                    let name = self.kg.display_name(&r.entity).unwrap_or(&r.entity).to_string();
                    knowledge = linearize(&self.kg.neighborhood(&r.entity), &name);
                    switch = Some(SwitchEvent {
                        turn: session.history.len(),
                        old_entity: session.active_entity.clone(),
                        new_entity: r.entity.clone(),
                        score: ts_score,
                    });
                    entity = Some(r.entity);
                }
                Some(_) => {}
                None => fallback = true,
            }
            log::debug!("switch check: score {ts_score:.3}, entity {entity:?}, fallback {fallback}");
        }

        let mut context = session.history.clone();
        context.push(user.clone());
        let r = self.model.generate(&context, &knowledge, &self.decode)?;
        let tokens = r
            .tokens
            .iter()
            .zip(&r.attribution)
            .map(|(t, a)| TokenOut { text: t.clone(), source: a.source, copy_index: a.copy_index })
            .collect();
        let response = r.text();

        session.history.push(user);
        session.history.push(Utterance::bot(response.clone()));
        let topic_switched = switch.is_some();
        if let Some(ev) = switch {
            session.switch_log.push(ev);
            session.active_entity = entity.clone();
            session.active_knowledge = knowledge.clone();
        }
        session.updated_at = now_millis();
        Ok(TurnResult { response, tokens, topic_switched, ts_score, entity, knowledge, fallback })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pkchat_core::kg::fixture_kg;

    #[test]
    fn kg_stats_has_one_document_per_head() {
        let stats = kg_stats(&fixture_kg());
        assert_eq!((stats.df("igneous"), stats.df("lava"), stats.df("basalt")), (2, 1, 1));
    }

    #[test]
    fn new_session_is_empty() {
        let s = Session::new("x");
        assert!(s.history.is_empty() && s.active_entity.is_none() && s.switch_log.is_empty());
        assert_eq!(s.created_at, s.updated_at);
    }
}
