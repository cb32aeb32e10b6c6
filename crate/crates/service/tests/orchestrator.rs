mod common;

use common::tiny_orchestrator;
use pkchat_core::kg::linearize;
use pkchat_core::text::Role;
use pkchat_service::Session;
use proptest::prelude::*;

#[test]
fn first_message_retrieves_entity() {
    let o = tiny_orchestrator(0.5);
    let mut s = Session::new("a");
    let r = o.handle_message(&mut s, "what is the formed_by of basalt ?").unwrap();
    assert!(r.topic_switched);
    assert!(!r.fallback);
    assert_eq!(r.entity.as_deref(), Some("basalt"));
    assert_eq!(r.knowledge, vec!["basalt formed_by lava cooling", "basalt is_a igneous rock"]);
    assert_eq!(r.ts_score, 0.0);
    assert_eq!(s.active_knowledge, r.knowledge);
    assert_eq!(s.switch_log.len(), 1);
    assert_eq!(s.switch_log[0].old_entity, None);
    assert_eq!(s.history.len(), 2);
    assert_eq!(s.history[0].role, Role::User);
    assert_eq!(s.history[1].role, Role::Bot);
    assert_eq!(r.tokens.len(), r.response.split_whitespace().count());
}

#[test]
fn follow_up_above_threshold_keeps_knowledge() {
    // With a zero threshold every score passes the gate.
    let o = tiny_orchestrator(0.0);
    let mut s = Session::new("a");
    o.handle_message(&mut s, "tell me about basalt").unwrap();
    let before = s.active_knowledge.clone();
    let r = o.handle_message(&mut s, "what about granite").unwrap();
    assert!(!r.topic_switched);
    assert!(r.ts_score > 0.0 && r.ts_score < 1.0);
    assert_eq!(s.active_knowledge, before);
    assert_eq!(s.switch_log.len(), 1);
}

#[test]
fn threshold_above_one_always_rechecks() {
    let o = tiny_orchestrator(1.1);
    let mut s = Session::new("a");
    o.handle_message(&mut s, "tell me about basalt").unwrap();
    let r = o.handle_message(&mut s, "what about granite").unwrap();
    assert!(r.topic_switched);
    assert_eq!(r.entity.as_deref(), Some("granite"));
    assert_eq!(s.switch_log[1].old_entity.as_deref(), Some("basalt"));
    assert_eq!(s.switch_log[1].turn, 2);
}

#[test]
fn unresolvable_without_knowledge_falls_back() {
    let o = tiny_orchestrator(0.5);
    let mut s = Session::new("a");
    let r = o.handle_message(&mut s, "nice weather today").unwrap();
    assert!(r.fallback);
    assert!(!r.topic_switched);
    assert!(r.knowledge.is_empty());
    assert_eq!(s.history.len(), 2);
    assert!(s.switch_log.is_empty());
}

const POOL: &[&str] = &[
    "tell me about basalt",
    "what about granite",
    "what is the formed_by of basalt ?",
    "nice weather today",
    "do you know igneous rock",
    "hello",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gating_soundness(msgs in prop::collection::vec(0..POOL.len(), 1..6), tau in 0.0f64..1.2) {
        let o = tiny_orchestrator(tau);
        let mut s = Session::new("p");
        let mut replacements = 0;
        for m in msgs {
            let before = s.active_knowledge.clone();
            let r = o.handle_message(&mut s, POOL[m]).unwrap();
            if r.topic_switched {
                replacements += 1;
                prop_assert!(r.entity.is_some());
            } else {
                prop_assert_eq!(&s.active_knowledge, &before);
            }
            prop_assert_eq!(s.switch_log.len(), replacements);
            if let Some(e) = &s.active_entity {
                let name = o.kg.display_name(e).unwrap().to_string();
                prop_assert_eq!(&s.active_knowledge, &linearize(&o.kg.neighborhood(e), &name));
            }
        }
    }

    #[test]
    fn sessions_are_isolated(a in prop::collection::vec(0..POOL.len(), 1..4), b in prop::collection::vec(0..POOL.len(), 1..4)) {
        let o = tiny_orchestrator(0.5);
        let (mut alone_a, mut alone_b) = (Session::new("a"), Session::new("b"));
        for &m in &a { o.handle_message(&mut alone_a, POOL[m]).unwrap(); }
        for &m in &b { o.handle_message(&mut alone_b, POOL[m]).unwrap(); }
        let (mut sa, mut sb) = (Session::new("a"), Session::new("b"));
        for i in 0..a.len().max(b.len()) {
            if let Some(&m) = b.get(i) { o.handle_message(&mut sb, POOL[m]).unwrap(); }
            if let Some(&m) = a.get(i) { o.handle_message(&mut sa, POOL[m]).unwrap(); }
        }
        prop_assert_eq!(&sa.history, &alone_a.history);
        prop_assert_eq!(&sb.history, &alone_b.history);
        prop_assert_eq!(&sa.switch_log, &alone_a.switch_log);
    }
}
