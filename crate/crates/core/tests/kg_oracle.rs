use std::collections::HashSet;

use pkchat_core::kg::{Direction, KgStore, Neighbor, Triple, TripleFormat};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_store(seed: u64, n: usize) -> KgStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = KgStore::new();
    while store.len() < n {
        let h = format!("e{}", rng.random_range(0..15));
        let t = format!("e{}", rng.random_range(0..15));
        let r = format!("r{}", rng.random_range(0..4));
        store.insert(Triple::new(h, r, t)).unwrap();
    }
    store
}

fn scan(store: &KgStore, entity: &str) -> HashSet<Neighbor> {
    let mut out = HashSet::new();
    for t in store.triples() {
        if t.head == entity {
            out.insert(Neighbor::new(Direction::Out, &t.relation, &t.tail));
        }
        if t.tail == entity {
            out.insert(Neighbor::new(Direction::In, &t.relation, &t.head));
        }
    }
    out
}

#[test]
fn neighborhood_matches_linear_scan() {
    for seed in 0..5 {
        let store = random_store(seed, 50);
        for e in store.entity_names() {
            let got: Vec<Neighbor> = store.neighborhood(&e);
            let set: HashSet<Neighbor> = got.iter().cloned().collect();
            assert_eq!(set.len(), got.len(), "no repeats");
            assert_eq!(set, scan(&store, &e), "entity {e}");
        }
    }
}

#[test]
fn each_triple_in_two_neighborhoods() {
    let store = random_store(11, 50);
    let names = store.entity_names();
    for t in store.triples() {
        let mut hits = 0;
        for e in &names {
            let n = store.neighborhood(e);
            hits += n.iter().filter(|x| x.direction == Direction::Out && *e == t.head && x.relation == t.relation && x.neighbor == t.tail).count();
            hits += n.iter().filter(|x| x.direction == Direction::In && *e == t.tail && x.relation == t.relation && x.neighbor == t.head).count();
        }
        assert_eq!(hits, 2, "{t:?}");
    }
}

#[test]
fn neighborhood_order_out_then_sorted() {
    let store = random_store(3, 50);
    for e in store.entity_names() {
        let n = store.neighborhood(&e);
        let split = n.iter().position(|x| x.direction == Direction::In).unwrap_or(n.len());
        assert!(n[split..].iter().all(|x| x.direction == Direction::In));
        for part in [&n[..split], &n[split..]] {
            for w in part.windows(2) {
                assert!((&w[0].relation, &w[0].neighbor) < (&w[1].relation, &w[1].neighbor));
            }
        }
    }
}

#[test]
fn load_dump_load_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let store = random_store(5, 50);
    let a = dir.path().join("a.tsv");
    store.save_tsv(&a).unwrap();
    let (loaded, report) = KgStore::load(&a, TripleFormat::Tsv).unwrap();
    assert_eq!(report.added, 50);
    let b = dir.path().join("b.tsv");
    loaded.save_tsv(&b).unwrap();
    let (again, _) = KgStore::load(&b, TripleFormat::Tsv).unwrap();
    let set = |s: &KgStore| s.triples().iter().cloned().collect::<HashSet<_>>();
    assert_eq!(set(&store), set(&loaded));
    assert_eq!(set(&loaded), set(&again));
}

#[test]
fn missing_file_is_io_error() {
    let err = KgStore::load("/nonexistent/kg.tsv", TripleFormat::Tsv).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/kg.tsv"));
}

proptest! {
    #[test]
    fn scan_oracle_holds_for_any_seed(seed in 0u64..10_000) {
        let store = random_store(seed, 30);
        for e in store.entity_names() {
            let got: HashSet<Neighbor> = store.neighborhood(&e).into_iter().collect();
            prop_assert_eq!(got, scan(&store, &e));
        }
    }
}
