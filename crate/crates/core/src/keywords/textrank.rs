use std::collections::BTreeMap;

use super::stopwords::is_content;
use super::{Candidate, Method};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextRankConfig {
    pub window: usize,
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for TextRankConfig {
    fn default() -> Self {
        Self { window: 2, damping: 0.85, max_iter: 100, tol: 1e-6 }
    }
}

/// Node names (first-appearance order), adjacency lists, and first token
/// index per node.
pub fn cooccurrence_graph<S: AsRef<str>>(tokens: &[S], window: usize) -> (Vec<String>, Vec<Vec<usize>>, Vec<usize>) {
    let kept: Vec<(usize, &str)> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (i, t.as_ref()))
        .filter(|(_, t)| is_content(t))
        .collect();
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut names = Vec::new();
    let mut first = Vec::new();
    let seq: Vec<usize> = kept
        .iter()
        .map(|&(i, t)| {
            *ids.entry(t).or_insert_with(|| {
                names.push(t.to_string());
                first.push(i);
                names.len() - 1
            })
        })
        .collect();
    let mut adj = vec![Vec::new(); names.len()];
    for i in 0..seq.len() {
        for j in i + 1..seq.len().min(i + window.max(1)) {
            let (a, b) = (seq[i], seq[j]);
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
    }
    (names, adj, first)
}

/// Iterates `s(v) = (1 - d) + d * sum_{u in adj(v)} s(u) / deg(u)` from all
/// ones until the largest change drops below `tol`.
pub fn textrank_scores(adj: &[Vec<usize>], cfg: &TextRankConfig) -> Vec<f64> {
    let mut s = vec![1.0; adj.len()];
    for _ in 0..cfg.max_iter {
        let next: Vec<f64> = adj
            .iter()
            .map(|nb| (1.0 - cfg.damping) + cfg.damping * nb.iter().map(|&u| s[u] / adj[u].len() as f64).sum::<f64>())
            .collect();
        let delta = next.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        s = next;
        if delta < cfg.tol {
            break;
        }
    }
    s
}

pub fn textrank<S: AsRef<str>>(tokens: &[S], cfg: &TextRankConfig, top_k: usize) -> Vec<Candidate> {
    let (names, adj, first) = cooccurrence_graph(tokens, cfg.window);
    let scores = textrank_scores(&adj, cfg);
    let mut out: Vec<Candidate> = names
        .into_iter()
        .zip(scores)
        .zip(first)
        .map(|((text, score), i)| Candidate { span: (i, i + 1), text, score, method: Method::TextRank })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
    out.truncate(top_k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_token_scores_one_minus_d() {
        let c = textrank(&["basalt", "is", "?"], &TextRankConfig::default(), 5);
        assert_eq!(c.len(), 1);
        assert!((c[0].score - 0.15).abs() < 1e-12);
    }

    #[test]
    fn triangle_is_symmetric() {
        let cfg = TextRankConfig { window: 3, ..Default::default() };
        let c = textrank(&["rock", "lava", "ash"], &cfg, 5);
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|x| (x.score - c[0].score).abs() < 1e-12));
    }

    #[test]
    fn empty_graph() {
        assert!(textrank(&["the", "of"], &TextRankConfig::default(), 3).is_empty());
        assert!(textrank::<&str>(&[], &TextRankConfig::default(), 3).is_empty());
    }

    #[test]
    fn window_two_links_neighbors_only() {
        let (_, adj, _) = cooccurrence_graph(&["a1", "b1", "c1"], 2);
        assert_eq!(adj[0], vec![1]);
        assert_eq!(adj[1], vec![0, 2]);
    }
}
