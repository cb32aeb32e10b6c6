use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::stopwords::is_content;
use super::{Candidate, Method};
use crate::error::{Error, Result};

/// Document frequencies over a reference collection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_documents<D, S>(docs: D) -> Self
    where
        D: IntoIterator,
        D::Item: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut stats = Self::default();
        for doc in docs {
            stats.n_docs += 1;
            let distinct: HashSet<&str> = doc.as_ref().iter().map(|t| t.as_ref()).collect::<Vec<_>>().into_iter().collect();
            for t in distinct {
                *stats.df.entry(t.to_string()).or_default() += 1;
            }
        }
        stats
    }

    pub fn df(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    /// `ln((1 + N) / (1 + df))`.
    pub fn idf(&self, token: &str) -> f64 {
        ((1 + self.n_docs) as f64 / (1 + self.df(token)) as f64).ln()
    }
}

/// Term frequency within the utterance times smoothed inverse document
/// frequency; stopwords and punctuation are skipped.
pub fn tfidf_rank<S: AsRef<str>>(tokens: &[S], stats: &CorpusStats, top_k: usize) -> Result<Vec<Candidate>> {
    if top_k < 1 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if is_content(t) {
            counts.entry(t).or_insert((0, i)).0 += 1;
        }
    }
    let len = tokens.len() as f64;
    let mut out: Vec<Candidate> = counts
        .into_iter()
        .map(|(t, (count, first))| Candidate {
            span: (first, first + 1),
            text: t.to_string(),
            score: count as f64 / len * stats.idf(t),
            method: Method::Tfidf,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
    out.truncate(top_k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(n: usize, df: &[(&str, usize)]) -> CorpusStats {
        CorpusStats { n_docs: n, df: df.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    #[test]
    fn hand_value() {
        let c = tfidf_rank(&["basalt", "is", "nice"], &stats(2, &[("basalt", 1)]), 5).unwrap();
        let basalt = c.iter().find(|c| c.text == "basalt").unwrap();
        assert!((basalt.score - (1.5f64).ln() / 3.0).abs() < 1e-12);
        assert!((basalt.score - 0.1352).abs() < 5e-5);
        assert!(c.iter().all(|c| c.text != "is"));
    }

    #[test]
    fn ubiquitous_word_scores_zero() {
        let c = tfidf_rank(&["rock"], &stats(4, &[("rock", 4)]), 1).unwrap();
        assert_eq!(c[0].score, 0.0);
    }

    #[test]
    fn only_stopwords() {
        assert!(tfidf_rank(&["is", "the", "?"], &stats(2, &[]), 3).unwrap().is_empty());
    }

    #[test]
    fn top_k_zero_rejected() {
        assert!(tfidf_rank(&["a"], &stats(1, &[]), 0).is_err());
    }

    #[test]
    fn ties_lexicographic() {
        let c = tfidf_rank(&["zeta", "alpha"], &stats(1, &[]), 2).unwrap();
        assert_eq!(c[0].text, "alpha");
    }

    #[test]
    fn stats_count_documents() {
        let s = CorpusStats::from_documents([vec!["a", "a", "b"], vec!["b"]]);
        assert_eq!(s.n_docs, 2);
        assert_eq!(s.df("a"), 1);
        assert_eq!(s.df("b"), 2);
    }
}
