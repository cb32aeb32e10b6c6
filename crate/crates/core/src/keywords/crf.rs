use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{AnnotatedUtterance, Tag};

/// Scores for one sequence: `emissions[t][y]`, `transitions[a][b]` between
/// consecutive tags, and start/stop scores. Entries may be `-inf` to forbid
/// a tag or a move.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials {
    pub emissions: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Potentials {
    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    pub fn len(&self) -> usize {
        self.emissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    pub fn path_score(&self, path: &[usize]) -> f64 {
        if path.is_empty() {
            return 0.0;
        }
        let mut s = self.start[path[0]] + self.emissions[0][path[0]];
        for t in 1..path.len() {
            s += self.transitions[path[t - 1]][path[t]] + self.emissions[t][path[t]];
        }
        s + self.stop[path[path.len() - 1]]
    }

    fn forward(&self) -> Vec<Vec<f64>> {
        let n = self.num_tags();
        let mut alpha = Vec::with_capacity(self.len());
        alpha.push((0..n).map(|y| self.start[y] + self.emissions[0][y]).collect::<Vec<_>>());
        for t in 1..self.len() {
            let prev: &Vec<f64> = &alpha[t - 1];
            let row = (0..n)
                .map(|y| log_sum_exp((0..n).map(|p| prev[p] + self.transitions[p][y])) + self.emissions[t][y])
                .collect();
            alpha.push(row);
        }
        alpha
    }

    fn backward(&self) -> Vec<Vec<f64>> {
        let n = self.num_tags();
        let len = self.len();
        let mut beta = vec![vec![0.0; n]; len];
        beta[len - 1] = self.stop.clone();
        for t in (0..len - 1).rev() {
            for y in 0..n {
                beta[t][y] = log_sum_exp(
                    (0..n).map(|q| self.transitions[y][q] + self.emissions[t + 1][q] + beta[t + 1][q]),
                );
            }
        }
        beta
    }

    /// Log of the summed exponentiated score over every tag path.
    /// Zero for the empty sequence.
    pub fn log_partition(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let alpha = self.forward();
        let last = &alpha[self.len() - 1];
        log_sum_exp((0..self.num_tags()).map(|y| last[y] + self.stop[y]))
    }

    /// Highest-scoring path and its score.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        if self.is_empty() {
            return (Vec::new(), 0.0);
        }
        let n = self.num_tags();
        let mut delta: Vec<f64> = (0..n).map(|y| self.start[y] + self.emissions[0][y]).collect();
        let mut back = Vec::with_capacity(self.len());
        for t in 1..self.len() {
            let mut next = vec![f64::NEG_INFINITY; n];
            let mut arg = vec![0usize; n];
            for y in 0..n {
                for p in 0..n {
                    let s = delta[p] + self.transitions[p][y];
                    if s > next[y] {
                        next[y] = s;
                        arg[y] = p;
                    }
                }
                next[y] += self.emissions[t][y];
            }
            back.push(arg);
            delta = next;
        }
        let (mut best, mut score) = (0, f64::NEG_INFINITY);
        for y in 0..n {
            let s = delta[y] + self.stop[y];
            if s > score {
                best = y;
                score = s;
            }
        }
        let mut path = vec![best];
        for arg in back.iter().rev() {
            best = arg[best];
            path.push(best);
        }
        path.reverse();
        (path, score)
    }

    /// Per-position tag marginals and per-gap pair marginals.
    pub fn marginals(&self) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let n = self.num_tags();
        let len = self.len();
        if len == 0 {
            return (Vec::new(), Vec::new());
        }
        let alpha = self.forward();
        let beta = self.backward();
        let z = self.log_partition();
        let nodes = (0..len)
            .map(|t| (0..n).map(|y| (alpha[t][y] + beta[t][y] - z).exp()).collect())
            .collect();
        let edges = (1..len)
            .map(|t| {
                (0..n)
                    .map(|p| {
                        (0..n)
                            .map(|y| {
                                (alpha[t - 1][p] + self.transitions[p][y] + self.emissions[t][y] + beta[t][y] - z)
                                    .exp()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        (nodes, edges)
    }
}

/// Whether `to` may follow `from` (`None` is the sequence start) under BIO.
pub fn bio_allowed(from: Option<Tag>, to: Tag) -> bool {
    !(to == Tag::I && matches!(from, None | Some(Tag::O)))
}

fn shape(token: &str) -> String {
    let mut out = String::new();
    for c in token.chars() {
        let s = if c.is_alphabetic() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            c
        };
        if !out.ends_with(s) {
            out.push(s);
        }
    }
    out
}

/// Feature strings for position `t`: identity, shape, affixes up to three
/// characters and the neighboring tokens.
pub fn token_features(tokens: &[String], t: usize) -> Vec<String> {
    let tok = tokens[t].to_lowercase();
    let chars: Vec<char> = tok.chars().collect();
    let mut f = vec!["bias".to_string(), format!("w={tok}"), format!("shape={}", shape(&tok))];
    for k in 1..=3.min(chars.len()) {
        f.push(format!("p{k}={}", chars[..k].iter().collect::<String>()));
        f.push(format!("s{k}={}", chars[chars.len() - k..].iter().collect::<String>()));
    }
    f.push(match t.checked_sub(1) {
        Some(p) => format!("prev={}", tokens[p].to_lowercase()),
        None => "prev=<s>".to_string(),
    });
    f.push(match tokens.get(t + 1) {
        Some(n) => format!("next={}", n.to_lowercase()),
        None => "next=</s>".to_string(),
    });
    f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    tags: Vec<Tag>,
    features: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// `features.len() x tags.len()`, row-major.
    emission: Vec<f64>,
    /// `(tags + 1) x (tags + 1)`: row `tags.len()` is START, column
    /// `tags.len()` is STOP.
    transition: Vec<f64>,
}

/// Gradient of the summed log-likelihood, laid out like the model weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfGradient {
    pub emission: Vec<f64>,
    pub transition: Vec<f64>,
}

impl CrfModel {
    /// Zero-weight model over `tags` with the given feature vocabulary.
    pub fn new(tags: Vec<Tag>, features: Vec<String>) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::invalid("CRF tag set is empty"));
        }
        let n = tags.len();
        let mut m = Self {
            emission: vec![0.0; features.len() * n],
            transition: vec![0.0; (n + 1) * (n + 1)],
            tags,
            features,
            index: HashMap::new(),
        };
        m.rebuild_index();
        Ok(m)
    }

    /// Restores the lookup table after deserialization and checks sizes.
    pub fn rebuild_index(&mut self) {
        self.index = self.features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tags.len();
        if n == 0
            || self.emission.len() != self.features.len() * n
            || self.transition.len() != (n + 1) * (n + 1)
        {
            return Err(Error::Checkpoint("CRF section has inconsistent sizes".into()));
        }
        if self.emission.iter().chain(&self.transition).any(|w| !w.is_finite()) {
            return Err(Error::Checkpoint("CRF section holds non-finite weights".into()));
        }
        Ok(())
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn emission_weights_mut(&mut self) -> &mut [f64] {
        &mut self.emission
    }

    pub fn transition_weights_mut(&mut self) -> &mut [f64] {
        &mut self.transition
    }

    fn feature_ids(&self, tokens: &[String]) -> Vec<Vec<usize>> {
        (0..tokens.len())
            .map(|t| token_features(tokens, t).iter().filter_map(|f| self.index.get(f).copied()).collect())
            .collect()
    }

    fn trans(&self, from: usize, to: usize) -> f64 {
        self.transition[from * (self.tags.len() + 1) + to]
    }

    fn potentials_from_ids(&self, ids: &[Vec<usize>]) -> Potentials {
        let n = self.tags.len();
        let mask = |from: Option<Tag>, to: Tag, w: f64| if bio_allowed(from, to) { w } else { f64::NEG_INFINITY };
        let emissions = ids
            .iter()
            .map(|fs| (0..n).map(|y| fs.iter().map(|&f| self.emission[f * n + y]).sum()).collect())
            .collect();
        let transitions = (0..n)
            .map(|a| (0..n).map(|b| mask(Some(self.tags[a]), self.tags[b], self.trans(a, b))).collect())
            .collect();
        let start = (0..n).map(|b| mask(None, self.tags[b], self.trans(n, b))).collect();
        let stop = (0..n).map(|a| self.trans(a, n)).collect();
        Potentials { emissions, transitions, start, stop }
    }

    /// Sequence potentials with BIO-invalid moves set to `-inf`.
    pub fn potentials(&self, tokens: &[String]) -> Potentials {
        self.potentials_from_ids(&self.feature_ids(tokens))
    }

    pub fn tag(&self, tokens: &[String]) -> Vec<Tag> {
        let (path, _) = self.potentials(tokens).viterbi();
        path.into_iter().map(|y| self.tags[y]).collect()
    }

    fn gold_path(&self, tags: &[Tag]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.tags
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| Error::invalid(format!("tag {t} outside the model tag set")))
            })
            .collect()
    }

    /// Summed conditional log-likelihood of the gold tags.
    pub fn log_likelihood(&self, data: &[AnnotatedUtterance]) -> Result<f64> {
        let mut total = 0.0;
        for u in data {
            let p = self.potentials(&u.tokens);
            total += p.path_score(&self.gold_path(&u.tags)?) - p.log_partition();
        }
        Ok(total)
    }

    /// Observed minus expected feature counts over `data`.
    pub fn gradient(&self, data: &[AnnotatedUtterance]) -> Result<CrfGradient> {
        let n = self.tags.len();
        let w = n + 1;
        let mut g = CrfGradient { emission: vec![0.0; self.emission.len()], transition: vec![0.0; self.transition.len()] };
        for u in data {
            if u.tokens.is_empty() {
                continue;
            }
            let gold = self.gold_path(&u.tags)?;
            let ids = self.feature_ids(&u.tokens);
            let pot = self.potentials_from_ids(&ids);
            let (nodes, edges) = pot.marginals();
            for (t, fs) in ids.iter().enumerate() {
                for &f in fs {
                    g.emission[f * n + gold[t]] += 1.0;
                    for y in 0..n {
                        g.emission[f * n + y] -= nodes[t][y];
                    }
                }
            }
            let last = gold.len() - 1;
            g.transition[n * w + gold[0]] += 1.0;
            g.transition[gold[last] * w + n] += 1.0;
            for y in 0..n {
                g.transition[n * w + y] -= nodes[0][y];
                g.transition[y * w + n] -= nodes[last][y];
            }
            for t in 1..gold.len() {
                g.transition[gold[t - 1] * w + gold[t]] += 1.0;
                for a in 0..n {
                    for b in 0..n {
                        g.transition[a * w + b] -= edges[t - 1][a][b];
                    }
                }
            }
        }
        Ok(g)
    }

    /// Full-batch gradient ascent on the mean log-likelihood from zero
    /// weights. Returns the model and the summed log-likelihood measured
    /// before each epoch's update, followed by the final value.
    pub fn train(data: &[AnnotatedUtterance], tags: Vec<Tag>, epochs: usize, lr: f64) -> Result<(Self, Vec<f64>)> {
        if data.iter().all(|u| u.tokens.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        if epochs < 1 || !(lr > 0.0) {
            return Err(Error::invalid("CRF training needs epochs >= 1 and lr > 0"));
        }
        let mut features = Vec::new();
        let mut seen = HashMap::new();
        for u in data {
            if u.tokens.len() != u.tags.len() {
                return Err(Error::invalid("annotation with mismatched token and tag counts"));
            }
            for t in 0..u.tokens.len() {
                for f in token_features(&u.tokens, t) {
                    if !seen.contains_key(&f) {
                        seen.insert(f.clone(), features.len());
                        features.push(f);
                    }
                }
            }
        }
        let mut model = Self::new(tags, features)?;
        let scale = lr / data.len() as f64;
        let mut trace = Vec::with_capacity(epochs + 1);
        for _ in 0..epochs {
            trace.push(model.log_likelihood(data)?);
            let g = model.gradient(data)?;
            for (w, d) in model.emission.iter_mut().zip(&g.emission) {
                *w += scale * d;
            }
            for (w, d) in model.transition.iter_mut().zip(&g.transition) {
                *w += scale * d;
            }
        }
        trace.push(model.log_likelihood(data)?);
        Ok((model, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn empty_sequence_tags_empty() {
        let m = CrfModel::new(Tag::ALL.to_vec(), vec![]).unwrap();
        assert!(m.tag(&[]).is_empty());
    }

    #[test]
    fn only_o_tag_set() {
        let m = CrfModel::new(vec![Tag::O], vec![]).unwrap();
        assert_eq!(m.tag(&toks("basalt is nice")), vec![Tag::O; 3]);
    }

    #[test]
    fn all_o_corpus_tags_all_o() {
        let data = vec![
            AnnotatedUtterance { tokens: toks("hello there"), tags: vec![Tag::O; 2] },
            AnnotatedUtterance { tokens: toks("nice day today"), tags: vec![Tag::O; 3] },
        ];
        let (m, _) = CrfModel::train(&data, Tag::ALL.to_vec(), 5, 0.1).unwrap();
        assert_eq!(m.tag(&toks("what a nice rock")), vec![Tag::O; 4]);
    }

    #[test]
    fn never_starts_with_inside() {
        let mut m = CrfModel::new(Tag::ALL.to_vec(), vec!["bias".into()]).unwrap();
        let i = Tag::ALL.iter().position(|t| *t == Tag::I).unwrap();
        m.emission_weights_mut()[i] = 50.0;
        let tags = m.tag(&toks("a b c"));
        assert!(crate::text::valid_bio(&tags), "{tags:?}");
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(CrfModel::train(&[], Tag::ALL.to_vec(), 1, 0.1).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let data = vec![AnnotatedUtterance { tokens: toks("basalt rocks"), tags: vec![Tag::B, Tag::O] }];
        let (m, _) = CrfModel::train(&data, Tag::ALL.to_vec(), 3, 0.1).unwrap();
        let mut back: CrfModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        back.rebuild_index();
        back.validate().unwrap();
        assert_eq!(back, m);
    }
}
