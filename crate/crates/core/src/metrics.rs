//! Automatic response scoring: BLEU, Distinct and knowledge overlap.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keywords::is_content;
use crate::model::{DecodeConfig, DialogueModel};
use crate::text::{tokenize, Scenario};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub generated: Vec<String>,
    pub reference: Vec<String>,
    /// Gold knowledge strings for the turn.
    pub knowledge: Vec<String>,
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    out
}

fn check_order(n: usize) -> Result<()> {
    if n == 1 || n == 2 {
        Ok(())
    } else {
        Err(Error::invalid(format!("n-gram order must be 1 or 2, got {n}")))
    }
}

/// Cumulative BLEU-n of one pair: clipped modified precisions with add-one
/// smoothing from order 2, uniform weights, brevity penalty.
pub fn sentence_bleu<S: AsRef<str>>(generated: &[S], reference: &[S], n: usize) -> f64 {
    if generated.is_empty() || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let gen = ngrams(generated, k);
        let refs = ngrams(reference, k);
        let total: usize = gen.values().sum();
        let clipped: usize = gen.iter().map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0))).sum();
        let (num, den) = if k == 1 { (clipped as f64, total as f64) } else { (clipped as f64 + 1.0, total as f64 + 1.0) };
        if num == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln() / n as f64;
    }
    let (g, r) = (generated.len() as f64, reference.len() as f64);
    let bp = if g < r { (1.0 - r / g).exp() } else { 1.0 };
    bp * log_sum.exp()
}

/// Mean sentence BLEU-n over pairs.
pub fn bleu_n(pairs: &[EvalPair], n: usize) -> Result<f64> {
    check_order(n)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    Ok(pairs.iter().map(|p| sentence_bleu(&p.generated, &p.reference, n)).sum::<f64>() / pairs.len() as f64)
}

/// Distinct n-grams over all n-gram occurrences across the response set.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> Result<f64> {
    check_order(n)?;
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0;
    for r in responses {
        for (g, c) in ngrams(r, n) {
            total += c;
            seen.insert(g);
        }
    }
    Ok(if total == 0 { 0.0 } else { seen.len() as f64 / total as f64 })
}

fn content_set<'a>(tokens: impl IntoIterator<Item = &'a str>) -> HashSet<&'a str> {
    tokens.into_iter().filter(|t| is_content(t)).collect()
}

/// Per-pair `(recall, precision, f1)` of content tokens against the gold
/// knowledge.
pub fn pair_knowledge_prf(pair: &EvalPair) -> (f64, f64, f64) {
    let ktoks: Vec<String> = pair.knowledge.iter().flat_map(|k| tokenize(k)).collect();
    let kset = content_set(ktoks.iter().map(String::as_str));
    let gset = content_set(pair.generated.iter().map(String::as_str));
    let hit = gset.intersection(&kset).count() as f64;
    let p = if gset.is_empty() { 0.0 } else { hit / gset.len() as f64 };
    let r = if kset.is_empty() { 0.0 } else { hit / kset.len() as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (r, p, f)
}

/// Macro-averaged knowledge `(recall, precision, f1)`.
pub fn knowledge_prf(pairs: &[EvalPair]) -> (f64, f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = pairs.len() as f64;
    pairs.iter().map(pair_knowledge_prf).fold((0.0, 0.0, 0.0), |acc, (r, p, f)| {
        (acc.0 + r / n, acc.1 + p / n, acc.2 + f / n)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub knowledge_recall: f64,
    pub knowledge_precision: f64,
    pub knowledge_f1: f64,
    pub pairs: usize,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let rows = [
            ("BLEU-1", self.bleu1),
            ("BLEU-2", self.bleu2),
            ("Distinct-1", self.distinct1),
            ("Distinct-2", self.distinct2),
            ("Knowledge R", self.knowledge_recall),
            ("Knowledge P", self.knowledge_precision),
            ("Knowledge F1", self.knowledge_f1),
        ];
        let mut out = String::new();
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<14}{v:>8.4}");
        }
        let _ = writeln!(out, "{:<14}{:>8}", "pairs", self.pairs);
        out
    }
}

pub fn evaluate(pairs: &[EvalPair]) -> Result<EvalReport> {
    if pairs.iter().any(|p| p.reference.is_empty()) {
        return Err(Error::invalid("every evaluation pair needs a non-empty reference"));
    }
    let gens: Vec<Vec<String>> = pairs.iter().map(|p| p.generated.clone()).collect();
    let (r, p, f) = knowledge_prf(pairs);
    Ok(EvalReport {
        bleu1: bleu_n(pairs, 1)?,
        bleu2: bleu_n(pairs, 2)?,
        distinct1: distinct_n(&gens, 1)?,
        distinct2: distinct_n(&gens, 2)?,
        knowledge_recall: r,
        knowledge_precision: p,
        knowledge_f1: f,
        pairs: pairs.len(),
    })
}

/// Gold responses scored as if generated; the reference point for a model.
pub fn gold_pairs(scenarios: &[Scenario]) -> Vec<EvalPair> {
    let mut out = Vec::new();
    for s in scenarios {
        for t in s.bot_turn_indices() {
            let gold = tokenize(&s.turns[t].text);
            out.push(EvalPair { generated: gold.clone(), reference: gold, knowledge: s.knowledge.clone() });
        }
    }
    out
}

/// Generates a reply for every bot turn from the gold history and scores
/// the replies against the gold ones.
pub fn run_eval(model: &DialogueModel, scenarios: &[Scenario], cfg: &DecodeConfig) -> Result<(EvalReport, Vec<EvalPair>)> {
    if scenarios.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut pairs = Vec::new();
    for s in scenarios {
        for t in s.bot_turn_indices() {
            let r = model.generate(&s.turns[..t], &s.knowledge, cfg)?;
            pairs.push(EvalPair {
                generated: r.tokens,
                reference: tokenize(&s.turns[t].text),
                knowledge: s.knowledge.clone(),
            });
        }
    }
    Ok((evaluate(&pairs)?, pairs))
}
