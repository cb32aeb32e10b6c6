use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase with runs of whitespace collapsed; the lookup key for entities.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// A fact as given at load time (original casing kept for display).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self { head: head.into(), relation: relation.into(), tail: tail.into() }
    }

    fn key(&self) -> (String, String, String) {
        (normalize(&self.head), normalize(&self.relation), normalize(&self.tail))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Neighbor {
    pub direction: Direction,
    pub relation: String,
    pub neighbor: String,
}

impl Neighbor {
    pub fn new(direction: Direction, relation: &str, neighbor: &str) -> Self {
        Self { direction, relation: relation.into(), neighbor: neighbor.into() }
    }
}

/// Which edges a neighborhood query recalls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recall {
    #[default]
    Both,
    OutOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleFormat {
    Tsv,
    NTriples,
}

impl FromStr for TripleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "nt" | "ntriples" | "ntriples-subset" => Ok(Self::NTriples),
            other => Err(Error::invalid(format!("unknown triple format `{other}`"))),
        }
    }
}

impl TripleFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nt") => Self::NTriples,
            _ => Self::Tsv,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub added: usize,
    pub duplicates: usize,
}

/// Deduplicated triples indexed by normalized head and tail.
#[derive(Clone, Debug, Default)]
pub struct KgStore {
    triples: Vec<Triple>,
    keys: HashSet<(String, String, String)>,
    by_head: HashMap<String, Vec<usize>>,
    by_tail: HashMap<String, Vec<usize>>,
}

impl KgStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Result<Self> {
        let mut store = Self::new();
        for t in triples {
            store.insert(t)?;
        }
        Ok(store)
    }

    /// Adds a triple; returns false when an equal (normalized) triple exists.
    pub fn insert(&mut self, triple: Triple) -> Result<bool> {
        let trimmed = Triple::new(triple.head.trim(), triple.relation.trim(), triple.tail.trim());
        if trimmed.head.is_empty() || trimmed.relation.is_empty() || trimmed.tail.is_empty() {
            return Err(Error::invalid(format!("triple with an empty field: {triple:?}")));
        }
        let key = trimmed.key();
        if self.keys.contains(&key) {
            return Ok(false);
        }
        let idx = self.triples.len();
        self.by_head.entry(key.0.clone()).or_default().push(idx);
        self.by_tail.entry(key.2.clone()).or_default().push(idx);
        self.keys.insert(key);
        self.triples.push(trimmed);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn load(path: impl AsRef<Path>, format: TripleFormat) -> Result<(Self, LoadReport)> {
        let mut store = Self::new();
        let report = store.load_into(path, format)?;
        Ok((store, report))
    }

    pub fn load_into(&mut self, path: impl AsRef<Path>, format: TripleFormat) -> Result<LoadReport> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.parse_into(&text, format, &path.display().to_string())
    }

    /// Parses `text` and inserts every row. Nothing is inserted when any row
    /// is malformed.
    pub fn parse_into(&mut self, text: &str, format: TripleFormat, source_name: &str) -> Result<LoadReport> {
        let mut parsed = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let row = match format {
                TripleFormat::Tsv => parse_tsv_row(line),
                TripleFormat::NTriples => parse_nt_row(trimmed),
            };
            let triple = row.map_err(|reason| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                reason,
            })?;
            parsed.push(triple);
        }
        if parsed.is_empty() {
            log::warn!("{source_name}: no triples found");
        }
        let rows = parsed.len();
        let mut added = 0;
        for t in parsed {
            if self.insert(t)? {
                added += 1;
            }
        }
        Ok(LoadReport { rows, added, duplicates: rows - added })
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_tsv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
        }
        out
    }

    pub fn contains_entity(&self, entity: &str) -> bool {
        let key = normalize(entity);
        self.by_head.contains_key(&key) || self.by_tail.contains_key(&key)
    }

    /// Normalized names of every head or tail, sorted.
    pub fn entity_names(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.by_head.keys().chain(self.by_tail.keys()).collect();
        set.into_iter().cloned().collect()
    }

    /// Normalized names of entities with at least one outgoing edge, sorted.
    pub fn head_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.by_head.keys().cloned().collect();
        v.sort();
        v
    }

    /// Display form of a normalized entity name.
    pub fn display_name(&self, entity: &str) -> Option<&str> {
        let key = normalize(entity);
        if let Some(&i) = self.by_head.get(&key).and_then(|v| v.first()) {
            return Some(&self.triples[i].head);
        }
        self.by_tail.get(&key).and_then(|v| v.first()).map(|&i| self.triples[i].tail.as_str())
    }

    pub fn neighborhood(&self, entity: &str) -> Vec<Neighbor> {
        self.neighborhood_with(entity, Recall::Both)
    }

    /// Outgoing edges then incoming edges, each sorted by relation then
    /// neighbor (normalized). Unknown entities yield an empty list.
    pub fn neighborhood_with(&self, entity: &str, recall: Recall) -> Vec<Neighbor> {
        let key = normalize(entity);
        let collect = |idx: Option<&Vec<usize>>, dir: Direction| {
            let mut v: Vec<Neighbor> = idx
                .into_iter()
                .flatten()
                .map(|&i| {
                    let t = &self.triples[i];
                    let other = if dir == Direction::Out { &t.tail } else { &t.head };
                    Neighbor::new(dir, &t.relation, other)
                })
                .collect();
            v.sort_by_cached_key(|n| (normalize(&n.relation), normalize(&n.neighbor)));
            v
        };
        let mut out = collect(self.by_head.get(&key), Direction::Out);
        if recall == Recall::Both {
            out.extend(collect(self.by_tail.get(&key), Direction::In));
        }
        out
    }
}

fn parse_tsv_row(line: &str) -> std::result::Result<Triple, String> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    if fields.iter().any(|f| f.trim().is_empty()) {
        return Err("empty field".into());
    }
    Ok(Triple::new(fields[0].trim(), fields[1].trim(), fields[2].trim()))
}

fn local_name(iri: &str) -> &str {
    iri.rsplit(['/', '#']).next().unwrap_or(iri)
}

/// Reads one `<iri>` or `"literal"` term, returning it and the rest of the line.
fn nt_term(s: &str) -> std::result::Result<(String, &str), String> {
    let s = s.trim_start();
    if let Some(rest) = s.strip_prefix('<') {
        let end = rest.find('>').ok_or("unterminated IRI")?;
        return Ok((local_name(&rest[..end]).to_string(), &rest[end + 1..]));
    }
    if let Some(rest) = s.strip_prefix('"') {
        let mut value = String::new();
        let mut chars = rest.char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => {
                    if let Some((_, e)) = chars.next() {
                        value.push(match e {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                    }
                }
                '"' => {
                    let mut after = &rest[i + 1..];
                    if let Some(tagged) = after.strip_prefix('@') {
                        after = tagged.trim_start_matches(|c: char| c.is_alphanumeric() || c == '-');
                    } else if let Some(typed) = after.strip_prefix("^^<") {
                        after = typed.split_once('>').map(|(_, r)| r).ok_or("unterminated datatype")?;
                    }
                    return Ok((value, after));
                }
                c => value.push(c),
            }
        }
        return Err("unterminated literal".into());
    }
    Err(format!("unexpected term start in `{s}`"))
}

fn parse_nt_row(line: &str) -> std::result::Result<Triple, String> {
    let (head, rest) = nt_term(line)?;
    if line.trim_start().starts_with('"') {
        return Err("subject must be an IRI".into());
    }
    let (relation, rest) = nt_term(rest)?;
    let (tail, rest) = nt_term(rest)?;
    if rest.trim() != "." {
        return Err("expected terminating `.`".into());
    }
    if head.is_empty() || relation.is_empty() || tail.is_empty() {
        return Err("empty term".into());
    }
    Ok(Triple::new(head, relation, tail))
}

/// Renders recalled edges as model-ready knowledge strings: outgoing edges
/// as `anchor relation neighbor`, incoming as `neighbor relation anchor`.
pub fn linearize(entries: &[Neighbor], anchor: &str) -> Vec<String> {
    entries
        .iter()
        .map(|n| match n.direction {
            Direction::Out => format!("{anchor} {} {}", n.relation, n.neighbor),
            Direction::In => format!("{} {} {anchor}", n.neighbor, n.relation),
        })
        .collect()
}
