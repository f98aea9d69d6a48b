//! Knowledge graphs: interned entities and predicates, attribute and
//! relationship triples, adjacency, and the TSV triple format.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

/// Literals are cut to this many code points when ingested.
pub const MAX_LITERAL_CHARS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// String table assigning dense ids in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// SHA-256 over the names in id order, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update((n.len() as u64).to_le_bytes());
            h.update(n.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Out,
    In,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Neighbor {
    pub node: usize,
    pub predicate: usize,
    pub direction: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelTriple {
    pub head: usize,
    pub predicate: usize,
    pub tail: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttrTriple {
    pub head: usize,
    pub predicate: usize,
    pub value: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Rel,
    Attr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeGraph {
    side: Side,
    entities: Interner,
    predicates: Interner,
    rel: Vec<RelTriple>,
    attr: Vec<AttrTriple>,
    order: Vec<(Kind, usize)>,
    adjacency: Vec<Vec<Neighbor>>,
    attrs_of: Vec<Vec<usize>>,
    seen_rel: HashSet<RelTriple>,
    seen_attr: HashSet<AttrTriple>,
}

pub fn truncate_literal(value: &str) -> &str {
    match value.char_indices().nth(MAX_LITERAL_CHARS) {
        Some((idx, _)) => &value[..idx],
        None => value,
    }
}

fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

impl KnowledgeGraph {
    pub fn new(side: Side) -> Self {
        Self {
            side,
            entities: Interner::default(),
            predicates: Interner::default(),
            rel: Vec::new(),
            attr: Vec::new(),
            order: Vec::new(),
            adjacency: Vec::new(),
            attrs_of: Vec::new(),
            seen_rel: HashSet::new(),
            seen_attr: HashSet::new(),
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn predicates(&self) -> &Interner {
        &self.predicates
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn rel_triples(&self) -> &[RelTriple] {
        &self.rel
    }

    pub fn attr_triples(&self) -> &[AttrTriple] {
        &self.attr
    }

    pub fn adjacency(&self, entity: usize) -> &[Neighbor] {
        &self.adjacency[entity]
    }

    pub fn degree(&self, entity: usize) -> usize {
        self.adjacency[entity].len()
    }

    /// Indices into [`Self::attr_triples`] whose head is `entity`, in insertion order.
    pub fn attributes_of(&self, entity: usize) -> &[usize] {
        &self.attrs_of[entity]
    }

    pub fn entity(&mut self, name: &str) -> usize {
        let id = self.entities.intern(name);
        if id == self.adjacency.len() {
            self.adjacency.push(Vec::new());
            self.attrs_of.push(Vec::new());
        }
        id
    }

    pub fn predicate(&mut self, name: &str) -> usize {
        self.predicates.intern(name)
    }

    /// Adds a relationship triple by name; returns false if it was already present.
    pub fn add_rel(&mut self, head: &str, predicate: &str, tail: &str) -> bool {
        let head = self.entity(head);
        let predicate = self.predicate(predicate);
        let tail = self.entity(tail);
        self.add_rel_ids(RelTriple { head, predicate, tail })
    }

    fn add_rel_ids(&mut self, t: RelTriple) -> bool {
        if !self.seen_rel.insert(t) {
            return false;
        }
        self.adjacency[t.head].push(Neighbor {
            node: t.tail,
            predicate: t.predicate,
            direction: Direction::Out,
        });
        self.adjacency[t.tail].push(Neighbor {
            node: t.head,
            predicate: t.predicate,
            direction: Direction::In,
        });
        self.order.push((Kind::Rel, self.rel.len()));
        self.rel.push(t);
        true
    }

    /// Adds an attribute triple by name; the literal is truncated first.
    pub fn add_attr(&mut self, head: &str, predicate: &str, value: &str) -> bool {
        let head = self.entity(head);
        let predicate = self.predicate(predicate);
        self.add_attr_ids(AttrTriple {
            head,
            predicate,
            value: truncate_literal(value).to_string(),
        })
    }

    fn add_attr_ids(&mut self, t: AttrTriple) -> bool {
        if self.seen_attr.contains(&t) {
            return false;
        }
        self.seen_attr.insert(t.clone());
        self.attrs_of[t.head].push(self.attr.len());
        self.order.push((Kind::Attr, self.attr.len()));
        self.attr.push(t);
        true
    }

    pub fn parse_str(text: &str, side: Side) -> Result<Self> {
        let mut kg = Self::new(side);
        for (i, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let (h, p, o) = (unescape(fields[0]), unescape(fields[1]), unescape(fields[2]));
            match fields[3] {
                "R" => {
                    kg.add_rel(&h, &p, &o);
                }
                "A" => {
                    kg.add_attr(&h, &p, &o);
                }
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("triple kind must be R or A, found `{other}`"),
                    })
                }
            }
        }
        Ok(kg)
    }

    pub fn parse_file(path: &Path, side: Side) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_str(&text, side)
    }

    /// Serializes in insertion order; parsing the output reproduces this graph.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for &(kind, i) in &self.order {
            match kind {
                Kind::Rel => {
                    let t = self.rel[i];
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\tR",
                        escape(self.entities.name(t.head)),
                        escape(self.predicates.name(t.predicate)),
                        escape(self.entities.name(t.tail))
                    );
                }
                Kind::Attr => {
                    let t = &self.attr[i];
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\tA",
                        escape(self.entities.name(t.head)),
                        escape(self.predicates.name(t.predicate)),
                        escape(&t.value)
                    );
                }
            }
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    /// Copy keeping only the selected triples. Intern tables are unchanged,
    /// so ids stay valid; entities may end up with no triples.
    pub fn filtered(&self, keep_attr: impl Fn(usize, &AttrTriple) -> bool, keep_rel: impl Fn(usize, &RelTriple) -> bool) -> Self {
        let mut kg = Self::new(self.side);
        kg.entities = self.entities.clone();
        kg.predicates = self.predicates.clone();
        kg.adjacency = vec![Vec::new(); self.entities.len()];
        kg.attrs_of = vec![Vec::new(); self.entities.len()];
        for &(kind, i) in &self.order {
            match kind {
                Kind::Rel if keep_rel(i, &self.rel[i]) => {
                    kg.add_rel_ids(self.rel[i]);
                }
                Kind::Attr if keep_attr(i, &self.attr[i]) => {
                    kg.add_attr_ids(self.attr[i].clone());
                }
                _ => {}
            }
        }
        kg
    }

    /// Distinct 1-hop neighbors of `entity`, ignoring direction and predicate.
    pub fn neighbor_set(&self, entity: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.adjacency[entity]
            .iter()
            .map(|n| n.node)
            .filter(|&n| n != entity)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_round_trip() {
        for s in ["plain", "tab\there", "line\nbreak", "back\\slash", "\\t literal"] {
            assert_eq!(unescape(&escape(s)), s);
        }
    }

    #[test]
    fn truncation_counts_code_points() {
        let s: String = "é".repeat(100);
        assert_eq!(truncate_literal(&s).chars().count(), 64);
        assert_eq!(truncate_literal("short"), "short");
    }
}
