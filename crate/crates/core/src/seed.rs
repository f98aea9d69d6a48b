use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, Error, Result};
use crate::kg::KnowledgeGraph;

/// Known cross-graph pairs `(entity in A, entity in B)` with a train/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedAlignment {
    pairs: Vec<(usize, usize)>,
    train: Vec<bool>,
}

impl SeedAlignment {
    /// Shuffles with `rng_seed` and flags `round(train_fraction * n)` pairs as train.
    pub fn split(pairs: Vec<(usize, usize)>, train_fraction: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
        let n_train = (train_fraction * pairs.len() as f64).round() as usize;
        let mut train = vec![false; pairs.len()];
        for &i in &order[..n_train] {
            train[i] = true;
        }
        Ok(Self { pairs, train })
    }

    pub fn parse_str(text: &str, a: &KnowledgeGraph, b: &KnowledgeGraph, train_fraction: f64, rng_seed: u64) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut used_a = HashSet::new();
        let mut used_b = HashSet::new();
        for (i, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            }
            let resolve = |kg: &KnowledgeGraph, name: &str| {
                kg.entities().get(name).ok_or_else(|| Error::UnknownEntity {
                    line: i + 1,
                    entity: name.to_string(),
                })
            };
            let (ea, eb) = (resolve(a, fields[0])?, resolve(b, fields[1])?);
            for (set, id, name) in [(&mut used_a, ea, fields[0]), (&mut used_b, eb, fields[1])] {
                if !set.insert(id) {
                    return Err(Error::DuplicateEntity {
                        line: i + 1,
                        entity: name.to_string(),
                    });
                }
            }
            pairs.push((ea, eb));
        }
        Self::split(pairs, train_fraction, rng_seed)
    }

    pub fn load(path: &Path, a: &KnowledgeGraph, b: &KnowledgeGraph, train_fraction: f64, rng_seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_str(&text, a, b, train_fraction, rng_seed)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_train(&self, i: usize) -> bool {
        self.train[i]
    }

    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        self.select(true)
    }

    pub fn test_pairs(&self) -> Vec<(usize, usize)> {
        self.select(false)
    }

    fn select(&self, train: bool) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .zip(&self.train)
            .filter(|(_, &t)| t == train)
            .map(|(&p, _)| p)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Writes pairs as `entityA \t entityB` lines.
pub fn pairs_to_tsv(pairs: &[(usize, usize)], a: &KnowledgeGraph, b: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for &(x, y) in pairs {
        out.push_str(a.entities().name(x));
        out.push('\t');
        out.push_str(b.entities().name(y));
        out.push('\n');
    }
    out
}
