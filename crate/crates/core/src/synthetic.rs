//! Synthetic knowledge-graph pairs with a known full alignment.
//!
//! Graph A is random; graph B is a noisy copy: literal characters are
//! replaced with probability `char_noise`, relationship triples are dropped
//! with probability `rel_dropout`, and every predicate gets [`B_SUFFIX`].

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::kg::{KnowledgeGraph, Side};
use crate::seed::pairs_to_tsv;

pub const B_SUFFIX: &str = "_b";

pub const ATTRIBUTE_KEYS: [&str; 8] = [
    "name",
    "birth_date",
    "alias",
    "code",
    "description",
    "birth_place",
    "occupation",
    "population",
];

pub const RELATIONS: [&str; 6] = ["spouse", "parent", "works_with", "located_in", "member_of", "knows"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub attr_per_entity: usize,
    pub rel_density: f64,
    pub char_noise: f64,
    pub rel_dropout: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_entities: 300,
            attr_per_entity: 4,
            rel_density: 0.01,
            char_noise: 0.1,
            rel_dropout: 0.2,
            rng_seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub a: KnowledgeGraph,
    pub b: KnowledgeGraph,
    /// `(id in A, id in B)` for every entity.
    pub gold: Vec<(usize, usize)>,
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ra", "ven", "tor", "el", "sa", "bri", "dun", "fa", "gor", "hal", "is", "jor", "ke", "lin", "mor",
    "nes", "or", "pel", "qui", "sten", "ua",
];

fn word(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    let mut w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
    if let Some(first) = w.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    w
}

fn literal(key: &str, rng: &mut ChaCha8Rng, places: &[String], jobs: &[String]) -> String {
    match key {
        "name" | "alias" => format!("{} {}", word(rng, 2, 3), word(rng, 2, 4)),
        "birth_date" => format!(
            "{}-{:02}-{:02}",
            rng.random_range(1850..2010),
            rng.random_range(1..=12),
            rng.random_range(1..=28)
        ),
        "code" => (0..7)
            .map(|_| {
                let c = rng.random_range(0..36u8);
                if c < 10 {
                    (b'0' + c) as char
                } else {
                    (b'A' + c - 10) as char
                }
            })
            .collect(),
        "description" => {
            let words: Vec<String> = (0..3).map(|_| word(rng, 1, 3).to_lowercase()).collect();
            words.join(" ")
        }
        "birth_place" => places.choose(rng).expect("non-empty").clone(),
        "occupation" => jobs.choose(rng).expect("non-empty").clone(),
        "population" => rng.random_range(1_000..10_000_000u32).to_string(),
        _ => unreachable!("unknown key {key}"),
    }
}

fn add_noise(value: &str, p: f64, rng: &mut ChaCha8Rng) -> String {
    value
        .chars()
        .map(|c| {
            if p > 0.0 && rng.random_bool(p) {
                loop {
                    let r = (b'a' + rng.random_range(0..26u8)) as char;
                    if r != c {
                        break r;
                    }
                }
            } else {
                c
            }
        })
        .collect()
}

fn check_ratio(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")))
    }
}

pub fn entity_iri(side: Side, i: usize) -> String {
    match side {
        Side::A => format!("a:e{i}"),
        Side::B => format!("b:e{i}"),
    }
}

/// Builds the pair. A pure function of `cfg`.
pub fn gen_synthetic_pair(cfg: &SyntheticConfig) -> Result<SyntheticPair> {
    if cfg.n_entities < 2 {
        return Err(Error::Config(format!("n_entities = {} (need at least 2)", cfg.n_entities)));
    }
    if cfg.attr_per_entity == 0 || cfg.attr_per_entity > ATTRIBUTE_KEYS.len() {
        return Err(Error::Config(format!(
            "attr_per_entity = {} (need 1..={})",
            cfg.attr_per_entity,
            ATTRIBUTE_KEYS.len()
        )));
    }
    check_ratio("rel_density", cfg.rel_density)?;
    check_ratio("char_noise", cfg.char_noise)?;
    check_ratio("rel_dropout", cfg.rel_dropout)?;

    let n = cfg.n_entities;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let places: Vec<String> = (0..40).map(|_| word(&mut rng, 2, 3)).collect();
    let jobs: Vec<String> = (0..12).map(|_| word(&mut rng, 2, 3).to_lowercase()).collect();

    let mut attrs: Vec<(usize, &str, String)> = Vec::with_capacity(n * cfg.attr_per_entity);
    for e in 0..n {
        let mut keys: Vec<&str> = ATTRIBUTE_KEYS[1..].to_vec();
        keys.shuffle(&mut rng);
        keys.truncate(cfg.attr_per_entity - 1);
        keys.insert(0, ATTRIBUTE_KEYS[0]);
        for k in keys {
            let v = literal(k, &mut rng, &places, &jobs);
            attrs.push((e, k, v));
        }
    }

    let max_edges = n * (n - 1) / 2;
    let target = ((cfg.rel_density * (n * n) as f64 / 2.0).round() as usize).min(max_edges);
    let mut seen = HashSet::new();
    let mut rels: Vec<(usize, &str, usize)> = Vec::with_capacity(target);
    while rels.len() < target {
        let h = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        if h == t || !seen.insert((h.min(t), h.max(t))) {
            continue;
        }
        rels.push((h, *RELATIONS.choose(&mut rng).expect("non-empty"), t));
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    noise_rng.set_stream(1);
    let mut a = KnowledgeGraph::new(Side::A);
    let mut b = KnowledgeGraph::new(Side::B);
    for (e, k, v) in &attrs {
        a.add_attr(&entity_iri(Side::A, *e), k, v);
        let noisy = add_noise(v, cfg.char_noise, &mut noise_rng);
        b.add_attr(&entity_iri(Side::B, *e), &format!("{k}{B_SUFFIX}"), &noisy);
    }
    for &(h, p, t) in &rels {
        a.add_rel(&entity_iri(Side::A, h), p, &entity_iri(Side::A, t));
        let drop = cfg.rel_dropout > 0.0 && noise_rng.random_bool(cfg.rel_dropout);
        if !drop {
            b.add_rel(&entity_iri(Side::B, h), &format!("{p}{B_SUFFIX}"), &entity_iri(Side::B, t));
        }
    }
    let gold = (0..n).map(|i| (i, i)).collect();
    Ok(SyntheticPair { a, b, gold })
}

impl SyntheticPair {
    /// Writes `a.tsv`, `b.tsv` and `gold.tsv` into `dir` (created if missing).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.a.write_tsv(&dir.join("a.tsv"))?;
        self.b.write_tsv(&dir.join("b.tsv"))?;
        let gold = dir.join("gold.tsv");
        std::fs::write(&gold, pairs_to_tsv(&self.gold, &self.a, &self.b)).map_err(io_err(&gold))
    }
}
