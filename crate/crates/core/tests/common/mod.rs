//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use kgalign_core::batching::{max_part_size, min_part_size};
use kgalign_core::{KnowledgeGraph, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random undirected graph on `n` nodes named `v0..`, one relation per edge.
pub fn random_graph(n: usize, p: f64, seed: u64) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kg = KnowledgeGraph::new(Side::A);
    for v in 0..n {
        kg.entity(&format!("v{v}"));
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                kg.add_rel(&format!("v{u}"), "r", &format!("v{v}"));
            }
        }
    }
    kg
}

pub fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::new(Side::A);
    for v in 0..n {
        kg.entity(&format!("v{v}"));
    }
    for &(u, v) in edges {
        kg.add_rel(&format!("v{u}"), "r", &format!("v{v}"));
    }
    kg
}

/// Minimum edge cut over every assignment into `k` non-empty parts whose
/// sizes respect the partitioner's balance window.
pub fn optimal_balanced_cut(neighbors: &[Vec<usize>], k: usize) -> usize {
    let n = neighbors.len();
    let (lo, hi) = (min_part_size(n, k), max_part_size(n, k));
    let mut best = usize::MAX;
    let mut assign = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut sizes = vec![0usize; k];
        for a in assign.iter_mut() {
            *a = c % k;
            c /= k;
            sizes[*a] += 1;
        }
        if sizes.iter().any(|&s| s < lo || s > hi) {
            continue;
        }
        best = best.min(kgalign_core::batching::edge_cut(neighbors, &assign));
    }
    best
}

/// Halo by scanning every (core, other) pair for a relation triple.
pub fn brute_halo(kg: &KnowledgeGraph, core: &[usize]) -> Vec<usize> {
    (0..kg.num_entities())
        .filter(|v| !core.contains(v))
        .filter(|&v| {
            kg.rel_triples()
                .iter()
                .any(|t| (t.head == v && core.contains(&t.tail)) || (t.tail == v && core.contains(&t.head)))
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Candidate indices in descending cosine order, ties by index, by pairwise
/// comparison counting.
pub fn brute_ranking(q: &[f64], candidates: &[Vec<f64>]) -> Vec<usize> {
    let s: Vec<f64> = candidates.iter().map(|c| cosine(q, c)).collect();
    let mut rank_of = vec![0usize; s.len()];
    for i in 0..s.len() {
        rank_of[i] = (0..s.len()).filter(|&j| s[j] > s[i] || (s[j] == s[i] && j < i)).count();
    }
    let mut order = vec![0usize; s.len()];
    for (i, &r) in rank_of.iter().enumerate() {
        order[r] = i;
    }
    order
}

/// Margin loss written as the textbook double loop over positives and their negatives.
pub fn margin_double_loop(pos: &[(Vec<f64>, Vec<f64>)], neg: &[(Vec<f64>, Vec<f64>)], margin: f64, per_pos: usize) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for (i, (a, b)) in pos.iter().enumerate() {
        for (na, nb) in &neg[i * per_pos..(i + 1) * per_pos] {
            total += (dist(a, b) + margin - dist(na, nb)).max(0.0);
        }
    }
    total
}

pub mod fixtures;
pub mod reference;

/// Synthetic pair with a 30% train split.
pub fn synthetic_setup(n: usize, noise: f64, dropout: f64, seed: u64) -> (kgalign_core::GraphPair, kgalign_core::SeedAlignment) {
    let p = kgalign_core::gen_synthetic_pair(&kgalign_core::SyntheticConfig {
        n_entities: n,
        char_noise: noise,
        rel_dropout: dropout,
        rng_seed: seed,
        ..Default::default()
    })
    .unwrap();
    let seeds = kgalign_core::SeedAlignment::split(p.gold.clone(), 0.3, seed).unwrap();
    (kgalign_core::GraphPair::new(p.a, p.b), seeds)
}

/// Small model for fast end-to-end tests.
pub fn small_config(epochs: usize) -> kgalign_core::TrainConfig {
    kgalign_core::TrainConfig {
        model: kgalign_core::ModelConfig {
            dim: 16,
            char_dim: 8,
            heads: 2,
            layers: 3,
            max_slots: 32,
            char_buckets: 64,
        },
        epochs,
        lr: 5e-3,
        ..Default::default()
    }
}
