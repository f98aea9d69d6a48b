//! Graph partitioning and mini-batch assembly.

use std::collections::{BTreeMap, HashMap, VecDeque};

use kgalign_tensor::{Csr, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{Direction, KnowledgeGraph, Side};

/// Maps per-graph ids into the joint index space used by the model:
/// A entities (predicates) first, then B.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JointIndex {
    pub entities_a: usize,
    pub entities_b: usize,
    pub predicates_a: usize,
    pub predicates_b: usize,
}

impl JointIndex {
    pub fn new(a: &KnowledgeGraph, b: &KnowledgeGraph) -> Self {
        Self {
            entities_a: a.num_entities(),
            entities_b: b.num_entities(),
            predicates_a: a.num_predicates(),
            predicates_b: b.num_predicates(),
        }
    }

    pub fn entity(&self, side: Side, id: usize) -> usize {
        match side {
            Side::A => id,
            Side::B => self.entities_a + id,
        }
    }

    pub fn predicate(&self, side: Side, id: usize) -> usize {
        match side {
            Side::A => id,
            Side::B => self.predicates_a + id,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities_a + self.entities_b
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates_a + self.predicates_b
    }

    /// Inverse of [`Self::entity`].
    pub fn split_entity(&self, joint: usize) -> (Side, usize) {
        if joint < self.entities_a {
            (Side::A, joint)
        } else {
            (Side::B, joint - self.entities_a)
        }
    }
}

/// Disjoint, non-empty parts covering every entity of one graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub side: Side,
    pub parts: Vec<Vec<usize>>,
    pub edge_cut: usize,
}

impl Partition {
    /// Part index of every entity.
    pub fn assignment(&self, n: usize) -> Vec<usize> {
        let mut a = vec![usize::MAX; n];
        for (p, part) in self.parts.iter().enumerate() {
            for &v in part {
                a[v] = p;
            }
        }
        a
    }
}

/// Undirected simple graph view: sorted, de-duplicated neighbor lists without self loops.
pub fn simple_neighbors(kg: &KnowledgeGraph) -> Vec<Vec<usize>> {
    (0..kg.num_entities()).map(|v| kg.neighbor_set(v)).collect()
}

/// Number of undirected edges whose endpoints lie in different parts.
pub fn edge_cut(neighbors: &[Vec<usize>], assignment: &[usize]) -> usize {
    let mut cut = 0;
    for (v, ns) in neighbors.iter().enumerate() {
        cut += ns.iter().filter(|&&u| u > v && assignment[u] != assignment[v]).count();
    }
    cut
}

/// Largest part size allowed after refinement.
pub fn max_part_size(n: usize, k: usize) -> usize {
    (1.3 * n.div_ceil(k) as f64).floor() as usize
}

/// Smallest part size allowed after refinement.
pub fn min_part_size(n: usize, k: usize) -> usize {
    ((0.7 * (n / k) as f64).ceil() as usize).max(1)
}

pub trait Partitioner {
    fn partition(&self, kg: &KnowledgeGraph, num_parts: usize, rng_seed: u64) -> Result<Partition>;
}

/// Greedy BFS growth from high-degree seeds followed by one refinement pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyPartitioner;

impl Partitioner for GreedyPartitioner {
    fn partition(&self, kg: &KnowledgeGraph, num_parts: usize, rng_seed: u64) -> Result<Partition> {
        let neighbors = simple_neighbors(kg);
        let assignment = greedy_assign(&neighbors, num_parts, rng_seed)?;
        let mut parts = vec![Vec::new(); num_parts];
        for (v, &p) in assignment.iter().enumerate() {
            parts[p].push(v);
        }
        Ok(Partition {
            side: kg.side(),
            parts,
            edge_cut: edge_cut(&neighbors, &assignment),
        })
    }
}

pub fn partition_graph(kg: &KnowledgeGraph, num_parts: usize, rng_seed: u64) -> Result<Partition> {
    GreedyPartitioner.partition(kg, num_parts, rng_seed)
}

/// Core of the greedy partitioner on an adjacency-list graph.
///
/// Runs the grow-and-refine pass under a few growth rules and keeps the
/// assignment with the smallest cut (earliest rule on ties).
pub fn greedy_assign(neighbors: &[Vec<usize>], k: usize, rng_seed: u64) -> Result<Vec<usize>> {
    let n = neighbors.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("num_parts = {k} must lie in 1..={n}")));
    }
    let mut best: Option<(usize, Vec<usize>)> = None;
    let (lo, hi) = (min_part_size(n, k), max_part_size(n, k));
    for rule in [Growth::Fifo, Growth::Packed, Growth::Connected, Growth::Peripheral] {
        let a = grow_and_refine(neighbors, k, rng_seed, rule);
        let mut sizes = vec![0usize; k];
        a.iter().for_each(|&p| sizes[p] += 1);
        if rule != Growth::Fifo && sizes.iter().any(|&s| s < lo || s > hi) {
            continue;
        }
        let cut = edge_cut(neighbors, &a);
        if best.as_ref().is_none_or(|(c, _)| cut < *c) {
            best = Some((cut, a));
        }
    }
    Ok(best.expect("at least one rule").1)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Growth {
    /// Breadth-first from degree-ordered seeds.
    Fifo,
    /// Whole components packed first, the rest breadth-first.
    Packed,
    /// Frontier node with the most links into the part first.
    Connected,
    /// Breadth-first from the lowest-degree seeds.
    Peripheral,
}

fn grow_and_refine(neighbors: &[Vec<usize>], k: usize, rng_seed: u64, rule: Growth) -> Vec<usize> {
    let n = neighbors.len();
    const NONE: usize = usize::MAX;
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (std::cmp::Reverse(neighbors[v].len()), v));

    let cap = n.div_ceil(k);
    let mut assign = vec![NONE; n];
    let mut sizes = vec![0usize; k];
    if rule == Growth::Packed {
        pack_components(neighbors, k, max_part_size(n, k), &mut assign, &mut sizes);
    }

    // Parts with room get seeds, emptiest first.
    let mut open: Vec<usize> = (0..k).filter(|&p| sizes[p] < cap).collect();
    open.sort_by_key(|&p| (sizes[p], p));
    let mut seeds = Vec::with_capacity(open.len());
    let mut blocked: Vec<bool> = assign.iter().map(|&a| a != NONE).collect();
    let seed_order: Vec<usize> = if rule == Growth::Peripheral {
        by_degree.iter().rev().copied().collect()
    } else {
        by_degree.clone()
    };
    for &v in &seed_order {
        if seeds.len() == open.len() {
            break;
        }
        if blocked[v] {
            continue;
        }
        seeds.push(v);
        blocked[v] = true;
        for &u in &neighbors[v] {
            blocked[u] = true;
        }
    }
    for &v in &by_degree {
        if seeds.len() == open.len() {
            break;
        }
        if assign[v] == NONE && !seeds.contains(&v) {
            seeds.push(v);
        }
    }

    let mut frontiers: Vec<VecDeque<usize>> = vec![VecDeque::new(); k];
    let mut assigned = assign.iter().filter(|&&a| a != NONE).count();
    let place = |v: usize, p: usize, assign: &mut Vec<usize>, sizes: &mut Vec<usize>, frontiers: &mut Vec<VecDeque<usize>>| {
        assign[v] = p;
        sizes[p] += 1;
        frontiers[p].extend(neighbors[v].iter().copied().filter(|&u| assign[u] == NONE));
    };
    for (&p, &s) in open.iter().zip(&seeds) {
        place(s, p, &mut assign, &mut sizes, &mut frontiers);
        assigned += 1;
    }
    while assigned < n {
        // Part with the fewest nodes that can still grow from its frontier.
        let mut grown = false;
        let mut order: Vec<usize> = (0..k).filter(|&p| sizes[p] < cap).collect();
        order.sort_by_key(|&p| (sizes[p], p));
        for p in order {
            let pick = if rule == Growth::Connected {
                frontiers[p].retain(|&v| assign[v] == NONE);
                frontiers[p]
                    .iter()
                    .copied()
                    .max_by_key(|&v| (neighbors[v].iter().filter(|&&u| assign[u] == p).count(), std::cmp::Reverse(v)))
            } else {
                std::iter::from_fn(|| frontiers[p].pop_front()).find(|&v| assign[v] == NONE)
            };
            if let Some(v) = pick {
                place(v, p, &mut assign, &mut sizes, &mut frontiers);
                assigned += 1;
                grown = true;
            }
            if grown {
                break;
            }
        }
        if grown {
            continue;
        }
        let root = *by_degree.iter().find(|&&v| assign[v] == NONE).expect("unassigned node");
        let p = (0..k).filter(|&p| sizes[p] < cap).min_by_key(|&p| (sizes[p], p)).expect("capacity left");
        place(root, p, &mut assign, &mut sizes, &mut frontiers);
        assigned += 1;
    }

    let (max_size, min_size) = (max_part_size(n, k), min_part_size(n, k));
    let mut visit: Vec<usize> = (0..n).collect();
    visit.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut conn = vec![0usize; k];
    for &v in &visit {
        let p = assign[v];
        if sizes[p] <= min_size {
            continue;
        }
        conn.iter_mut().for_each(|c| *c = 0);
        for &u in &neighbors[v] {
            conn[assign[u]] += 1;
        }
        let best = (0..k)
            .filter(|&q| q != p && sizes[q] < max_size && conn[q] > conn[p])
            .max_by_key(|&q| (conn[q], std::cmp::Reverse(q)));
        if let Some(q) = best {
            assign[v] = q;
            sizes[p] -= 1;
            sizes[q] += 1;
        }
    }
    swap_pass(neighbors, &mut assign, &visit);
    assign
}

/// Links from `v` into part `p`.
fn links(neighbors: &[Vec<usize>], assign: &[usize], v: usize, p: usize) -> i64 {
    neighbors[v].iter().filter(|&&u| assign[u] == p).count() as i64
}

/// One pass of size-preserving swaps: each node in turn is exchanged with the
/// two-hop node of another part that cuts the most edges, if any swap does.
fn swap_pass(neighbors: &[Vec<usize>], assign: &mut [usize], visit: &[usize]) {
    const MAX_CANDIDATES: usize = 256;
    let mut seen = HashMap::new();
    for &v in visit {
        let p = assign[v];
        let own = links(neighbors, assign, v, p);
        seen.clear();
        'scan: for &w in &neighbors[v] {
            for &u in std::iter::once(&w).chain(&neighbors[w]) {
                if seen.len() >= MAX_CANDIDATES {
                    break 'scan;
                }
                if assign[u] != p {
                    seen.entry(u).or_insert(());
                }
            }
        }
        let mut best: Option<(i64, usize)> = None;
        let mut cands: Vec<usize> = seen.keys().copied().collect();
        cands.sort_unstable();
        for u in cands {
            let q = assign[u];
            let adjacent = neighbors[v].binary_search(&u).is_ok() as i64;
            let gain = links(neighbors, assign, v, q) - own + links(neighbors, assign, u, p) - links(neighbors, assign, u, q)
                - 2 * adjacent;
            if gain > 0 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, u));
            }
        }
        if let Some((_, u)) = best {
            assign[v] = assign[u];
            assign[u] = p;
        }
    }
}

/// Places whole connected components into the emptiest part they fit in
/// (up to `cap` nodes),
/// largest component first. Components too big for any part stay unassigned.
/// Skipped when it would leave a part empty with nothing left to grow it.
fn pack_components(neighbors: &[Vec<usize>], k: usize, cap: usize, assign: &mut [usize], sizes: &mut [usize]) {
    let n = neighbors.len();
    let mut comp = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let c = members.len();
        comp[s] = c;
        let mut queue = VecDeque::from([s]);
        let mut m = Vec::new();
        while let Some(v) = queue.pop_front() {
            m.push(v);
            for &u in &neighbors[v] {
                if comp[u] == usize::MAX {
                    comp[u] = c;
                    queue.push_back(u);
                }
            }
        }
        members.push(m);
    }
    if members.len() < 2 {
        return;
    }
    members.sort_by_key(|m| std::cmp::Reverse(m.len()));
    let mut load = vec![0usize; k];
    let mut target = vec![usize::MAX; members.len()];
    let mut leftover = 0;
    for (c, m) in members.iter().enumerate() {
        let p = (0..k).min_by_key(|&p| (load[p], p)).expect("k >= 1");
        if load[p] + m.len() <= cap {
            load[p] += m.len();
            target[c] = p;
        } else {
            leftover += m.len();
        }
    }
    let empty = load.iter().filter(|&&l| l == 0).count();
    if empty > leftover {
        return;
    }
    for (c, m) in members.iter().enumerate() {
        if target[c] != usize::MAX {
            for &v in m {
                assign[v] = target[c];
            }
            sizes[target[c]] += m.len();
        }
    }
}

/// Structural view of a mini-batch sub-graph in joint index space.
///
/// Local node order is the core (ascending) followed by the halo (ascending).
/// Several sub-graphs can be stacked with [`SubgraphTensors::stack`]; each
/// stays its own attention segment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubgraphTensors {
    /// Joint entity id of each local node.
    pub nodes: Vec<usize>,
    /// Number of core nodes at the start of each segment.
    pub core_len: Vec<usize>,
    /// Node count of each segment.
    pub segments: Vec<usize>,
    /// Joint predicate ids occurring on batch edges; index = local predicate.
    pub predicates: Vec<usize>,
    /// Symmetric adjacency as local pairs `(u, v)` with `u != v`, each direction listed.
    pub adjacency: Vec<(usize, usize)>,
    /// Relationship triples inside the batch: `(head, local predicate, tail)`, local node ids.
    pub edges: Vec<(usize, usize, usize)>,
}

impl SubgraphTensors {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Local indices of core nodes.
    pub fn core_locals(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut start = 0;
        for (&len, &core) in self.segments.iter().zip(&self.core_len) {
            out.extend(start..start + core);
            start += len;
        }
        out
    }

    pub fn stack(parts: &[SubgraphTensors]) -> SubgraphTensors {
        let mut out = SubgraphTensors::default();
        let mut pred_local: HashMap<usize, usize> = HashMap::new();
        for part in parts {
            let off = out.nodes.len();
            out.nodes.extend(&part.nodes);
            out.core_len.extend(&part.core_len);
            out.segments.extend(&part.segments);
            out.adjacency.extend(part.adjacency.iter().map(|&(u, v)| (u + off, v + off)));
            for &(h, p, t) in &part.edges {
                let joint = part.predicates[p];
                let next = pred_local.len();
                let lp = *pred_local.entry(joint).or_insert_with(|| {
                    out.predicates.push(joint);
                    next
                });
                out.edges.push((h + off, lp, t + off));
            }
        }
        out
    }

    /// Symmetric 0/1 adjacency with zero diagonal.
    pub fn adjacency_matrix<S: Scalar>(&self) -> Csr<S> {
        let n = self.len();
        Csr::from_triplets(n, n, self.adjacency.iter().map(|&(u, v)| (u, v, S::one())).collect())
    }

    /// `[n x p]`: row `u` averages the predicates of the edges incident to `u`.
    pub fn incidence_mean<S: Scalar>(&self) -> Csr<S> {
        let n = self.len();
        let mut deg = vec![0usize; n];
        for &(h, _, t) in &self.edges {
            deg[h] += 1;
            deg[t] += 1;
        }
        let mut trip = Vec::with_capacity(2 * self.edges.len());
        for &(h, p, t) in &self.edges {
            trip.push((h, p, S::one() / S::of(deg[h] as f64)));
            trip.push((t, p, S::one() / S::of(deg[t] as f64)));
        }
        Csr::from_triplets(n, self.predicates.len(), trip)
    }

    /// `[p x n]`: row `p` averages over the distinct nodes touching a `p` edge.
    pub fn predicate_node_mean<S: Scalar>(&self) -> Csr<S> {
        let mut touch: BTreeMap<(usize, usize), ()> = BTreeMap::new();
        for &(h, p, t) in &self.edges {
            touch.insert((p, h), ());
            touch.insert((p, t), ());
        }
        let mut count = vec![0usize; self.predicates.len()];
        for &(p, _) in touch.keys() {
            count[p] += 1;
        }
        let trip = touch
            .keys()
            .map(|&(p, u)| (p, u, S::one() / S::of(count[p] as f64)))
            .collect();
        Csr::from_triplets(self.predicates.len(), self.len(), trip)
    }
}

/// Batch for one graph: core part, its 1-hop halo, and sub-graph view.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub side: Side,
    pub core: Vec<usize>,
    pub halo: Vec<usize>,
    pub sub: SubgraphTensors,
}

pub fn assemble_batch(part: &[usize], kg: &KnowledgeGraph, joint: &JointIndex) -> MiniBatch {
    let side = kg.side();
    let mut core = part.to_vec();
    core.sort_unstable();
    core.dedup();
    let mut local = HashMap::with_capacity(core.len() * 2);
    for (i, &v) in core.iter().enumerate() {
        local.insert(v, i);
    }
    let mut halo: Vec<usize> = core
        .iter()
        .flat_map(|&v| kg.adjacency(v).iter().map(|n| n.node))
        .filter(|u| !local.contains_key(u))
        .collect();
    halo.sort_unstable();
    halo.dedup();
    for (i, &v) in halo.iter().enumerate() {
        local.insert(v, core.len() + i);
    }
    let nodes: Vec<usize> = core.iter().chain(&halo).map(|&v| joint.entity(side, v)).collect();

    let mut pred_local: HashMap<usize, usize> = HashMap::new();
    let mut predicates = Vec::new();
    let mut edges = Vec::new();
    let mut adjacency = Vec::new();
    for &v in core.iter().chain(&halo) {
        for nb in kg.adjacency(v) {
            if nb.direction != Direction::Out {
                continue;
            }
            let Some(&t) = local.get(&nb.node) else { continue };
            let h = local[&v];
            let lp = *pred_local.entry(nb.predicate).or_insert_with(|| {
                predicates.push(joint.predicate(side, nb.predicate));
                predicates.len() - 1
            });
            edges.push((h, lp, t));
            if h != t {
                adjacency.push((h, t));
                adjacency.push((t, h));
            }
        }
    }
    adjacency.sort_unstable();
    adjacency.dedup();
    let n = nodes.len();
    MiniBatch {
        side,
        sub: SubgraphTensors {
            nodes,
            core_len: vec![core.len()],
            segments: vec![n],
            predicates,
            adjacency,
            edges,
        },
        core,
        halo,
    }
}

/// Pairs parts of A with parts of B, greedily maximizing the number of
/// training pairs whose two ends fall in the paired parts.
pub fn pair_parts(pa: &Partition, pb: &Partition, train: &[(usize, usize)], n_a: usize, n_b: usize) -> Vec<(usize, usize)> {
    let (asg_a, asg_b) = (pa.assignment(n_a), pb.assignment(n_b));
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for &(a, b) in train {
        *counts.entry((asg_a[a], asg_b[b])).or_default() += 1;
    }
    let mut cells: Vec<((usize, usize), usize)> = counts.into_iter().collect();
    cells.sort_by_key(|&((i, j), c)| (std::cmp::Reverse(c), i, j));
    let mut used_a = vec![false; pa.parts.len()];
    let mut used_b = vec![false; pb.parts.len()];
    let mut pairs = Vec::new();
    for ((i, j), _) in cells {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    let rest_a: Vec<usize> = (0..pa.parts.len()).filter(|&i| !used_a[i]).collect();
    let rest_b: Vec<usize> = (0..pb.parts.len()).filter(|&j| !used_b[j]).collect();
    pairs.extend(rest_a.iter().copied().zip(rest_b.iter().copied()));
    pairs.sort_unstable();
    pairs
}
