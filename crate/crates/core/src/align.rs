//! Inference: entity embeddings, ranking, Hits@k, explanations and the
//! feature-removal analysis.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::str::FromStr;

use kgalign_tensor::{Graph, ParameterStore, Scalar, Tensor};
use serde::ser::SerializeTuple;
use serde::{Deserialize, Serialize, Serializer};

use crate::batching::{assemble_batch, JointIndex, Partition};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Side};
use crate::model::attr::{aggregate_attributes, entity_slots, AttributeSlotBatch};
use crate::model::store::HistoricalEmbeddingStore;
use crate::model::transge::encode_subgraph;
use crate::model::GraphPair;
use crate::seed::SeedAlignment;
use crate::synthetic::B_SUFFIX;
use crate::training::{encode_attributes, partitions, TrainConfig};

pub const DEFAULT_TOP_N: usize = 5;
/// Store refresh passes after the data changed (one per layer of propagation).
pub const REFRESH_SWEEPS: usize = 3;
/// Entities per attribute chunk when capturing importance.
const EXPLAIN_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    L2,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "l2" => Ok(Self::L2),
            other => Err(format!("unknown metric `{other}` (expected cosine or l2)")),
        }
    }
}

/// `h = [h_att ; h_nei]` for every entity, rows in joint id order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub joint: JointIndex,
    pub dim_att: usize,
    pub rows: Tensor<f64>,
}

impl EmbeddingTable {
    pub fn row(&self, side: Side, id: usize) -> &[f64] {
        self.rows.row(self.joint.entity(side, id))
    }

    /// Rows of per-graph ids `ids` of `side`.
    pub fn side_rows(&self, side: Side, ids: &[usize]) -> Tensor<f64> {
        let joint: Vec<usize> = ids.iter().map(|&i| self.joint.entity(side, i)).collect();
        self.rows.gather_rows(&joint).expect("ids in range")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentPrediction {
    pub query: usize,
    /// Top candidates as `(id, score)`, best first.
    pub candidates: Vec<(usize, f64)>,
    /// 1-based rank of the gold candidate among all candidates.
    pub gold_rank: Option<usize>,
}

fn normalized_rows(t: &Tensor<f64>) -> Tensor<f64> {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Similarity of every query row to every candidate row: cosine (0 for a
/// zero-norm row) or negated L2 distance.
pub fn score_matrix(queries: &Tensor<f64>, candidates: &Tensor<f64>, metric: Metric) -> Result<Tensor<f64>> {
    match metric {
        Metric::Cosine => Ok(normalized_rows(queries).matmul(&normalized_rows(candidates).transpose())?),
        Metric::L2 => {
            let mut out = Tensor::zeros(&[queries.rows(), candidates.rows()]);
            for i in 0..queries.rows() {
                for j in 0..candidates.rows() {
                    let d: f64 = queries.row(i).iter().zip(candidates.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    out.set(i, j, -d.sqrt());
                }
            }
            Ok(out)
        }
    }
}

/// Ranks `candidates` for every query; ties go to the smaller id.
pub fn predict(
    query_ids: &[usize],
    queries: &Tensor<f64>,
    candidate_ids: &[usize],
    candidates: &Tensor<f64>,
    metric: Metric,
    k: usize,
    gold: Option<&[usize]>,
) -> Result<Vec<AlignmentPrediction>> {
    if candidate_ids.is_empty() {
        return Err(Error::Config("empty candidate set".into()));
    }
    let scores = score_matrix(queries, candidates, metric)?;
    let mut out = Vec::with_capacity(query_ids.len());
    for (qi, &q) in query_ids.iter().enumerate() {
        let row = scores.row(qi);
        let mut order: Vec<usize> = (0..candidate_ids.len()).collect();
        order.sort_by(|&x, &y| {
            row[y]
                .partial_cmp(&row[x])
                .unwrap_or(Ordering::Equal)
                .then(candidate_ids[x].cmp(&candidate_ids[y]))
        });
        let gold_rank = gold.map(|g| {
            order
                .iter()
                .position(|&c| candidate_ids[c] == g[qi])
                .map_or(usize::MAX, |p| p + 1)
        });
        out.push(AlignmentPrediction {
            query: q,
            candidates: order.iter().take(k).map(|&c| (candidate_ids[c], row[c])).collect(),
            gold_rank,
        });
    }
    Ok(out)
}

/// Percentage of ranks `<= k`.
pub fn hits_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Two-decimal rendering used in reports, e.g. `88.35`.
pub fn format_pct(v: f64) -> String {
    format!("{v:.2}")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub queries: usize,
    pub candidates: usize,
    /// `(k, Hits@k)` in percent.
    pub hits: Vec<(usize, f64)>,
    pub mrr: f64,
    pub predictions: Vec<AlignmentPrediction>,
}

impl EvalReport {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|&(_, v)| v)
    }

    pub fn summary(&self) -> String {
        self.hits
            .iter()
            .map(|&(k, v)| format!("Hits@{k}: {}\n", format_pct(v)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for &(k, v) in &self.hits {
            s.push_str(&format!("hits@{k},{}\n", format_pct(v)));
        }
        s.push_str(&format!("mrr,{:.4}\nqueries,{}\ncandidates,{}\n", self.mrr, self.queries, self.candidates));
        s
    }
}

/// B entities of the test split, ascending.
pub fn test_candidates(seeds: &SeedAlignment) -> Vec<usize> {
    let mut c: Vec<usize> = seeds.test_pairs().iter().map(|p| p.1).collect();
    c.sort_unstable();
    c
}

/// Ranks the B side of `pairs` against `candidates` and reports Hits@k.
pub fn evaluate(
    table: &EmbeddingTable,
    pairs: &[(usize, usize)],
    candidates: &[usize],
    metric: Metric,
    ks: &[usize],
    keep_top: usize,
) -> Result<EvalReport> {
    let q_ids: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let gold: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let predictions = predict(
        &q_ids,
        &table.side_rows(Side::A, &q_ids),
        candidates,
        &table.side_rows(Side::B, candidates),
        metric,
        keep_top,
        Some(&gold),
    )?;
    let ranks: Vec<usize> = predictions.iter().map(|p| p.gold_rank.unwrap_or(usize::MAX)).collect();
    let mrr = if ranks.is_empty() {
        0.0
    } else {
        ranks.iter().map(|&r| if r == usize::MAX { 0.0 } else { 1.0 / r as f64 }).sum::<f64>() / ranks.len() as f64
    };
    Ok(EvalReport {
        queries: pairs.len(),
        candidates: candidates.len(),
        hits: ks.iter().map(|&k| (k, hits_at_k(&ranks, k))).collect(),
        mrr,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeItem {
    pub key: String,
    pub value: String,
    pub weight: f64,
    /// Index of the attribute triple in its graph.
    pub triple: usize,
}

impl Serialize for AttributeItem {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        let mut t = s.serialize_tuple(3)?;
        t.serialize_element(&self.key)?;
        t.serialize_element(&self.value)?;
        t.serialize_element(&self.weight)?;
        t.end()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborItem {
    pub relation: String,
    /// Display label: the neighbor's name attribute, else its IRI.
    pub label: String,
    pub neighbor: usize,
    pub iri: String,
    pub weight: f64,
}

impl Serialize for NeighborItem {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        let mut t = s.serialize_tuple(3)?;
        t.serialize_element(&self.relation)?;
        t.serialize_element(&self.label)?;
        t.serialize_element(&self.weight)?;
        t.end()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SideExplanation {
    pub entity: String,
    pub attributes: Vec<AttributeItem>,
    pub neighbors: Vec<NeighborItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Explanation {
    pub pair_id: usize,
    pub score: f64,
    pub a: SideExplanation,
    pub b: SideExplanation,
}

/// Stable descending sort by weight, then truncation to `n`.
pub fn top_n<T>(mut items: Vec<T>, n: usize, weight: impl Fn(&T) -> f64) -> Vec<T> {
    items.sort_by(|x, y| weight(y).partial_cmp(&weight(x)).unwrap_or(Ordering::Equal));
    items.truncate(n);
    items
}

fn is_name_key(key: &str) -> bool {
    let tail = key.rsplit(['/', '#', ':']).next().unwrap_or(key);
    let tail = tail.strip_suffix(B_SUFFIX).unwrap_or(tail);
    matches!(tail, "name" | "label")
}

/// The entity's name attribute if it has one, else its IRI.
pub fn entity_label(kg: &KnowledgeGraph, id: usize) -> String {
    kg.attributes_of(id)
        .iter()
        .map(|&t| &kg.attr_triples()[t])
        .find(|t| is_name_key(kg.predicates().name(t.predicate)))
        .map_or_else(|| kg.entities().name(id).to_string(), |t| t.value.clone())
}

/// Trained parameters and store with the partitions used during training.
pub struct AlignmentModel<S: Scalar> {
    pub config: TrainConfig,
    pub params: ParameterStore<S>,
    pub store: HistoricalEmbeddingStore<S>,
    parts: (Partition, Partition),
}

impl<S: Scalar> AlignmentModel<S> {
    pub fn from_checkpoint(ck: &Checkpoint, pair: &GraphPair) -> Result<Self> {
        ck.verify(pair)?;
        Self::new(ck.config.clone(), ck.param_store()?, ck.store(), pair)
    }

    pub fn new(config: TrainConfig, params: ParameterStore<S>, store: HistoricalEmbeddingStore<S>, pair: &GraphPair) -> Result<Self> {
        let joint = pair.joint();
        if store.len() != joint.num_entities() || store.dim() != config.model.dim {
            return Err(Error::Validation(format!(
                "store is {}x{}, data needs {}x{}",
                store.len(),
                store.dim(),
                joint.num_entities(),
                config.model.dim
            )));
        }
        let parts = partitions(&config, pair)?;
        Ok(Self {
            config,
            params,
            store,
            parts,
        })
    }

    pub fn partition(&self, side: Side) -> &Partition {
        match side {
            Side::A => &self.parts.0,
            Side::B => &self.parts.1,
        }
    }

    pub fn embed_all(&self, pair: &GraphPair) -> Result<EmbeddingTable> {
        Ok(self.infer(pair, None)?.0)
    }

    /// Embeddings plus a full explanation of every entity, indexed by joint id.
    pub fn explain_all(&self, pair: &GraphPair, top_n: usize) -> Result<(EmbeddingTable, Vec<SideExplanation>)> {
        let (t, e) = self.infer(pair, Some(top_n))?;
        Ok((t, e.expect("requested")))
    }

    fn infer(&self, pair: &GraphPair, explain: Option<usize>) -> Result<(EmbeddingTable, Option<Vec<SideExplanation>>)> {
        let joint = pair.joint();
        let cfg = &self.config.model;
        let d = cfg.dim;
        let all: Vec<usize> = (0..joint.num_entities()).collect();
        let h_att = encode_attributes(&self.params, cfg, pair, &all)?;
        let mut rows = Tensor::<f64>::zeros(&[joint.num_entities(), 2 * d]);
        for j in 0..joint.num_entities() {
            for (o, v) in rows.row_mut(j)[..d].iter_mut().zip(h_att.row(j)) {
                *o = v.to_f64().unwrap_or(f64::NAN);
            }
        }
        let mut explanations: Option<Vec<SideExplanation>> = explain.map(|_| vec![SideExplanation::default(); joint.num_entities()]);

        for side in [Side::A, Side::B] {
            let kg = pair.kg(side);
            for part in &self.partition(side).parts {
                let g = Graph::new();
                let mb = assemble_batch(part, kg, &joint);
                let nei = encode_subgraph(&g, &self.params, cfg, &mb.sub, self.store.read(&mb.sub.nodes)?)?;
                let h = nei.h_nei().value();
                for (i, &v) in mb.core.iter().enumerate() {
                    for (o, x) in rows.row_mut(joint.entity(side, v))[d..].iter_mut().zip(h.row(i)) {
                        *o = x.to_f64().unwrap_or(f64::NAN);
                    }
                }
                if let (Some(n), Some(ex)) = (explain, explanations.as_mut()) {
                    let local = |u: usize| {
                        mb.core
                            .binary_search(&u)
                            .ok()
                            .or_else(|| mb.halo.binary_search(&u).ok().map(|p| mb.core.len() + p))
                    };
                    for (i, &v) in mb.core.iter().enumerate() {
                        let (_, alpha) = nei.attention_row(i);
                        ex[joint.entity(side, v)].neighbors = neighbor_items(kg, v, |u| local(u).map(|l| alpha[l]), n);
                    }
                }
            }
        }

        if let (Some(n), Some(ex)) = (explain, explanations.as_mut()) {
            for chunk in all.chunks(EXPLAIN_CHUNK) {
                let g = Graph::new();
                let mut slots = Vec::with_capacity(chunk.len());
                for &j in chunk {
                    let (side, id) = joint.split_entity(j);
                    slots.push(entity_slots(pair, side, id, cfg));
                }
                let batch = AttributeSlotBatch { entities: slots };
                let out = aggregate_attributes(&g, &self.params, cfg, &batch, true)?;
                for ((&j, slots), imp) in chunk.iter().zip(&batch.entities).zip(&out.importance) {
                    let (side, id) = joint.split_entity(j);
                    let kg = pair.kg(side);
                    let items = slots
                        .iter()
                        .zip(imp)
                        .filter_map(|(s, &w)| {
                            let ti = s.triple?;
                            let t = &kg.attr_triples()[ti];
                            Some(AttributeItem {
                                key: kg.predicates().name(t.predicate).to_string(),
                                value: t.value.clone(),
                                weight: w,
                                triple: ti,
                            })
                        })
                        .collect();
                    ex[j].entity = kg.entities().name(id).to_string();
                    ex[j].attributes = top_n(items, n, |a| a.weight);
                }
            }
        }
        let table = EmbeddingTable { joint, dim_att: d, rows };
        if !table.rows.is_finite() {
            return Err(Error::Validation("non-finite embedding".into()));
        }
        Ok((table, explanations))
    }

    /// `x0 ← h_att` for every entity, then `sweeps` passes writing each part's
    /// final-layer core embeddings back, as training does.
    pub fn refresh_store(&mut self, pair: &GraphPair, sweeps: usize) -> Result<()> {
        let joint = pair.joint();
        let cfg = &self.config.model;
        let all: Vec<usize> = (0..joint.num_entities()).collect();
        self.store = HistoricalEmbeddingStore::from_tensor(encode_attributes(&self.params, cfg, pair, &all)?);
        for _ in 0..sweeps {
            for (side, partition) in [(Side::A, &self.parts.0), (Side::B, &self.parts.1)] {
                let kg = pair.kg(side);
                for part in &partition.parts {
                    let g = Graph::new();
                    let mb = assemble_batch(part, kg, &joint);
                    let nei = encode_subgraph(&g, &self.params, cfg, &mb.sub, self.store.read(&mb.sub.nodes)?)?;
                    let h = nei.h_nei().value();
                    let core: Vec<usize> = mb.core.iter().map(|&v| joint.entity(side, v)).collect();
                    let rows: Vec<usize> = (0..core.len()).collect();
                    self.store.write(&core, &h.gather_rows(&rows)?)?;
                }
            }
        }
        Ok(())
    }
}

/// Attention restricted to true neighbors of `v`, renormalized, top `n`.
fn neighbor_items(kg: &KnowledgeGraph, v: usize, alpha: impl Fn(usize) -> Option<f64>, n: usize) -> Vec<NeighborItem> {
    let mut items: Vec<NeighborItem> = kg
        .neighbor_set(v)
        .into_iter()
        .filter_map(|u| {
            let w = alpha(u)?;
            let pred = kg.adjacency(v).iter().find(|nb| nb.node == u)?.predicate;
            Some(NeighborItem {
                relation: kg.predicates().name(pred).to_string(),
                label: entity_label(kg, u),
                neighbor: u,
                iri: kg.entities().name(u).to_string(),
                weight: w,
            })
        })
        .collect();
    let total: f64 = items.iter().map(|i| i.weight).sum();
    if total > 0.0 {
        items.iter_mut().for_each(|i| i.weight /= total);
    }
    top_n(items, n, |i| i.weight)
}

/// Top-1 prediction of every test query, with explanations of both sides.
pub fn explain_predictions(
    report: &EvalReport,
    explanations: &[SideExplanation],
    joint: &JointIndex,
) -> Vec<Explanation> {
    report
        .predictions
        .iter()
        .enumerate()
        .filter_map(|(pair_id, p)| {
            let &(b, score) = p.candidates.first()?;
            Some(Explanation {
                pair_id,
                score,
                a: explanations[joint.entity(Side::A, p.query)].clone(),
                b: explanations[joint.entity(Side::B, b)].clone(),
            })
        })
        .collect()
}

/// Synonym table mapping names to a canonical form before set comparison.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Normalization {
    map: HashMap<String, String>,
}

impl Normalization {
    pub fn new(map: HashMap<String, String>) -> Self {
        Self { map }
    }

    pub fn canon<'a>(&'a self, s: &'a str) -> &'a str {
        self.map.get(s).map_or(s, String::as_str)
    }

    /// Table for a pair whose B side renames predicates with a suffix and
    /// entities `b:eN` for `a:eN`, as the synthetic generator does.
    pub fn synthetic(pair: &GraphPair) -> Self {
        let mut map = HashMap::new();
        for p in pair.b.predicates().names() {
            if let Some(base) = p.strip_suffix(B_SUFFIX) {
                map.insert(p.clone(), base.to_string());
            }
        }
        for e in pair.b.entities().names() {
            if let Some(rest) = e.strip_prefix("b:") {
                map.insert(e.clone(), format!("a:{rest}"));
            }
        }
        Self { map }
    }

    pub fn attribute_set(&self, e: &SideExplanation) -> HashSet<(String, String)> {
        e.attributes
            .iter()
            .map(|a| (self.canon(&a.key).to_string(), self.canon(&a.value).to_string()))
            .collect()
    }

    pub fn neighbor_set(&self, e: &SideExplanation) -> HashSet<(String, String)> {
        e.neighbors
            .iter()
            .map(|n| (self.canon(&n.relation).to_string(), self.canon(&n.iri).to_string()))
            .collect()
    }
}

/// `|S ∩ T| / |S ∪ T|`, and 1 for two empty sets.
pub fn jaccard<T: Eq + Hash>(s: &HashSet<T>, t: &HashSet<T>) -> f64 {
    let union = s.union(t).count();
    if union == 0 {
        return 1.0;
    }
    s.intersection(t).count() as f64 / union as f64
}

/// Mean attribute and neighbor Jaccard over explanation pairs.
pub fn jaccard_explanations(pairs: &[(&SideExplanation, &SideExplanation)], norm: &Normalization) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let (mut ja, mut jn) = (0.0, 0.0);
    for (x, y) in pairs {
        ja += jaccard(&norm.attribute_set(x), &norm.attribute_set(y));
        jn += jaccard(&norm.neighbor_set(x), &norm.neighbor_set(y));
    }
    (ja / pairs.len() as f64, jn / pairs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalTarget {
    Attributes,
    Neighbors,
    Both,
}

impl FromStr for RemovalTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "attributes" => Ok(Self::Attributes),
            "neighbors" => Ok(Self::Neighbors),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown removal target `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemovalRun {
    pub run: usize,
    /// Triples removed before this run.
    pub removed: usize,
    pub hits1: f64,
    pub jaccard_attributes: f64,
    pub jaccard_neighbors: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemovalReport {
    pub target: RemovalTarget,
    pub runs: Vec<RemovalRun>,
}

impl RemovalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,removed,hits1,jaccard_attributes,jaccard_neighbors\n");
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{:.4},{:.4}\n",
                r.run,
                r.removed,
                format_pct(r.hits1),
                r.jaccard_attributes,
                r.jaccard_neighbors
            ));
        }
        s
    }
}

/// Triples to drop from one graph: attribute and relation triple indices.
#[derive(Default)]
struct Removal {
    attrs: HashSet<usize>,
    rels: HashSet<usize>,
}

impl Removal {
    fn apply(&self, kg: &KnowledgeGraph) -> KnowledgeGraph {
        kg.filtered(|i, _| !self.attrs.contains(&i), |i, _| !self.rels.contains(&i))
    }

    fn len(&self) -> usize {
        self.attrs.len() + self.rels.len()
    }
}

fn top1_removal(kg: &KnowledgeGraph, side: Side, ex: &[SideExplanation], joint: &JointIndex, target: RemovalTarget) -> Removal {
    let mut r = Removal::default();
    for v in 0..kg.num_entities() {
        let e = &ex[joint.entity(side, v)];
        if target != RemovalTarget::Neighbors {
            if let Some(a) = e.attributes.first() {
                r.attrs.insert(a.triple);
            }
        }
        if target != RemovalTarget::Attributes {
            if let Some(n) = e.neighbors.first() {
                for (i, t) in kg.rel_triples().iter().enumerate() {
                    if (t.head == v && t.tail == n.neighbor) || (t.head == n.neighbor && t.tail == v) {
                        r.rels.insert(i);
                    }
                }
            }
        }
    }
    r
}

fn remove_all(kg: &KnowledgeGraph, target: RemovalTarget) -> Removal {
    let mut r = Removal::default();
    if target != RemovalTarget::Neighbors {
        r.attrs.extend(0..kg.attr_triples().len());
    }
    if target != RemovalTarget::Attributes {
        r.rels.extend(0..kg.rel_triples().len());
    }
    r
}

/// Run 1 uses the data as is; runs `2..runs` each remove every entity's
/// current top-1 attribute (or neighbor); the last run removes all of them.
/// Before every run the store is re-derived from the current data.
pub fn removal_analysis<S: Scalar>(
    ck: &Checkpoint,
    pair: &GraphPair,
    seeds: &SeedAlignment,
    target: RemovalTarget,
    runs: usize,
    metric: Metric,
    norm: &Normalization,
) -> Result<RemovalReport> {
    let mut model = AlignmentModel::<S>::from_checkpoint(ck, pair)?;
    let joint = pair.joint();
    let test = seeds.test_pairs();
    let candidates = test_candidates(seeds);
    let mut current = pair.clone();
    let mut previous: Option<Vec<SideExplanation>> = None;
    let mut out = Vec::with_capacity(runs);
    for run in 1..=runs {
        let mut removed = 0;
        if run > 1 {
            let (ra, rb) = if run == runs {
                (remove_all(&current.a, target), remove_all(&current.b, target))
            } else {
                let ex = previous.as_deref().expect("explained in the previous run");
                (
                    top1_removal(&current.a, Side::A, ex, &joint, target),
                    top1_removal(&current.b, Side::B, ex, &joint, target),
                )
            };
            removed = ra.len() + rb.len();
            current = GraphPair::new(ra.apply(&current.a), rb.apply(&current.b));
        }
        model.refresh_store(&current, REFRESH_SWEEPS)?;
        let (table, ex) = model.explain_all(&current, DEFAULT_TOP_N)?;
        let report = evaluate(&table, &test, &candidates, metric, &[1], 1)?;
        let gold: Vec<(&SideExplanation, &SideExplanation)> = test
            .iter()
            .map(|&(a, b)| (&ex[joint.entity(Side::A, a)], &ex[joint.entity(Side::B, b)]))
            .collect();
        let (ja, jn) = jaccard_explanations(&gold, norm);
        log::info!("removal run {run}: removed {removed}, hits@1 {:.2}", report.hits_at(1).unwrap_or(0.0));
        out.push(RemovalRun {
            run,
            removed,
            hits1: report.hits_at(1).unwrap_or(0.0),
            jaccard_attributes: ja,
            jaccard_neighbors: jn,
        });
        previous = Some(ex);
    }
    Ok(RemovalReport { target, runs: out })
}
