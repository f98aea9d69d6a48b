//! Toy models and graphs, plus the gradient checks run by both the model
//! tests and the acceptance run.

use std::rc::Rc;

use kgalign_core::batching::SubgraphTensors;
use kgalign_core::model::attr::{aggregate_attributes, AttributeSlotBatch};
use kgalign_core::model::init_params;
use kgalign_core::model::transge::encode_subgraph;
use kgalign_core::training::{batch_loss, distill_losses, extra_entities, margin_loss, sample_negatives, StepBatch};
use kgalign_core::{assemble_batch, GraphPair, HistoricalEmbeddingStore, JointIndex, KnowledgeGraph, ModelConfig, Side, TrainConfig};
use kgalign_tensor::{grad_check, GradCheckReport, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference::{Mat, Toy};

pub const GRAD_TOL: f64 = 1e-4;
pub const H: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 5;

pub fn tiny() -> ModelConfig {
    ModelConfig {
        dim: 4,
        char_dim: 3,
        heads: 2,
        layers: 3,
        max_slots: 32,
        char_buckets: 16,
    }
}

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn random(rows: usize, cols: usize, scale: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn attr_pair() -> GraphPair {
    let mut a = KnowledgeGraph::new(Side::A);
    a.add_attr("e", "name", "Alice Liddell");
    a.add_attr("e", "born", "1852");
    a.add_attr("e", "city", "Westminster");
    a.add_attr("f", "name", "ab");
    a.add_attr("g", "name", "ba");
    a.add_attr("h", "name", "same");
    a.add_attr("h", "alias", "same");
    a.add_attr("i", "born", "1901");
    a.entity("lonely");
    let mut b = KnowledgeGraph::new(Side::B);
    b.add_attr("x", "label", "Alice");
    GraphPair::new(a, b)
}

/// KG with named entities `v0..` and `(head, predicate, tail)` triples.
pub fn rel_graph(n: usize, triples: &[(usize, &str, usize)]) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::new(Side::A);
    for v in 0..n {
        kg.entity(&format!("v{v}"));
    }
    for &(h, p, t) in triples {
        kg.add_rel(&format!("v{h}"), p, &format!("v{t}"));
    }
    kg
}

/// Full-graph sub-graph plus the matching reference structure.
pub fn full_batch(kg: &KnowledgeGraph) -> (SubgraphTensors, Toy, JointIndex) {
    let joint = JointIndex::new(kg, &KnowledgeGraph::new(Side::B));
    let all: Vec<usize> = (0..kg.num_entities()).collect();
    let b = assemble_batch(&all, kg, &joint);
    let preds = b.sub.predicates.clone();
    let edges = kg
        .rel_triples()
        .iter()
        .map(|t| (t.head, preds.iter().position(|&p| p == t.predicate).unwrap(), t.tail))
        .collect();
    let toy = Toy { n: kg.num_entities(), preds, edges };
    (b.sub, toy, joint)
}

pub struct StepFixture {
    pub pair: GraphPair,
    pub cfg: TrainConfig,
    pub core: Vec<usize>,
    pub sub: SubgraphTensors,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub extras: Vec<usize>,
    pub store: HistoricalEmbeddingStore<f64>,
}

impl StepFixture {
    pub fn input(&self) -> StepBatch<'_, f64> {
        StepBatch {
            core: &self.core,
            sub: &self.sub,
            x0_sub: self.store.read(&self.sub.nodes).unwrap(),
            x0_core: self.store.read(&self.core).unwrap(),
            extras: &self.extras,
            x0_extras: self.store.read(&self.extras).unwrap(),
            positives: &self.positives,
            negatives: &self.negatives,
        }
    }
}

/// Two 6-cycles, a half-size batch on each side and the step inputs.
pub fn step_fixture(seed: u64) -> StepFixture {
    let mut a = KnowledgeGraph::new(Side::A);
    let mut b = KnowledgeGraph::new(Side::B);
    let names = ["ann", "bob", "cy", "dee", "eve", "fay"];
    for (i, n) in names.iter().enumerate() {
        a.add_attr(&format!("a{i}"), "name", n);
        b.add_attr(&format!("b{i}"), "label", &n.to_uppercase());
        a.add_attr(&format!("a{i}"), "age", &format!("{}", 20 + i));
    }
    for (h, t) in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)] {
        a.add_rel(&format!("a{h}"), "knows", &format!("a{t}"));
        b.add_rel(&format!("b{h}"), "friend", &format!("b{t}"));
    }
    let pair = GraphPair::new(a, b);
    let joint = pair.joint();
    let cfg = TrainConfig { model: tiny(), negatives: 2, ..TrainConfig::default() };
    let ma = assemble_batch(&[0, 1, 2], &pair.a, &joint);
    let mb = assemble_batch(&[0, 1, 2], &pair.b, &joint);
    let sub = SubgraphTensors::stack(&[ma.sub, mb.sub]);
    let core: Vec<usize> = sub.core_locals().iter().map(|&l| sub.nodes[l]).collect();
    let positives: Vec<(usize, usize)> = (0..3).map(|i| (joint.entity(Side::A, i), joint.entity(Side::B, i))).collect();
    let pool_a: Vec<usize> = (0..6).map(|i| joint.entity(Side::A, i)).collect();
    let pool_b: Vec<usize> = (0..6).map(|i| joint.entity(Side::B, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = sample_negatives(&positives, &pool_a, &pool_b, 2, &mut rng).unwrap();
    let extras = extra_entities(&core, positives.iter().chain(&negatives));
    let store = HistoricalEmbeddingStore::from_tensor(random(12, 4, 1.0, seed + 20));
    StepFixture { pair, cfg, core, sub, positives, negatives, extras, store }
}

/// Attribute aggregator on five entities, loss = weighted sum of `h_att`.
pub fn attribute_grad_check(seed: u64) -> GradCheckReport {
    let pair = attr_pair();
    let cfg = tiny();
    let ids: Vec<usize> = vec![0, 1, 3, 5, 6];
    let batch = AttributeSlotBatch::build(&pair, &ids, &cfg);
    let params = init_params::<f64>(&cfg, &pair.joint(), seed).unwrap();
    let weights = random(ids.len(), cfg.dim, 1.0, seed + 50);
    grad_check(
        &params,
        |g, s| {
            let out = aggregate_attributes(g, s, &cfg, &batch, false)?;
            Ok(out.h_att.mul(g.constant(weights.clone()))?.sum())
        },
        H,
        seed,
    )
    .unwrap()
}

/// Graph encoder (gates, `W_dist`, attention) under a margin loss.
pub fn encoder_grad_check(seed: u64) -> GradCheckReport {
    let cfg = tiny();
    let kg = rel_graph(6, &[(0, "p", 1), (1, "q", 2), (2, "p", 0), (3, "q", 4), (4, "r", 5), (5, "p", 3), (2, "r", 3)]);
    let (sub, _, joint) = full_batch(&kg);
    let params = init_params::<f64>(&cfg, &joint, seed).unwrap();
    let x0 = random(6, cfg.dim, 1.0, seed + 10);
    grad_check(
        &params,
        |g, s| {
            let f = encode_subgraph(g, s, &cfg, &sub, x0.clone())?;
            let h = f.h_nei();
            let rows = |ids: &[usize]| h.gather_rows(Rc::from(ids));
            margin_loss(rows(&[0, 1])?, rows(&[3, 4])?, rows(&[0, 0, 1, 1])?, rows(&[5, 2, 5, 0])?, 2.0, 2)
        },
        H,
        seed,
    )
    .unwrap()
}

/// Total training loss of one step. Teacher targets are constants to the
/// optimizer and finite differences would move them, so the check covers
/// the loss with teacher terms weighted 0 and, separately, the He1 term
/// with the teachers frozen.
pub fn total_loss_grad_check(seed: u64) -> (GradCheckReport, GradCheckReport) {
    let fx = step_fixture(seed);
    let input = fx.input();
    let cfg = &fx.cfg;
    let params = init_params::<f64>(&cfg.model, &fx.pair.joint(), seed).unwrap();
    let mut student = cfg.clone();
    student.weights.he1 = 0.0;
    student.weights.he2 = 0.0;
    let main = grad_check(&params, |g, s| Ok(batch_loss(g, s, &student, &fx.pair, &input)?.total), H, seed).unwrap();

    let teachers: Vec<Tensor<f64>> = {
        let g = Graph::new();
        let f = encode_subgraph(&g, &params, &cfg.model, &fx.sub, input.x0_sub.clone()).unwrap();
        f.layers.iter().map(|l| (*l.value()).clone()).collect()
    };
    let teacher = grad_check(
        &params,
        |g, s| {
            let f = encode_subgraph(g, s, &cfg.model, &fx.sub, input.x0_sub.clone())?;
            let fixed: Vec<_> = teachers.iter().map(|t| g.constant(t.clone())).collect();
            let x0 = g.constant(input.x0_sub.clone());
            let (he1, _, _) = distill_losses(f.x_he, &fixed, x0, x0, cfg.lambda_reg)?;
            Ok(he1)
        },
        H,
        seed,
    )
    .unwrap();
    (main, teacher)
}

/// Passes the tolerance, with noise-floor skips under 2% of entries.
pub fn grad_ok(r: &GradCheckReport) -> bool {
    r.max_rel_error <= GRAD_TOL && r.below_noise * 50 <= r.checked
}
