//! Graph encoder with edge-gated attention and historical-embedding input.
//!
//! For a sub-graph with symmetric adjacency `A`, node/predicate incidence
//! mean `M` (`[n x p]`) and predicate/node mean `M_p` (`[p x n]`):
//!
//! ```text
//! R_0  = pred_emb[batch predicates]
//! G_k  = sigmoid(A (M R_k) W_r)
//! X_0  = G_0 ⊙ (x0 W_dist)
//! Y_k  = Attn_k(X_{k-1})                      (residual + layer norm)
//! R_k  = R_{k-1} + (M_p G_{k-1}) ⊙ (R_{k-1} W_r2)
//! X_k  = G_k ⊙ Y_k                            h^{nei,k} = X_k
//! ```

use std::rc::Rc;

use kgalign_tensor::layers::attention_block;
use kgalign_tensor::{attention_probs, sparse_matmul, AttnLayout, Graph, ParameterStore, Result, Scalar, Tensor, Var};

use super::ModelConfig;
use crate::batching::SubgraphTensors;

pub struct NeighborForward<'g, S: Scalar> {
    /// `x0 W_dist`, `[n x d]`.
    pub x_he: Var<'g, S>,
    /// Gates `G_0 ..= G_K`.
    pub gates: Vec<Var<'g, S>>,
    /// Layer outputs `h^{nei,1} ..= h^{nei,K}`.
    pub layers: Vec<Var<'g, S>>,
    attn: Vec<Var<'g, S>>,
    layout: Rc<AttnLayout>,
}

impl<'g, S: Scalar> NeighborForward<'g, S> {
    /// Final-layer embeddings.
    pub fn h_nei(&self) -> Var<'g, S> {
        *self.layers.last().expect("at least one layer")
    }

    /// Attention of local node `row` over its segment, averaged over heads and layers.
    /// Returns `(segment start, weights)`.
    pub fn attention_row(&self, row: usize) -> (usize, Vec<f64>) {
        let (seg, &(start, len)) = self
            .layout
            .segments()
            .iter()
            .enumerate()
            .find(|(_, &(s, l))| row >= s && row < s + l)
            .expect("row inside a segment");
        let mut acc = vec![0.0; len];
        for &a in &self.attn {
            let probs = attention_probs(a).expect("attention node");
            for (o, v) in acc.iter_mut().zip(probs.head_mean_row(seg, row - start)) {
                *o += v.to_f64().unwrap_or(f64::NAN) / self.attn.len() as f64;
            }
        }
        (start, acc)
    }

    /// Head-and-layer averaged attention matrix of one segment.
    pub fn attention_matrix(&self, segment: usize) -> Tensor<f64> {
        let (start, len) = self.layout.segments()[segment];
        let mut data = Vec::with_capacity(len * len);
        for i in 0..len {
            data.extend(self.attention_row(start + i).1);
        }
        Tensor::new(&[len, len], data).expect("square")
    }
}

/// Gate `sigmoid(A (M R) W_r)` for relation table `rel` (`[p x d]`).
pub fn compute_gate<'g, S: Scalar>(
    g: &'g Graph<S>,
    store: &ParameterStore<S>,
    adjacency: &Rc<kgalign_tensor::Csr<S>>,
    incidence: &Rc<kgalign_tensor::Csr<S>>,
    rel: Var<'g, S>,
) -> Result<Var<'g, S>> {
    let r_in = sparse_matmul(Rc::clone(incidence), rel)?;
    let projected = r_in.matmul(g.param(store, "transge.w_r")?)?;
    Ok(sparse_matmul(Rc::clone(adjacency), projected)?.sigmoid())
}

/// `x0 W_dist`; `x0` is data, so no gradient reaches it.
pub fn approximate_history<'g, S: Scalar>(g: &'g Graph<S>, store: &ParameterStore<S>, x0: Tensor<S>) -> Result<Var<'g, S>> {
    g.constant(x0).matmul(g.param(store, "transge.w_dist")?)
}

/// `R + (M_p G) ⊙ (R W_r2)`.
pub fn update_relations<'g, S: Scalar>(
    g: &'g Graph<S>,
    store: &ParameterStore<S>,
    pred_node: &Rc<kgalign_tensor::Csr<S>>,
    gate: Var<'g, S>,
    rel: Var<'g, S>,
) -> Result<Var<'g, S>> {
    let gate_p = sparse_matmul(Rc::clone(pred_node), gate)?;
    let delta = rel.matmul(g.param(store, "transge.w_r2")?)?;
    rel.add(gate_p.mul(delta)?)
}

/// Encodes a (possibly stacked) sub-graph. `x0` holds the stored embedding of
/// every local node, in local order.
pub fn encode_subgraph<'g, S: Scalar>(
    g: &'g Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    sub: &SubgraphTensors,
    x0: Tensor<S>,
) -> Result<NeighborForward<'g, S>> {
    let adjacency = Rc::new(sub.adjacency_matrix::<S>());
    let incidence = Rc::new(sub.incidence_mean::<S>());
    let pred_node = Rc::new(sub.predicate_node_mean::<S>());
    let layout = Rc::new(AttnLayout::from_lengths(&sub.segments, cfg.heads));

    let mut rel = g.param(store, "pred_emb")?.gather_rows(Rc::from(sub.predicates.as_slice()))?;
    let x_he = approximate_history(g, store, x0)?;
    let mut gate = compute_gate(g, store, &adjacency, &incidence, rel)?;
    let mut x = x_he.mul(gate)?;
    let mut gates = vec![gate];
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut attn = Vec::with_capacity(cfg.layers);
    for k in 0..cfg.layers {
        let out = attention_block(g, store, &format!("transge.layer{k}"), x, Rc::clone(&layout), None)?;
        attn.push(out.attn);
        rel = update_relations(g, store, &pred_node, gate, rel)?;
        gate = compute_gate(g, store, &adjacency, &incidence, rel)?;
        x = out.y.mul(gate)?;
        gates.push(gate);
        layers.push(x);
    }
    Ok(NeighborForward {
        x_he,
        gates,
        layers,
        attn,
        layout,
    })
}
