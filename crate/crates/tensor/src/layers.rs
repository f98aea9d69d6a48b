//! Parameterised building blocks: attention blocks and a character GRU.

use std::rc::Rc;

use rand::Rng;

use crate::graph::{attention, gru_cell, Graph, Var};
use crate::kernels::AttnLayout;
use crate::params::{normal, xavier_uniform};
use crate::{ParameterStore, Result, Scalar, Tensor, TensorError};

/// Registers `{prefix}.w_q/.w_k/.w_v/.w_o` and `{prefix}.ln_gain/.ln_bias`.
pub fn init_attention<S: Scalar>(
    store: &mut ParameterStore<S>,
    prefix: &str,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    for w in ["w_q", "w_k", "w_v", "w_o"] {
        store.insert(&format!("{prefix}.{w}"), xavier_uniform(dim, dim, rng))?;
    }
    store.insert(&format!("{prefix}.ln_gain"), Tensor::full(&[1, dim], S::one()))?;
    store.insert(&format!("{prefix}.ln_bias"), Tensor::zeros(&[1, dim]))?;
    Ok(())
}

/// Output of one attention block.
pub struct AttentionOutput<'g, S: Scalar> {
    pub y: Var<'g, S>,
    /// The raw attention node; pass to [`crate::attention_probs`] for weights.
    pub attn: Var<'g, S>,
}

/// `y = LayerNorm(x' + Attn(x' W_q, x' W_k, x' W_v) W_o)` with `x' = gate ⊙ x`
/// when a gate is given.
pub fn attention_block<'g, S: Scalar>(
    g: &'g Graph<S>,
    store: &ParameterStore<S>,
    prefix: &str,
    x: Var<'g, S>,
    layout: Rc<AttnLayout>,
    gate: Option<Var<'g, S>>,
) -> Result<AttentionOutput<'g, S>> {
    let p = |n: &str| g.param(store, &format!("{prefix}.{n}"));
    let dim = x.value().cols();
    if dim % layout.heads() != 0 {
        return Err(TensorError::HeadMismatch {
            dim,
            heads: layout.heads(),
        });
    }
    let x = match gate {
        Some(gate) => x.mul(gate)?,
        None => x,
    };
    let q = x.matmul(p("w_q")?)?;
    let k = x.matmul(p("w_k")?)?;
    let v = x.matmul(p("w_v")?)?;
    let attn = attention(q, k, v, layout)?;
    let o = attn.matmul(p("w_o")?)?;
    let y = x.add(o)?.layer_norm(p("ln_gain")?, p("ln_bias")?)?;
    Ok(AttentionOutput { y, attn })
}

/// Registers `{prefix}.w_ih/.w_hh` (`[input x 3H]`, `[H x 3H]`) and `{prefix}.b_ih/.b_hh`.
pub fn init_gru<S: Scalar>(
    store: &mut ParameterStore<S>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert(&format!("{prefix}.w_ih"), xavier_uniform(input, 3 * hidden, rng))?;
    store.insert(&format!("{prefix}.w_hh"), xavier_uniform(hidden, 3 * hidden, rng))?;
    store.insert(&format!("{prefix}.b_ih"), Tensor::zeros(&[1, 3 * hidden]))?;
    store.insert(&format!("{prefix}.b_hh"), Tensor::zeros(&[1, 3 * hidden]))?;
    Ok(())
}

/// Embedding table `[rows x dim]` drawn from `N(0, 1/dim)`.
pub fn init_embedding<S: Scalar>(
    store: &mut ParameterStore<S>,
    name: &str,
    rows: usize,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert(name, normal(rows, dim, (1.0 / dim as f64).sqrt(), rng))
}

/// Final GRU state of each token sequence, `[seqs x H]`.
///
/// Tokens index rows of `table`; the GRU starts from a zero state.
/// Shorter sequences stop updating once exhausted.
pub fn gru_final_states<'g, S: Scalar>(
    g: &'g Graph<S>,
    store: &ParameterStore<S>,
    prefix: &str,
    table: Var<'g, S>,
    seqs: &[Vec<usize>],
) -> Result<Var<'g, S>> {
    if seqs.iter().any(Vec::is_empty) {
        return Err(TensorError::EmptySequence);
    }
    let p = |n: &str| g.param(store, &format!("{prefix}.{n}"));
    let (w_ih, w_hh, b_ih, b_hh) = (p("w_ih")?, p("w_hh")?, p("b_ih")?, p("b_hh")?);
    let hidden = w_hh.value().rows();
    let mut h = g.constant(Tensor::zeros(&[seqs.len(), hidden]));
    let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
    for t in 0..steps {
        let ids: Rc<[usize]> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
        let active: Rc<[bool]> = seqs.iter().map(|s| t < s.len()).collect();
        let x = table.gather_rows(ids)?;
        let gi = x.matmul(w_ih)?.add_row(b_ih)?;
        h = gru_cell(gi, h, w_hh, b_hh, active)?;
    }
    Ok(h)
}

/// Final GRU state of one embedded sequence `[l x input]`, as `[1 x H]`.
pub fn gru_sequence<'g, S: Scalar>(
    g: &'g Graph<S>,
    store: &ParameterStore<S>,
    prefix: &str,
    chars: Var<'g, S>,
) -> Result<Var<'g, S>> {
    let len = chars.value().rows();
    if len == 0 {
        return Err(TensorError::EmptySequence);
    }
    gru_final_states(g, store, prefix, chars, &[(0..len).collect()])
}

/// Single-segment attention block returning the head-averaged attention matrix.
pub fn multi_head_attention<'g, S: Scalar>(
    g: &'g Graph<S>,
    store: &ParameterStore<S>,
    prefix: &str,
    x: Var<'g, S>,
    heads: usize,
    gate: Option<Var<'g, S>>,
) -> Result<(Var<'g, S>, Tensor<S>)> {
    let n = x.value().rows();
    let out = attention_block(g, store, prefix, x, Rc::new(AttnLayout::single(n, heads)), gate)?;
    let probs = crate::graph::attention_probs(out.attn).expect("attention node");
    Ok((out.y, probs.head_mean(0)))
}
