//! Attribute aggregator: character GRU over literals, key/value fusion and
//! per-entity self-attention with a learned summary slot.

use std::collections::HashMap;
use std::rc::Rc;

use kgalign_tensor::layers::{attention_block, gru_final_states};
use kgalign_tensor::{attention_probs, concat_rows, AttnLayout, Graph, ParameterStore, Result, Scalar, Var};

use super::{GraphPair, ModelConfig};
use crate::kg::{truncate_literal, Side};

/// Token for control characters and anything unmappable.
pub const OOV_TOKEN: usize = 0;
/// Token standing in for an empty literal.
pub const EMPTY_TOKEN: usize = 1;

pub fn char_id(c: char, buckets: usize) -> usize {
    if c.is_control() {
        OOV_TOKEN
    } else {
        2 + (c as usize) % (buckets - 2)
    }
}

/// Character ids of a literal after truncation; never empty.
pub fn encode_chars(literal: &str, buckets: usize) -> Vec<usize> {
    let ids: Vec<usize> = truncate_literal(literal).chars().map(|c| char_id(c, buckets)).collect();
    if ids.is_empty() {
        vec![EMPTY_TOKEN]
    } else {
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    /// Joint predicate id of the attribute key.
    pub predicate: usize,
    pub chars: Vec<usize>,
    /// Index of the source triple in its graph, when there is one.
    pub triple: Option<usize>,
}

/// Attribute slots of a list of entities. An entity with no slots is
/// encoded through the reserved no-attribute slot.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttributeSlotBatch {
    pub entities: Vec<Vec<Slot>>,
}

impl AttributeSlotBatch {
    /// Slots for joint entity ids, sorted stably by predicate id and capped at `max_slots`.
    pub fn build(pair: &GraphPair, joint_ids: &[usize], cfg: &ModelConfig) -> Self {
        let joint = pair.joint();
        let entities = joint_ids
            .iter()
            .map(|&j| {
                let (side, id) = joint.split_entity(j);
                entity_slots(pair, side, id, cfg)
            })
            .collect();
        Self { entities }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

pub fn entity_slots(pair: &GraphPair, side: Side, id: usize, cfg: &ModelConfig) -> Vec<Slot> {
    let kg = pair.kg(side);
    let joint = pair.joint();
    let mut slots: Vec<Slot> = kg
        .attributes_of(id)
        .iter()
        .map(|&ti| {
            let t = &kg.attr_triples()[ti];
            Slot {
                predicate: joint.predicate(side, t.predicate),
                chars: encode_chars(&t.value, cfg.char_buckets),
                triple: Some(ti),
            }
        })
        .collect();
    slots.sort_by_key(|s| s.predicate);
    slots.truncate(cfg.max_slots);
    slots
}

/// Forward result for a slot batch.
pub struct AttrForward<'g, S: Scalar> {
    /// `[entities x d]`.
    pub h_att: Var<'g, S>,
    /// Per entity, one weight per real slot (empty for no-attribute entities).
    pub importance: Vec<Vec<f64>>,
}

/// Runs the aggregator; `importance` is filled only when `with_importance` is set.
pub fn aggregate_attributes<'g, S: Scalar>(
    g: &'g Graph<S>,
    store: &ParameterStore<S>,
    cfg: &ModelConfig,
    batch: &AttributeSlotBatch,
    with_importance: bool,
) -> Result<AttrForward<'g, S>> {
    let p = |n: &str| g.param(store, n);

    // Unique literals go through the GRU once.
    let mut unique: HashMap<&[usize], usize> = HashMap::new();
    let mut seqs: Vec<Vec<usize>> = Vec::new();
    let mut slot_lit = Vec::new();
    let mut slot_pred = Vec::new();
    for slots in &batch.entities {
        for s in slots {
            let next = seqs.len();
            let u = *unique.entry(s.chars.as_slice()).or_insert_with(|| {
                seqs.push(s.chars.clone());
                next
            });
            slot_lit.push(u);
            slot_pred.push(s.predicate);
        }
    }
    let n_slots = slot_lit.len();
    let summary = p("attr.summary")?;
    let no_attr = p("attr.no_attr")?;
    let table = if n_slots > 0 {
        let lit = gru_final_states(g, store, "gru", p("char_emb")?, &seqs)?;
        let lit = lit.matmul(p("attr.w_l")?)?.gather_rows(Rc::from(slot_lit))?;
        let key = p("pred_emb")?.gather_rows(Rc::from(slot_pred))?.matmul(p("attr.w_a")?)?;
        let x_att = key.add(lit)?.tanh();
        concat_rows(&[x_att, summary, no_attr])?
    } else {
        concat_rows(&[summary, no_attr])?
    };
    let (summary_row, no_attr_row) = (n_slots, n_slots + 1);

    let mut rows = Vec::with_capacity(n_slots + 2 * batch.len());
    let mut lengths = Vec::with_capacity(batch.len());
    let mut next_slot = 0;
    for slots in &batch.entities {
        rows.push(summary_row);
        if slots.is_empty() {
            rows.push(no_attr_row);
            lengths.push(2);
        } else {
            rows.extend(next_slot..next_slot + slots.len());
            next_slot += slots.len();
            lengths.push(1 + slots.len());
        }
    }
    let layout = Rc::new(AttnLayout::from_lengths(&lengths, cfg.heads));
    let mut x = table.gather_rows(Rc::from(rows))?;
    let mut importance: Vec<Vec<f64>> = if with_importance {
        batch.entities.iter().map(|s| vec![0.0; s.len()]).collect()
    } else {
        Vec::new()
    };
    for k in 0..cfg.layers {
        let out = attention_block(g, store, &format!("attr.layer{k}"), x, Rc::clone(&layout), None)?;
        x = out.y;
        if with_importance {
            let probs = attention_probs(out.attn).expect("attention node");
            for (e, imp) in importance.iter_mut().enumerate() {
                if imp.is_empty() {
                    continue;
                }
                let row = probs.head_mean_row(e, 0);
                let attr: Vec<f64> = row[1..].iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                let total: f64 = attr.iter().sum();
                for (o, a) in imp.iter_mut().zip(&attr) {
                    *o += a / total / cfg.layers as f64;
                }
            }
        }
    }
    let starts: Rc<[usize]> = layout.segments().iter().map(|&(s, _)| s).collect();
    let h_att = x.gather_rows(starts)?;
    Ok(AttrForward { h_att, importance })
}
