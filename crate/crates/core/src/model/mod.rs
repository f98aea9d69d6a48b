//! The alignment model: attribute aggregator, graph encoder and the
//! historical embedding store.
//!
//! Parameter names:
//!
//! | name | shape |
//! |------|-------|
//! | `char_emb` | `[char_buckets x d_c]` |
//! | `gru.w_ih`, `gru.w_hh` | `[d_c x 3 d_c]` |
//! | `gru.b_ih`, `gru.b_hh` | `[1 x 3 d_c]` |
//! | `pred_emb` | `[P_A + P_B x d]`, shared by attribute keys and relations |
//! | `attr.w_a` | `[d x d]` |
//! | `attr.w_l` | `[d_c x d]` |
//! | `attr.summary`, `attr.no_attr` | `[1 x d]` |
//! | `attr.layer{k}.*` | attention block, `k = 0..layers` |
//! | `transge.w_dist`, `transge.w_r`, `transge.w_r2` | `[d x d]` |
//! | `transge.layer{k}.*` | attention block |

pub mod attr;
pub mod store;
pub mod transge;

use kgalign_tensor::layers::{init_attention, init_embedding, init_gru};
use kgalign_tensor::{xavier_uniform, ParameterStore, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batching::JointIndex;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Side};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub char_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_slots: usize,
    pub char_buckets: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            char_dim: 64,
            heads: 8,
            layers: 3,
            max_slots: 32,
            char_buckets: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.char_dim == 0 || self.heads == 0 || self.layers == 0 || self.max_slots == 0 {
            return bad(format!("all model sizes must be positive: {self:?}"));
        }
        if self.dim % self.heads != 0 {
            return bad(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if self.char_buckets < 3 {
            return bad(format!("char_buckets = {} (need at least 3)", self.char_buckets));
        }
        Ok(())
    }
}

/// The two graphs being aligned.
#[derive(Clone, Debug)]
pub struct GraphPair {
    pub a: KnowledgeGraph,
    pub b: KnowledgeGraph,
}

impl GraphPair {
    pub fn new(a: KnowledgeGraph, b: KnowledgeGraph) -> Self {
        Self { a, b }
    }

    pub fn kg(&self, side: Side) -> &KnowledgeGraph {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn joint(&self) -> JointIndex {
        JointIndex::new(&self.a, &self.b)
    }
}

/// Creates every parameter, drawing from one seeded stream in a fixed order.
pub fn init_params<S: Scalar>(cfg: &ModelConfig, joint: &JointIndex, seed: u64) -> Result<ParameterStore<S>> {
    cfg.validate()?;
    let (d, dc) = (cfg.dim, cfg.char_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParameterStore::new();
    init_embedding(&mut s, "char_emb", cfg.char_buckets, dc, &mut rng)?;
    init_gru(&mut s, "gru", dc, dc, &mut rng)?;
    init_embedding(&mut s, "pred_emb", joint.num_predicates().max(1), d, &mut rng)?;
    s.insert("attr.w_a", xavier_uniform(d, d, &mut rng))?;
    s.insert("attr.w_l", xavier_uniform(dc, d, &mut rng))?;
    init_embedding(&mut s, "attr.summary", 1, d, &mut rng)?;
    init_embedding(&mut s, "attr.no_attr", 1, d, &mut rng)?;
    for k in 0..cfg.layers {
        init_attention(&mut s, &format!("attr.layer{k}"), d, &mut rng)?;
    }
    s.insert("transge.w_dist", xavier_uniform(d, d, &mut rng))?;
    s.insert("transge.w_r", xavier_uniform(d, d, &mut rng))?;
    s.insert("transge.w_r2", xavier_uniform(d, d, &mut rng))?;
    for k in 0..cfg.layers {
        init_attention(&mut s, &format!("transge.layer{k}"), d, &mut rng)?;
    }
    Ok(s)
}

/// Rounds every value through `f32`, the precision checkpoints are stored at.
pub fn round_to_f32<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(|v| S::of(v.to_f32().unwrap_or(f32::NAN) as f64))
}
