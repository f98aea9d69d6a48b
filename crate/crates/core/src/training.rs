//! Losses, negative sampling and the training loop.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use kgalign_tensor::{concat_cols, concat_rows, Adam, Graph, ParameterStore, Scalar, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batching::{assemble_batch, pair_parts, partition_graph, JointIndex, Partition, SubgraphTensors};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::kg::Side;
use crate::model::attr::{aggregate_attributes, AttributeSlotBatch};
use crate::model::store::HistoricalEmbeddingStore;
use crate::model::transge::{approximate_history, encode_subgraph};
use crate::model::{init_params, GraphPair, ModelConfig};
use crate::seed::SeedAlignment;

/// Target number of core entities per part when `num_parts` is not given.
pub const DEFAULT_CORE_SIZE: usize = 512;

/// Entities per chunk when encoding attributes outside training steps.
const ENCODE_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub align: f64,
    pub he1: f64,
    pub he2: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            align: 1.0,
            he1: 1.0,
            he2: 1.0,
            reg: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub margin: f64,
    pub negatives: usize,
    pub lr: f64,
    pub lambda_reg: f64,
    pub rng_seed: u64,
    /// Parts per graph; `None` picks about [`DEFAULT_CORE_SIZE`] entities per part.
    pub num_parts: Option<usize>,
    pub warmup_epochs: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 400,
            margin: 1.0,
            negatives: 5,
            lr: 1e-3,
            lambda_reg: 1e-3,
            rng_seed: 0,
            num_parts: None,
            warmup_epochs: 1,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn parts_for(&self, pair: &GraphPair) -> usize {
        self.num_parts
            .unwrap_or_else(|| pair.a.num_entities().max(pair.b.num_entities()).div_ceil(DEFAULT_CORE_SIZE).max(1))
    }

    pub fn validate(&self, pair: &GraphPair) -> Result<()> {
        self.model.validate()?;
        if self.negatives == 0 || self.margin <= 0.0 || self.lr <= 0.0 || self.lambda_reg < 0.0 {
            return Err(Error::Config(format!(
                "negatives, margin and lr must be positive, lambda_reg non-negative: {self:?}"
            )));
        }
        let k = self.parts_for(pair);
        let smallest = pair.a.num_entities().min(pair.b.num_entities());
        if k == 0 || k > smallest {
            return Err(Error::Config(format!("num_parts = {k} must lie in 1..={smallest}")));
        }
        Ok(())
    }
}

/// Per-epoch sums of each loss term over all batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_align: f64,
    pub l_he1: f64,
    pub l_he2: f64,
    pub l_reg: f64,
}

impl EpochLosses {
    pub fn total(&self) -> f64 {
        self.l_align + self.l_he1 + self.l_he2 + self.l_reg
    }
}

pub fn loss_csv(history: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,l_align,l_he1,l_he2,l_reg\n");
    for l in history {
        out.push_str(&format!("{},{},{},{},{}\n", l.epoch, l.l_align, l.l_he1, l.l_he2, l.l_reg));
    }
    out
}

/// `negatives` corruptions per positive. Each picks side A or B uniformly and
/// replaces that entity with a uniform draw from the pool, never the original.
pub fn sample_negatives(
    positives: &[(usize, usize)],
    pool_a: &[usize],
    pool_b: &[usize],
    negatives: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    for pool in [pool_a, pool_b] {
        if pool.len() < 2 {
            return Err(Error::NegativePool(pool.len()));
        }
    }
    let mut out = Vec::with_capacity(positives.len() * negatives);
    for &(a, b) in positives {
        for _ in 0..negatives {
            if rng.random_bool(0.5) {
                let r = loop {
                    let c = pool_a[rng.random_range(0..pool_a.len())];
                    if c != a {
                        break c;
                    }
                };
                out.push((r, b));
            } else {
                let r = loop {
                    let c = pool_b[rng.random_range(0..pool_b.len())];
                    if c != b {
                        break c;
                    }
                };
                out.push((a, r));
            }
        }
    }
    Ok(out)
}

/// `Σ_s Σ_{s'} max(0, margin + f(s) - f(s'))` with `f` the L2 distance and
/// `negatives` consecutive negative rows per positive row.
pub fn margin_loss<'g, S: Scalar>(
    pos_a: Var<'g, S>,
    pos_b: Var<'g, S>,
    neg_a: Var<'g, S>,
    neg_b: Var<'g, S>,
    margin: f64,
    negatives: usize,
) -> kgalign_tensor::Result<Var<'g, S>> {
    let f_pos = pos_a.sub(pos_b)?.row_norm();
    let f_neg = neg_a.sub(neg_b)?.row_norm();
    let n_pos = f_pos.value().rows();
    let rep: Rc<[usize]> = (0..n_pos * negatives).map(|i| i / negatives).collect();
    Ok(f_pos.gather_rows(rep)?.sub(f_neg)?.add_scalar(S::of(margin)).relu().sum())
}

/// `Σ_rows (1 - cos(a_i, b_i))`.
pub fn cosine_loss<'g, S: Scalar>(a: Var<'g, S>, b: Var<'g, S>) -> kgalign_tensor::Result<Var<'g, S>> {
    let n = a.value().rows();
    Ok(a.row_cosine(b)?.sum().scale(-S::one()).add_scalar(S::of(n as f64)))
}

/// `λ Σ_k ‖h^k‖² / n` over core rows.
pub fn regularization<'g, S: Scalar>(layers: &[Var<'g, S>], lambda_reg: f64) -> kgalign_tensor::Result<Var<'g, S>> {
    let n = layers.first().map_or(1, |l| l.value().rows().max(1));
    let sq: Vec<_> = layers.iter().map(|&h| h.mul(h).map(|x| x.sum())).collect::<kgalign_tensor::Result<_>>()?;
    Ok(concat_rows(&sq)?.sum().scale(S::of(lambda_reg / n as f64)))
}

/// Distillation and regularization terms over core rows:
/// `(Σ_k Σ_v 1 - cos(x_HE, h^k), Σ_v 1 - cos(x0, h_att), λ Σ_k ‖h^k‖² / n)`.
pub fn distill_losses<'g, S: Scalar>(
    x_he: Var<'g, S>,
    layers: &[Var<'g, S>],
    x0: Var<'g, S>,
    h_att: Var<'g, S>,
    lambda_reg: f64,
) -> kgalign_tensor::Result<(Var<'g, S>, Var<'g, S>, Var<'g, S>)> {
    let n = x_he.value().rows().max(1);
    let mut he1 = Vec::with_capacity(layers.len());
    let mut reg = Vec::with_capacity(layers.len());
    for &h in layers {
        he1.push(cosine_loss(x_he, h)?);
        reg.push(h.mul(h)?.sum());
    }
    let he1 = concat_rows(&he1)?.sum();
    let he2 = cosine_loss(x0, h_att)?;
    let reg = concat_rows(&reg)?.sum().scale(S::of(lambda_reg / n as f64));
    Ok((he1, he2, reg))
}

/// Attribute embeddings of `joint_ids`, computed in chunks with no gradient kept.
pub fn encode_attributes<S: Scalar>(
    params: &ParameterStore<S>,
    cfg: &ModelConfig,
    pair: &GraphPair,
    joint_ids: &[usize],
) -> Result<Tensor<S>> {
    let mut rows = Vec::with_capacity(joint_ids.len() * cfg.dim);
    for chunk in joint_ids.chunks(ENCODE_CHUNK) {
        let g = Graph::new();
        let batch = AttributeSlotBatch::build(pair, chunk, cfg);
        let out = aggregate_attributes(&g, params, cfg, &batch, false)?;
        rows.extend_from_slice(out.h_att.value().data());
    }
    Ok(Tensor::new(&[joint_ids.len(), cfg.dim], rows)?)
}

/// Partitions of both graphs used for training and inference.
pub fn partitions(cfg: &TrainConfig, pair: &GraphPair) -> Result<(Partition, Partition)> {
    let k = cfg.parts_for(pair);
    Ok((
        partition_graph(&pair.a, k, cfg.rng_seed)?,
        partition_graph(&pair.b, k, cfg.rng_seed)?,
    ))
}

/// One scheduled step: a part of A paired with a part of B.
#[derive(Clone, Debug)]
struct Batch {
    core: Vec<usize>,
    sub: SubgraphTensors,
    positives: Vec<(usize, usize)>,
}

/// Stateful trainer; [`train`] drives it for the configured number of epochs.
pub struct Trainer<'d, S: Scalar> {
    cfg: TrainConfig,
    pair: &'d GraphPair,
    joint: JointIndex,
    params: ParameterStore<S>,
    store: HistoricalEmbeddingStore<S>,
    batches: Vec<Batch>,
    pool_a: Vec<usize>,
    pool_b: Vec<usize>,
    rng: ChaCha8Rng,
    adam: Adam,
    epoch: usize,
    history: Vec<EpochLosses>,
    step_peaks: Vec<usize>,
    last_good: Option<Checkpoint>,
}

impl<'d, S: Scalar> Trainer<'d, S> {
    /// Initializes parameters, partitions both graphs and runs the warmup.
    pub fn new(cfg: &TrainConfig, pair: &'d GraphPair, seeds: &SeedAlignment) -> Result<Self> {
        cfg.validate(pair)?;
        let train = seeds.train_pairs();
        if train.is_empty() {
            return Err(Error::Config("seed alignment has no training pairs".into()));
        }
        let joint = pair.joint();
        let params = round_params(init_params::<S>(&cfg.model, &joint, cfg.rng_seed)?);
        let store = HistoricalEmbeddingStore::zeros(joint.num_entities(), cfg.model.dim);
        let (pa, pb) = partitions(cfg, pair)?;
        let part_of_a = pa.assignment(pair.a.num_entities());
        let mut by_part: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
        for &(a, b) in &train {
            by_part.entry(part_of_a[a]).or_default().push((a, b));
        }
        let batches = pair_parts(&pa, &pb, &train, pair.a.num_entities(), pair.b.num_entities())
            .into_iter()
            .map(|(i, j)| {
                let ma = assemble_batch(&pa.parts[i], &pair.a, &joint);
                let mb = assemble_batch(&pb.parts[j], &pair.b, &joint);
                let sub = SubgraphTensors::stack(&[ma.sub, mb.sub]);
                let core = sub.core_locals().iter().map(|&l| sub.nodes[l]).collect();
                Batch {
                    core,
                    sub,
                    positives: by_part.remove(&i).unwrap_or_default(),
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(2);
        let mut t = Self {
            cfg: cfg.clone(),
            pair,
            joint,
            params,
            store,
            batches,
            pool_a: (0..pair.a.num_entities()).collect(),
            pool_b: (0..pair.b.num_entities()).collect(),
            rng,
            adam: Adam {
                lr: cfg.lr,
                ..Adam::default()
            },
            epoch: 0,
            history: Vec::new(),
            step_peaks: Vec::new(),
            last_good: None,
        };
        t.warmup()?;
        t.last_good = Some(t.checkpoint());
        Ok(t)
    }

    /// `x0 ← h_att` for every entity, repeated `warmup_epochs` times.
    fn warmup(&mut self) -> Result<()> {
        let all: Vec<usize> = (0..self.joint.num_entities()).collect();
        for _ in 0..self.cfg.warmup_epochs {
            let h = encode_attributes(&self.params, &self.cfg.model, self.pair, &all)?;
            self.store = HistoricalEmbeddingStore::from_tensor(h);
        }
        Ok(())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochLosses] {
        &self.history
    }

    pub fn params(&self) -> &ParameterStore<S> {
        &self.params
    }

    pub fn store(&self) -> &HistoricalEmbeddingStore<S> {
        &self.store
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    /// Peak tape bytes of every step taken so far.
    pub fn step_peaks(&self) -> &[usize] {
        &self.step_peaks
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.cfg, self.pair, &self.params, &self.store, self.epoch, &self.history)
    }

    /// One pass over every batch in a freshly shuffled order.
    ///
    /// A NaN loss or gradient fails with [`Error::Diverged`] carrying the
    /// checkpoint of the last completed epoch.
    pub fn run_epoch(&mut self) -> Result<EpochLosses> {
        let mut order: Vec<usize> = (0..self.batches.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = EpochLosses {
            epoch: self.epoch,
            ..EpochLosses::default()
        };
        for bi in order {
            let l = match self.step(bi) {
                Ok(Some(l)) => l,
                Ok(None) | Err(Error::Tensor(TensorError::NanGradient(_))) => return Err(self.diverged()),
                Err(e) => return Err(e),
            };
            sums.l_align += l[0];
            sums.l_he1 += l[1];
            sums.l_he2 += l[2];
            sums.l_reg += l[3];
        }
        // Parameters that overflow at f32 would make an unusable checkpoint.
        let ck = self.checkpoint();
        if !ck.is_finite() {
            return Err(self.diverged());
        }
        self.history.push(sums);
        self.epoch += 1;
        self.last_good = Some(Checkpoint {
            epoch: self.epoch,
            loss_history: self.history.clone(),
            ..ck
        });
        Ok(sums)
    }

    fn diverged(&self) -> Error {
        Error::Diverged {
            epoch: self.epoch,
            last_good: Box::new(self.last_good.clone().expect("set after warmup")),
        }
    }

    /// Loss terms of one step, or `None` when the loss is NaN.
    fn step(&mut self, bi: usize) -> Result<Option<[f64; 4]>> {
        let batch = &self.batches[bi];
        let cfg = &self.cfg;
        let negatives = sample_negatives(&batch.positives, &self.pool_a, &self.pool_b, cfg.negatives, &mut self.rng)?;
        let joint = |pairs: &[(usize, usize)]| -> Vec<(usize, usize)> {
            pairs
                .iter()
                .map(|&(a, b)| (self.joint.entity(Side::A, a), self.joint.entity(Side::B, b)))
                .collect()
        };
        let positives = joint(&batch.positives);
        let negatives = joint(&negatives);
        let extras = extra_entities(&batch.core, positives.iter().chain(&negatives));
        let input = StepBatch {
            core: &batch.core,
            sub: &batch.sub,
            x0_sub: self.store.read(&batch.sub.nodes)?,
            x0_core: self.store.read(&batch.core)?,
            x0_extras: self.store.read(&extras)?,
            extras: &extras,
            positives: &positives,
            negatives: &negatives,
        };

        let g = Graph::new();
        let terms = batch_loss(&g, &self.params, cfg, self.pair, &input)?;
        let values = [terms.align, terms.he1, terms.he2, terms.reg].map(|v| v.value().data()[0].to_f64().unwrap_or(f64::NAN));
        if values.iter().any(|v| v.is_nan()) {
            return Ok(None);
        }
        let grads = g.backward(terms.total)?;
        self.params.accumulate(&g, &grads);
        self.params.adam_step(&self.adam)?;
        let new_rows = terms.h_nei_core.value();
        self.store.write(&batch.core, &new_rows)?;
        self.step_peaks.push(g.peak_bytes());
        Ok(Some(values))
    }
}

/// Entities referenced by `pairs` that are not in `core`, in first-use order.
pub fn extra_entities<'a>(core: &[usize], pairs: impl Iterator<Item = &'a (usize, usize)>) -> Vec<usize> {
    let mut seen: HashSet<usize> = core.iter().copied().collect();
    let mut extras = Vec::new();
    for &(a, b) in pairs {
        for e in [a, b] {
            if seen.insert(e) {
                extras.push(e);
            }
        }
    }
    extras
}

/// Everything one training step reads. Ids are joint; `x0_*` are store rows.
pub struct StepBatch<'a, S> {
    pub core: &'a [usize],
    pub sub: &'a SubgraphTensors,
    pub x0_sub: Tensor<S>,
    pub x0_core: Tensor<S>,
    /// Entities outside the core that positives or negatives refer to.
    pub extras: &'a [usize],
    pub x0_extras: Tensor<S>,
    pub positives: &'a [(usize, usize)],
    /// `negatives` consecutive rows per positive.
    pub negatives: &'a [(usize, usize)],
}

pub struct LossTerms<'g, S: Scalar> {
    pub align: Var<'g, S>,
    pub he1: Var<'g, S>,
    pub he2: Var<'g, S>,
    pub reg: Var<'g, S>,
    /// Weighted sum of the four terms.
    pub total: Var<'g, S>,
    /// Final-layer neighbor embeddings of the core, in core order.
    pub h_nei_core: Var<'g, S>,
}

/// Forward pass and all loss terms for one batch.
///
/// Core entities use the encoder output; other entities named by a pair
/// use their stored embedding passed through `W_dist`.
pub fn batch_loss<'g, S: Scalar>(
    g: &'g Graph<S>,
    params: &ParameterStore<S>,
    cfg: &TrainConfig,
    pair: &GraphPair,
    b: &StepBatch<'_, S>,
) -> kgalign_tensor::Result<LossTerms<'g, S>> {
    let mcfg = &cfg.model;
    let mut row: HashMap<usize, usize> = HashMap::with_capacity(b.core.len() + b.extras.len());
    for (i, &e) in b.core.iter().chain(b.extras).enumerate() {
        row.insert(e, i);
    }
    let all: Vec<usize> = b.core.iter().chain(b.extras).copied().collect();
    let slots = AttributeSlotBatch::build(pair, &all, mcfg);
    let attr = aggregate_attributes(g, params, mcfg, &slots, false)?;
    let nei = encode_subgraph(g, params, mcfg, b.sub, b.x0_sub.clone())?;
    let core_locals: Rc<[usize]> = b.sub.core_locals().into();
    let n_core = b.core.len();

    let h_nei_core = nei.h_nei().gather_rows(Rc::clone(&core_locals))?;
    let h_nei_all = if b.extras.is_empty() {
        h_nei_core
    } else {
        let hist = approximate_history(g, params, b.x0_extras.clone())?;
        concat_rows(&[h_nei_core, hist])?
    };
    let h = concat_cols(&[attr.h_att, h_nei_all])?;

    let align = if b.positives.is_empty() {
        g.constant(Tensor::scalar(S::zero()))
    } else {
        let pick = |list: &[(usize, usize)], side_b: bool| -> Rc<[usize]> {
            list.iter().map(|&(a, bb)| row[if side_b { &bb } else { &a }]).collect()
        };
        margin_loss(
            h.gather_rows(pick(b.positives, false))?,
            h.gather_rows(pick(b.positives, true))?,
            h.gather_rows(pick(b.negatives, false))?,
            h.gather_rows(pick(b.negatives, true))?,
            cfg.margin,
            cfg.negatives,
        )?
    };
    let layers_core: Vec<_> = nei
        .layers
        .iter()
        .map(|l| l.gather_rows(Rc::clone(&core_locals)))
        .collect::<kgalign_tensor::Result<_>>()?;
    let x_he_core = nei.x_he.gather_rows(Rc::clone(&core_locals))?;
    let x0_core = g.constant(b.x0_core.clone());
    let h_att_core = attr.h_att.gather_rows((0..n_core).collect())?;
    // Distillation targets are teachers: only the approximation side learns.
    let detach = |v: Var<'g, S>| g.constant((*v.value()).clone());
    let teachers: Vec<_> = layers_core.iter().map(|&l| detach(l)).collect();
    let (he1, he2, _) = distill_losses(x_he_core, &teachers, x0_core, detach(h_att_core), cfg.lambda_reg)?;
    let reg = regularization(&layers_core, cfg.lambda_reg)?;

    let w = &cfg.weights;
    let total = concat_rows(&[
        align.scale(S::of(w.align)),
        he1.scale(S::of(w.he1)),
        he2.scale(S::of(w.he2)),
        reg.scale(S::of(w.reg)),
    ])?
    .sum();
    Ok(LossTerms {
        align,
        he1,
        he2,
        reg,
        total,
        h_nei_core,
    })
}

fn round_params<S: Scalar>(p: ParameterStore<S>) -> ParameterStore<S> {
    let mut out = ParameterStore::new();
    for (name, param) in p.iter() {
        out.insert(name, crate::model::round_to_f32(&param.value)).expect("unique names");
    }
    out
}

/// Outcome of [`train`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLosses>,
    pub step_peaks: Vec<usize>,
}

/// Full run: warmup, `cfg.epochs` epochs, final checkpoint.
pub fn train<S: Scalar>(cfg: &TrainConfig, pair: &GraphPair, seeds: &SeedAlignment) -> Result<TrainOutcome> {
    train_with::<S>(cfg, pair, seeds, |_, _| Ok(()))
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with<S: Scalar>(
    cfg: &TrainConfig,
    pair: &GraphPair,
    seeds: &SeedAlignment,
    mut on_epoch: impl FnMut(&EpochLosses, &Trainer<'_, S>) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut t = Trainer::<S>::new(cfg, pair, seeds)?;
    for _ in 0..cfg.epochs {
        let l = t.run_epoch()?;
        on_epoch(&l, &t)?;
    }
    Ok(TrainOutcome {
        checkpoint: t.last_good.take().expect("set after warmup"),
        history: t.history,
        step_peaks: t.step_peaks,
    })
}
