//! Forward/backward kernels for the fused tape operations.

use crate::gemm::{gemm, MatMut, MatRef};
use crate::tensor::softmax_in_place;
use crate::{Scalar, Tensor};

/// Segmented multi-head attention layout.
///
/// Rows of Q/K/V are split into contiguous segments; each segment attends
/// only within itself. Every segment is processed by every head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnLayout {
    segments: Vec<(usize, usize)>,
    heads: usize,
    prob_offsets: Vec<usize>,
}

impl AttnLayout {
    /// `segments` are `(start_row, len)` pairs; they must tile the rows in order.
    pub fn new(segments: Vec<(usize, usize)>, heads: usize) -> Self {
        assert!(heads > 0);
        let mut prob_offsets = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0;
        let mut expect = 0;
        for &(start, len) in &segments {
            assert_eq!(start, expect, "segments must tile the rows in order");
            expect += len;
            prob_offsets.push(acc);
            acc += len * len * heads;
        }
        prob_offsets.push(acc);
        Self {
            segments,
            heads,
            prob_offsets,
        }
    }

    /// One segment covering `n` rows.
    pub fn single(n: usize, heads: usize) -> Self {
        Self::new(vec![(0, n)], heads)
    }

    /// Consecutive segments with the given lengths.
    pub fn from_lengths(lengths: &[usize], heads: usize) -> Self {
        let mut start = 0;
        let segments = lengths
            .iter()
            .map(|&len| {
                let s = (start, len);
                start += len;
                s
            })
            .collect();
        Self::new(segments, heads)
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn rows(&self) -> usize {
        self.segments.last().map_or(0, |&(s, l)| s + l)
    }

    pub fn prob_len(&self) -> usize {
        *self.prob_offsets.last().expect("offsets")
    }

    /// Offset of the `len x len` probability block of `(segment, head)`.
    pub fn prob_offset(&self, segment: usize, head: usize) -> usize {
        let len = self.segments[segment].1;
        self.prob_offsets[segment] + head * len * len
    }
}

/// Attention probabilities captured from a forward pass.
#[derive(Clone, Debug)]
pub struct AttnProbs<S> {
    layout: AttnLayout,
    probs: Vec<S>,
}

impl<S: Scalar> AttnProbs<S> {
    pub(crate) fn from_parts(layout: AttnLayout, probs: Vec<S>) -> Self {
        debug_assert_eq!(layout.prob_len(), probs.len());
        Self { layout, probs }
    }

    pub fn layout(&self) -> &AttnLayout {
        &self.layout
    }

    /// Probability that row `i` of `segment` attends to row `j`, for one head.
    pub fn get(&self, segment: usize, head: usize, i: usize, j: usize) -> S {
        let len = self.layout.segments[segment].1;
        self.probs[self.layout.prob_offset(segment, head) + i * len + j]
    }

    /// Row `i` of `segment`, averaged over heads.
    pub fn head_mean_row(&self, segment: usize, i: usize) -> Vec<S> {
        let len = self.layout.segments[segment].1;
        let h = self.layout.heads;
        let mut out = vec![S::zero(); len];
        for head in 0..h {
            let base = self.layout.prob_offset(segment, head) + i * len;
            for (o, &p) in out.iter_mut().zip(&self.probs[base..base + len]) {
                *o += p;
            }
        }
        let inv = S::one() / S::of(h as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    /// Full head-averaged `len x len` matrix of a segment.
    pub fn head_mean(&self, segment: usize) -> Tensor<S> {
        let len = self.layout.segments[segment].1;
        let mut data = Vec::with_capacity(len * len);
        for i in 0..len {
            data.extend(self.head_mean_row(segment, i));
        }
        Tensor::new(&[len, len], data).expect("square")
    }
}

pub(crate) fn attention_forward<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    layout: &AttnLayout,
) -> (Tensor<S>, Vec<S>) {
    let d = q.cols();
    let dh = d / layout.heads;
    let scale = S::one() / S::of(dh as f64).sqrt();
    let mut out = Tensor::zeros(&[q.rows(), d]);
    let mut probs = vec![S::zero(); layout.prob_len()];
    for (si, &(start, len)) in layout.segments.iter().enumerate() {
        if len == 0 {
            continue;
        }
        for h in 0..layout.heads {
            let off = start * d + h * dh;
            let p_off = layout.prob_offset(si, h);
            let block = &mut probs[p_off..p_off + len * len];
            let qm = MatRef::strided(q.data(), off, len, dh, d, 1);
            let km = MatRef::strided(k.data(), off, len, dh, d, 1);
            gemm(scale, qm, km.t(), S::zero(), MatMut::new(block, len, len));
            for row in block.chunks_mut(len) {
                softmax_in_place(row);
            }
            let vm = MatRef::strided(v.data(), off, len, dh, d, 1);
            gemm(
                S::one(),
                MatRef::new(block, len, len),
                vm,
                S::zero(),
                MatMut::strided(out.data_mut(), off, len, dh, d, 1),
            );
        }
    }
    (out, probs)
}

pub(crate) fn attention_backward<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    probs: &[S],
    dout: &Tensor<S>,
    layout: &AttnLayout,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let d = q.cols();
    let dh = d / layout.heads;
    let scale = S::one() / S::of(dh as f64).sqrt();
    let shape = [q.rows(), d];
    let (mut dq, mut dk, mut dv) = (Tensor::zeros(&shape), Tensor::zeros(&shape), Tensor::zeros(&shape));
    let mut dp: Vec<S> = Vec::new();
    for (si, &(start, len)) in layout.segments.iter().enumerate() {
        if len == 0 {
            continue;
        }
        dp.clear();
        dp.resize(len * len, S::zero());
        for h in 0..layout.heads {
            let off = start * d + h * dh;
            let p_off = layout.prob_offset(si, h);
            let p = &probs[p_off..p_off + len * len];
            let pm = MatRef::new(p, len, len);
            let dom = MatRef::strided(dout.data(), off, len, dh, d, 1);
            let vm = MatRef::strided(v.data(), off, len, dh, d, 1);
            gemm(S::one(), dom, vm.t(), S::zero(), MatMut::new(&mut dp, len, len));
            gemm(
                S::one(),
                pm.t(),
                dom,
                S::zero(),
                MatMut::strided(dv.data_mut(), off, len, dh, d, 1),
            );
            for (dprow, prow) in dp.chunks_mut(len).zip(p.chunks(len)) {
                let dot: S = dprow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (g, &pv) in dprow.iter_mut().zip(prow) {
                    *g = pv * (*g - dot);
                }
            }
            let dsm = MatRef::new(&dp, len, len);
            let qm = MatRef::strided(q.data(), off, len, dh, d, 1);
            let km = MatRef::strided(k.data(), off, len, dh, d, 1);
            gemm(scale, dsm, km, S::zero(), MatMut::strided(dq.data_mut(), off, len, dh, d, 1));
            gemm(scale, dsm.t(), qm, S::zero(), MatMut::strided(dk.data_mut(), off, len, dh, d, 1));
        }
    }
    (dq, dk, dv)
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Returns `(y, xhat, inv_std)`.
pub(crate) fn layer_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Vec<S>) {
    let (n, c) = (x.rows(), x.cols());
    let eps = S::of(LAYER_NORM_EPS);
    let inv_c = S::one() / S::of(c as f64);
    let mut xhat = Tensor::zeros(&[n, c]);
    let mut y = Tensor::zeros(&[n, c]);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<S>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_c;
        let is = S::one() / (var + eps).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let xh = xhat.row(r).to_vec();
        for (j, o) in y.row_mut(r).iter_mut().enumerate() {
            *o = xh[j] * gain.data()[j] + bias.data()[j];
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgain, dbias)`.
pub(crate) fn layer_norm_backward<S: Scalar>(
    dy: &Tensor<S>,
    xhat: &Tensor<S>,
    inv_std: &[S],
    gain: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, c) = (dy.rows(), dy.cols());
    let cs = S::of(c as f64);
    let mut dx = Tensor::zeros(&[n, c]);
    let mut dgain = Tensor::zeros(gain.shape());
    let mut dbias = Tensor::zeros(gain.shape());
    let mut dxhat = vec![S::zero(); c];
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = xhat.row(r);
        for j in 0..c {
            dxhat[j] = dyr[j] * gain.data()[j];
            dgain.data_mut()[j] += dyr[j] * xh[j];
            dbias.data_mut()[j] += dyr[j];
        }
        let sum_d: S = dxhat.iter().copied().sum();
        let sum_dx: S = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        let scale = inv_std[r] / cs;
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = scale * (cs * dxhat[j] - sum_d - xh[j] * sum_dx);
        }
    }
    (dx, dgain, dbias)
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

/// Cached activations of one GRU step.
#[derive(Clone, Debug)]
pub(crate) struct GruCache<S> {
    pub r: Vec<S>,
    pub z: Vec<S>,
    pub n: Vec<S>,
    pub ghn: Vec<S>,
}

/// One batched GRU step with `gi = x W_ih + b_ih` precomputed.
///
/// Gate layout along the `3H` axis is `[reset | update | candidate]`.
/// Rows with `active[i] == false` carry their hidden state through unchanged.
pub(crate) fn gru_cell_forward<S: Scalar>(
    gi: &Tensor<S>,
    h: &Tensor<S>,
    w_hh: &Tensor<S>,
    b_hh: &Tensor<S>,
    active: &[bool],
) -> (Tensor<S>, GruCache<S>) {
    let (b, hd) = (h.rows(), h.cols());
    let mut gh = h.matmul(w_hh).expect("gru w_hh shape");
    for row in gh.data_mut().chunks_mut(3 * hd) {
        for (v, &bias) in row.iter_mut().zip(b_hh.data()) {
            *v += bias;
        }
    }
    let mut out = h.clone();
    let mut cache = GruCache {
        r: vec![S::zero(); b * hd],
        z: vec![S::zero(); b * hd],
        n: vec![S::zero(); b * hd],
        ghn: vec![S::zero(); b * hd],
    };
    for i in 0..b {
        if !active[i] {
            continue;
        }
        let gir = gi.row(i);
        let ghr = gh.row(i);
        for j in 0..hd {
            let r = sigmoid(gir[j] + ghr[j]);
            let z = sigmoid(gir[hd + j] + ghr[hd + j]);
            let ghn = ghr[2 * hd + j];
            let n = (gir[2 * hd + j] + r * ghn).tanh();
            let idx = i * hd + j;
            let hp = h.data()[idx];
            out.data_mut()[idx] = (S::one() - z) * n + z * hp;
            cache.r[idx] = r;
            cache.z[idx] = z;
            cache.n[idx] = n;
            cache.ghn[idx] = ghn;
        }
    }
    (out, cache)
}

/// Returns `(dgi, dh, dw_hh, db_hh)`.
pub(crate) fn gru_cell_backward<S: Scalar>(
    dout: &Tensor<S>,
    h: &Tensor<S>,
    w_hh: &Tensor<S>,
    active: &[bool],
    cache: &GruCache<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>, Tensor<S>) {
    let (b, hd) = (h.rows(), h.cols());
    let one = S::one();
    let mut dgi = Tensor::zeros(&[b, 3 * hd]);
    let mut dgh = Tensor::zeros(&[b, 3 * hd]);
    let mut dh = Tensor::zeros(&[b, hd]);
    for i in 0..b {
        if !active[i] {
            dh.row_mut(i).copy_from_slice(dout.row(i));
            continue;
        }
        for j in 0..hd {
            let idx = i * hd + j;
            let g = dout.data()[idx];
            let (r, z, n, ghn) = (cache.r[idx], cache.z[idx], cache.n[idx], cache.ghn[idx]);
            let hp = h.data()[idx];
            let dn = g * (one - z);
            let dz = g * (hp - n);
            dh.data_mut()[idx] = g * z;
            let dan = dn * (one - n * n);
            let dr = dan * ghn;
            let daz = dz * z * (one - z);
            let dar = dr * r * (one - r);
            let gi_row = &mut dgi.data_mut()[i * 3 * hd..(i + 1) * 3 * hd];
            gi_row[j] = dar;
            gi_row[hd + j] = daz;
            gi_row[2 * hd + j] = dan;
            let gh_row = &mut dgh.data_mut()[i * 3 * hd..(i + 1) * 3 * hd];
            gh_row[j] = dar;
            gh_row[hd + j] = daz;
            gh_row[2 * hd + j] = dan * r;
        }
    }
    // dh += dgh * W_hh^T ; inactive rows have zero dgh.
    gemm(
        one,
        dgh.as_mat(),
        w_hh.as_mat().t(),
        one,
        MatMut::new(dh.data_mut(), b, hd),
    );
    let dw = h.transpose().matmul(&dgh).expect("gru dw shape");
    let mut db = Tensor::zeros(&[1, 3 * hd]);
    for row in dgh.data().chunks(3 * hd) {
        for (o, &v) in db.data_mut().iter_mut().zip(row) {
            *o += v;
        }
    }
    (dgi, dh, dw, db)
}
