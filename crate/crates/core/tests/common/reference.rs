//! Plain `Vec<Vec<f64>>` forward passes written straight from the model
//! equations, used as independent oracles for the autodiff implementation.
#![allow(dead_code)]

use kgalign_core::model::attr::Slot;
use kgalign_core::ModelConfig;
use kgalign_tensor::ParameterStore;

pub type Mat = Vec<Vec<f64>>;

pub fn param(store: &ParameterStore<f64>, name: &str) -> Mat {
    let t = store.value(name).unwrap();
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn zip(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()).collect()
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let c = row.len() as f64;
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
            let s = (var + 1e-5).sqrt();
            row.iter().enumerate().map(|(j, v)| (v - mean) / s * gain[j] + bias[j]).collect()
        })
        .collect()
}

/// One attention block over a single segment: returns the output and the
/// head-averaged attention matrix.
pub fn attention_block(store: &ParameterStore<f64>, prefix: &str, x: &Mat, heads: usize) -> (Mat, Mat) {
    let p = |n: &str| param(store, &format!("{prefix}.{n}"));
    let (q, k, v) = (matmul(x, &p("w_q")), matmul(x, &p("w_k")), matmul(x, &p("w_v")));
    let n = x.len();
    let d = x[0].len();
    let dh = d / heads;
    let mut ctx = vec![vec![0.0; d]; n];
    let mut mean = vec![vec![0.0; n]; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                let a = e[j] / z;
                mean[i][j] += a / heads as f64;
                for c in cols.clone() {
                    ctx[i][c] += a * v[j][c];
                }
            }
        }
    }
    let o = matmul(&ctx, &p("w_o"));
    let res = zip(x, &o, |a, b| a + b);
    let y = layer_norm(&res, &p("ln_gain")[0], &p("ln_bias")[0]);
    (y, mean)
}

/// GRU final state with the reset gate applied to the hidden projection.
pub fn gru(store: &ParameterStore<f64>, chars: &[usize]) -> Vec<f64> {
    let emb = param(store, "char_emb");
    let (w_ih, w_hh) = (param(store, "gru.w_ih"), param(store, "gru.w_hh"));
    let (b_ih, b_hh) = (param(store, "gru.b_ih")[0].clone(), param(store, "gru.b_hh")[0].clone());
    let hd = w_hh.len();
    let mut h = vec![0.0; hd];
    for &c in chars {
        let gi = zip(&matmul(&vec![emb[c].clone()], &w_ih), &vec![b_ih.clone()], |a, b| a + b).remove(0);
        let gh = zip(&matmul(&vec![h.clone()], &w_hh), &vec![b_hh.clone()], |a, b| a + b).remove(0);
        h = (0..hd)
            .map(|j| {
                let r = sigmoid(gi[j] + gh[j]);
                let z = sigmoid(gi[hd + j] + gh[hd + j]);
                let n = (gi[2 * hd + j] + r * gh[2 * hd + j]).tanh();
                (1.0 - z) * n + z * h[j]
            })
            .collect();
    }
    h
}

/// `(h_att, importance)` of one entity.
pub fn attribute_entity(store: &ParameterStore<f64>, cfg: &ModelConfig, slots: &[Slot]) -> (Vec<f64>, Vec<f64>) {
    let pred = param(store, "pred_emb");
    let (w_a, w_l) = (param(store, "attr.w_a"), param(store, "attr.w_l"));
    let mut x: Mat = vec![param(store, "attr.summary")[0].clone()];
    if slots.is_empty() {
        x.push(param(store, "attr.no_attr")[0].clone());
    }
    for s in slots {
        let a = matmul(&vec![pred[s.predicate].clone()], &w_a);
        let l = matmul(&vec![gru(store, &s.chars)], &w_l);
        x.push(zip(&a, &l, |p, q| (p + q).tanh()).remove(0));
    }
    let mut importance = vec![0.0; slots.len()];
    for k in 0..cfg.layers {
        let (y, att) = attention_block(store, &format!("attr.layer{k}"), &x, cfg.heads);
        if !slots.is_empty() {
            let total: f64 = att[0][1..].iter().sum();
            for (i, w) in importance.iter_mut().enumerate() {
                *w += att[0][1 + i] / total / cfg.layers as f64;
            }
        }
        x = y;
    }
    (x[0].clone(), importance)
}

/// Structure of a sub-graph in local ids: node count, predicate count and
/// `(head, predicate, tail)` edges.
pub struct Toy {
    pub n: usize,
    pub preds: Vec<usize>,
    pub edges: Vec<(usize, usize, usize)>,
}

pub struct TransGe {
    pub x_he: Mat,
    pub gates: Vec<Mat>,
    pub layers: Vec<Mat>,
    /// Attention averaged over layers and heads.
    pub attention: Mat,
}

pub fn trans_ge(store: &ParameterStore<f64>, cfg: &ModelConfig, toy: &Toy, x0: &Mat) -> TransGe {
    let n = toy.n;
    let p = toy.preds.len();
    let mut adj = vec![vec![0.0; n]; n];
    let mut inc = vec![vec![0.0; p]; n];
    let mut deg = vec![0.0; n];
    let mut touch = vec![vec![false; n]; p];
    for &(h, r, t) in &toy.edges {
        if h != t {
            adj[h][t] = 1.0;
            adj[t][h] = 1.0;
        }
        inc[h][r] += 1.0;
        inc[t][r] += 1.0;
        deg[h] += 1.0;
        deg[t] += 1.0;
        touch[r][h] = true;
        touch[r][t] = true;
    }
    for u in 0..n {
        for r in 0..p {
            if deg[u] > 0.0 {
                inc[u][r] /= deg[u];
            }
        }
    }
    let pred_node: Mat = touch
        .iter()
        .map(|row| {
            let c = row.iter().filter(|&&b| b).count() as f64;
            row.iter().map(|&b| if b { 1.0 / c } else { 0.0 }).collect()
        })
        .collect();
    let table = param(store, "pred_emb");
    let mut rel: Mat = toy.preds.iter().map(|&q| table[q].clone()).collect();
    let (w_r, w_r2, w_dist) = (param(store, "transge.w_r"), param(store, "transge.w_r2"), param(store, "transge.w_dist"));
    let d = cfg.dim;
    let gate_of = |rel: &Mat| -> Mat {
        if p == 0 {
            return vec![vec![0.5; d]; n];
        }
        map(&matmul(&adj, &matmul(&matmul(&inc, rel), &w_r)), sigmoid)
    };
    let x_he = matmul(x0, &w_dist);
    let mut gate = gate_of(&rel);
    let mut x = zip(&gate, &x_he, |a, b| a * b);
    let mut gates = vec![gate.clone()];
    let mut layers = Vec::new();
    let mut attention = vec![vec![0.0; n]; n];
    for k in 0..cfg.layers {
        let (y, att) = attention_block(store, &format!("transge.layer{k}"), &x, cfg.heads);
        for i in 0..n {
            for j in 0..n {
                attention[i][j] += att[i][j] / cfg.layers as f64;
            }
        }
        if p > 0 {
            let gate_p = matmul(&pred_node, &gate);
            let delta = matmul(&rel, &w_r2);
            rel = zip(&rel, &zip(&gate_p, &delta, |a, b| a * b), |a, b| a + b);
        }
        gate = gate_of(&rel);
        x = zip(&gate, &y, |a, b| a * b);
        gates.push(gate.clone());
        layers.push(x.clone());
    }
    TransGe { x_he, gates, layers, attention }
}
