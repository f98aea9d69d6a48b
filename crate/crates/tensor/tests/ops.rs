use std::rc::Rc;

use kgalign_tensor::layers::{
    attention_block, gru_final_states, gru_sequence, init_attention, init_gru, multi_head_attention,
};
use kgalign_tensor::{
    attention, attention_probs, concat_cols, concat_rows, grad_check, gru_cell, sparse_matmul, Adam, AttnLayout,
    Csr, Graph, ParameterStore, Tensor, TensorError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(&[rows, cols], data).unwrap()
}

fn to_rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Plain loop multi-head attention, returns (output, per-head probabilities).
fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], heads: usize) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = q.len();
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; n];
    let mut all = Vec::new();
    for h in 0..heads {
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..n {
                p[i][j] = scores[j].exp() / z;
            }
            for c in 0..dh {
                out[i][h * dh + c] = (0..n).map(|j| p[i][j] * v[j][h * dh + c]).sum();
            }
        }
        all.push(p);
    }
    (out, all)
}

#[test]
fn attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (q, k, v) = (
        rand_tensor(&mut rng, 3, 8, 1.0),
        rand_tensor(&mut rng, 3, 8, 1.0),
        rand_tensor(&mut rng, 3, 8, 1.0),
    );
    let g = Graph::new();
    let out = attention(
        g.constant(q.clone()),
        g.constant(k.clone()),
        g.constant(v.clone()),
        Rc::new(AttnLayout::single(3, 2)),
    )
    .unwrap();
    let (expected, probs) = naive_attention(&to_rows(&q), &to_rows(&k), &to_rows(&v), 2);
    assert!(out.value().max_abs_diff(&Tensor::from_rows(&expected)) <= 1e-10);
    let p = attention_probs(out).unwrap();
    for h in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                assert!((p.get(0, h, i, j) - probs[h][i][j]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn segmented_attention_equals_separate_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, 5, 4, 1.0);
    let g = Graph::new();
    let xv = g.constant(x.clone());
    let joint = attention(xv, xv, xv, Rc::new(AttnLayout::from_lengths(&[2, 3], 2))).unwrap();
    let rows = to_rows(&x);
    let (top, _) = naive_attention(&rows[..2], &rows[..2], &rows[..2], 2);
    let (bottom, _) = naive_attention(&rows[2..], &rows[2..], &rows[2..], 2);
    let expected: Vec<Vec<f64>> = top.into_iter().chain(bottom).collect();
    assert!(joint.value().max_abs_diff(&Tensor::from_rows(&expected)) <= 1e-12);
}

fn mha_store(dim: usize, seed: u64) -> ParameterStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    init_attention(&mut store, "mha", dim, &mut rng).unwrap();
    store
}

#[test]
fn single_row_attends_to_itself() {
    let store = mha_store(8, 1);
    let g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![0.5; 8]]));
    let (_, alpha) = multi_head_attention(&g, &store, "mha", x, 2, None).unwrap();
    assert_eq!(alpha.data(), &[1.0]);
}

#[test]
fn identical_rows_split_attention_evenly() {
    let store = mha_store(8, 2);
    let g = Graph::new();
    let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
    let x = g.constant(Tensor::from_rows(&[row.clone(), row]));
    let (y, alpha) = multi_head_attention(&g, &store, "mha", x, 2, None).unwrap();
    for &a in alpha.data() {
        assert!((a - 0.5).abs() < 1e-15);
    }
    let y = y.value();
    assert_eq!(y.row(0), y.row(1));
}

#[test]
fn attention_block_matches_scripted_forward() {
    let store = mha_store(8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, 3, 8, 1.0);
    let g = Graph::new();
    let (y, _) = multi_head_attention(&g, &store, "mha", g.constant(x.clone()), 2, None).unwrap();

    let w = |n: &str| to_rows(store.value(&format!("mha.{n}")).unwrap());
    let xr = to_rows(&x);
    let (att, _) = naive_attention(&mm(&xr, &w("w_q")), &mm(&xr, &w("w_k")), &mm(&xr, &w("w_v")), 2);
    let o = mm(&att, &w("w_o"));
    let expected: Vec<Vec<f64>> = xr
        .iter()
        .zip(&o)
        .map(|(a, b)| {
            let s: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            let mean = s.iter().sum::<f64>() / 8.0;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            s.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
        })
        .collect();
    assert!(y.value().max_abs_diff(&Tensor::from_rows(&expected)) <= 1e-10);
}

#[test]
fn attention_rejects_indivisible_heads() {
    let store = mha_store(6, 1);
    let g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 6]));
    let err = multi_head_attention(&g, &store, "mha", x, 4, None).err();
    assert_eq!(err, Some(TensorError::HeadMismatch { dim: 6, heads: 4 }));
}

fn gru_store(input: usize, hidden: usize, seed: u64) -> ParameterStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    init_gru(&mut store, "gru", input, hidden, &mut rng).unwrap();
    store
}

#[test]
fn gru_with_zero_weights_outputs_zero() {
    let mut store = gru_store(3, 4, 1);
    for n in ["w_ih", "w_hh"] {
        store.value_mut(&format!("gru.{n}")).unwrap().data_mut().fill(0.0);
    }
    let g = Graph::new();
    let chars = g.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.3, 0.3]]));
    let h = gru_sequence(&g, &store, "gru", chars).unwrap();
    assert_eq!(h.value().data(), &[0.0; 4]);
}

#[test]
fn gru_single_step_matches_hand_expansion() {
    let store = gru_store(2, 2, 9);
    let x = [0.7, -0.4];
    let g = Graph::new();
    let h = gru_sequence(&g, &store, "gru", g.constant(Tensor::from_rows(&[x.to_vec()]))).unwrap();

    let w_ih = to_rows(store.value("gru.w_ih").unwrap());
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    // h0 = 0, biases zero: gh = 0.
    let gi = |col: usize| x[0] * w_ih[0][col] + x[1] * w_ih[1][col];
    let mut expected = Vec::new();
    for j in 0..2 {
        let _r = sig(gi(j));
        let z = sig(gi(2 + j));
        let n = gi(4 + j).tanh();
        expected.push((1.0 - z) * n);
    }
    let got = h.value();
    for j in 0..2 {
        assert!((got.data()[j] - expected[j]).abs() < 1e-15);
    }
}

#[test]
fn gru_two_steps_match_hand_expansion_with_biases() {
    let mut store = gru_store(2, 2, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    *store.value_mut("gru.b_ih").unwrap() = rand_tensor(&mut rng, 1, 6, 0.5);
    *store.value_mut("gru.b_hh").unwrap() = rand_tensor(&mut rng, 1, 6, 0.5);
    let xs = [[0.2, 0.9], [-0.6, 0.1]];
    let g = Graph::new();
    let chars = g.constant(Tensor::from_rows(&[xs[0].to_vec(), xs[1].to_vec()]));
    let got = gru_sequence(&g, &store, "gru", chars).unwrap().value();

    let w = |n: &str| to_rows(store.value(&format!("gru.{n}")).unwrap());
    let (w_ih, w_hh, b_ih, b_hh) = (w("w_ih"), w("w_hh"), w("b_ih")[0].clone(), w("b_hh")[0].clone());
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = [0.0f64; 2];
    for x in xs {
        let gi: Vec<f64> = (0..6).map(|c| x[0] * w_ih[0][c] + x[1] * w_ih[1][c] + b_ih[c]).collect();
        let gh: Vec<f64> = (0..6).map(|c| h[0] * w_hh[0][c] + h[1] * w_hh[1][c] + b_hh[c]).collect();
        let mut next = [0.0; 2];
        for j in 0..2 {
            let r = sig(gi[j] + gh[j]);
            let z = sig(gi[2 + j] + gh[2 + j]);
            let n = (gi[4 + j] + r * gh[4 + j]).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
    }
    for j in 0..2 {
        assert!((got.data()[j] - h[j]).abs() < 1e-14);
    }
}

#[test]
fn gru_is_length_sensitive() {
    let store = gru_store(3, 4, 2);
    let g = Graph::new();
    let one = gru_sequence(&g, &store, "gru", g.constant(Tensor::from_rows(&[vec![0.5, -0.5, 1.0]]))).unwrap();
    let two = gru_sequence(
        &g,
        &store,
        "gru",
        g.constant(Tensor::from_rows(&[vec![0.5, -0.5, 1.0], vec![0.5, -0.5, 1.0]])),
    )
    .unwrap();
    assert!(one.value().max_abs_diff(&two.value()) > 1e-6);
}

#[test]
fn gru_rejects_empty_sequence() {
    let store = gru_store(3, 4, 2);
    let g = Graph::new();
    let empty = g.constant(Tensor::zeros(&[0, 3]));
    assert_eq!(gru_sequence(&g, &store, "gru", empty).err(), Some(TensorError::EmptySequence));
}

#[test]
fn batched_gru_equals_individual_runs() {
    let mut store = gru_store(3, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    store.insert("table", rand_tensor(&mut rng, 6, 3, 1.0)).unwrap();
    let seqs = vec![vec![1, 2, 3], vec![4], vec![5, 0]];
    let g = Graph::new();
    let table = g.param(&store, "table").unwrap();
    let batched = gru_final_states(&g, &store, "gru", table, &seqs).unwrap().value();
    for (i, s) in seqs.iter().enumerate() {
        let single = gru_final_states(&g, &store, "gru", table, std::slice::from_ref(s)).unwrap().value();
        assert_eq!(batched.row(i), single.row(0));
    }
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut store = ParameterStore::<f64>::new();
    store.insert("w", Tensor::from_rows(&[vec![1.5, -2.0]])).unwrap();
    let g = Graph::new();
    let w = g.param(&store, "w").unwrap();
    let loss = w.scale(0.0).sum();
    let grads = g.backward(loss).unwrap();
    store.accumulate(&g, &grads);
    store.adam_step(&Adam::with_lr(0.1)).unwrap();
    assert_eq!(store.value("w").unwrap().data(), &[1.5, -2.0]);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut store = ParameterStore::<f64>::new();
    store.insert("w", Tensor::scalar(3.0)).unwrap();
    let g = Graph::new();
    let loss = g.param(&store, "w").unwrap().sum();
    let grads = g.backward(loss).unwrap();
    store.accumulate(&g, &grads);
    store.adam_step(&Adam::with_lr(0.1)).unwrap();
    // m̂ = 1, v̂ = 1 → step = 0.1 / (1 + 1e-8).
    let expected = 3.0 - 0.1 / (1.0 + 1e-8);
    assert!((store.value("w").unwrap().data()[0] - expected).abs() < 1e-15);
    assert!(store.get("w").unwrap().grad().is_none());
}

#[test]
fn adam_rejects_nan_gradient_by_name() {
    let mut store = ParameterStore::<f64>::new();
    store.insert("good", Tensor::scalar(1.0)).unwrap();
    store.insert("bad", Tensor::scalar(f64::NAN)).unwrap();
    let g = Graph::new();
    let loss = g
        .param(&store, "bad")
        .unwrap()
        .mul(g.param(&store, "bad").unwrap())
        .unwrap()
        .add(g.param(&store, "good").unwrap())
        .unwrap()
        .sum();
    let grads = g.backward(loss).unwrap();
    store.accumulate(&g, &grads);
    assert_eq!(store.adam_step(&Adam::default()), Err(TensorError::NanGradient("bad".into())));
    assert_eq!(store.value("good").unwrap().data(), &[1.0]);
}

fn train_toy(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    store.insert("w", rand_tensor(&mut rng, 4, 3, 1.0)).unwrap();
    let x = rand_tensor(&mut rng, 5, 4, 1.0);
    for _ in 0..10 {
        let g = Graph::new();
        let y = g.constant(x.clone()).matmul(g.param(&store, "w").unwrap()).unwrap().tanh();
        let loss = y.mul(y).unwrap().sum();
        let grads = g.backward(loss).unwrap();
        store.accumulate(&g, &grads);
        store.adam_step(&Adam::with_lr(0.01)).unwrap();
    }
    store.value("w").unwrap().clone()
}

#[test]
fn adam_is_deterministic() {
    assert_eq!(train_toy(5), train_toy(5));
}

#[test]
fn grad_check_on_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::new();
    store.insert("w", rand_tensor(&mut rng, 4, 5, 2.0)).unwrap();
    let report = grad_check(
        &store,
        |g, s| {
            let w = g.param(s, "w")?;
            Ok(w.mul(w)?.sum().scale(0.5))
        },
        1e-5,
        0,
    )
    .unwrap();
    assert_eq!(report.checked, 20);
    assert!(report.max_rel_error <= 1e-7, "{report:?}");
}

/// Store exercising every tape operation.
fn composite_store(seed: u64) -> ParameterStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParameterStore::new();
    s.insert("x", rand_tensor(&mut rng, 5, 4, 1.0)).unwrap();
    s.insert("w", rand_tensor(&mut rng, 4, 4, 1.0)).unwrap();
    s.insert("b", rand_tensor(&mut rng, 1, 4, 0.5)).unwrap();
    s.insert("table", rand_tensor(&mut rng, 6, 3, 1.0)).unwrap();
    init_attention(&mut s, "mha", 4, &mut rng).unwrap();
    init_gru(&mut s, "gru", 3, 2, &mut rng).unwrap();
    s.insert("gru.b_x", rand_tensor(&mut rng, 1, 6, 0.3)).unwrap();
    s
}

fn composite_loss<'g>(g: &'g Graph<f64>, s: &ParameterStore<f64>) -> kgalign_tensor::Result<kgalign_tensor::Var<'g, f64>> {
    let x = g.param(s, "x")?;
    let h = x.matmul(g.param(s, "w")?)?.add_row(g.param(s, "b")?)?;
    let gate = h.sigmoid();
    let layout = Rc::new(AttnLayout::from_lengths(&[2, 3], 2));
    let block = attention_block(g, s, "mha", h.tanh(), layout, Some(gate))?;
    let csr = Rc::new(Csr::from_triplets(
        5,
        5,
        vec![(0, 1, 1.0), (1, 0, 1.0), (2, 4, 0.5), (4, 2, 0.5), (3, 3, -1.0)],
    ));
    let mixed = sparse_matmul(csr, block.y)?;
    let idx: Rc<[usize]> = Rc::from(vec![4, 0, 0, 2]);
    let picked = mixed.gather_rows(idx)?;
    let left = picked.slice_cols(0, 2)?;
    let right = picked.slice_cols(2, 2)?;
    let cat = concat_cols(&[right, left])?;
    let stacked = concat_rows(&[cat, picked.scale(-0.5)])?;
    let norms = stacked.row_norm().sum();
    let cos = stacked.slice_cols(0, 2)?.row_cosine(stacked.slice_cols(2, 2)?)?.sum();

    let table = g.param(s, "table")?;
    let seqs = vec![vec![1, 2, 5], vec![3], vec![0, 4]];
    let states = gru_final_states(g, s, "gru", table, &seqs)?;
    let h0 = g.constant(Tensor::zeros(&[3, 2]));
    let extra = gru_cell(
        table.gather_rows(Rc::from(vec![2, 2, 1]))?.matmul(g.param(s, "gru.w_ih")?)?.add_row(g.param(s, "gru.b_x")?)?,
        states.add(h0)?,
        g.param(s, "gru.w_hh")?,
        g.param(s, "gru.b_hh")?,
        Rc::from(vec![true, false, true]),
    )?;
    let gru_term = extra.sub(states.scale(0.3))?.relu().add_scalar(0.1).sum();
    norms.add(cos)?.add(gru_term)
}

#[test]
fn every_operation_passes_gradient_check() {
    for seed in 0..5 {
        let store = composite_store(seed);
        let report = grad_check(&store, composite_loss, 1e-5, seed).unwrap();
        assert!(report.max_rel_error <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn backward_requires_scalar_loss() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2, 2]));
    assert_eq!(g.backward(x).err(), Some(TensorError::NonScalarLoss(vec![2, 2])));
}

#[test]
fn constants_receive_no_gradient() {
    let mut store = ParameterStore::<f64>::new();
    store.insert("w", Tensor::from_rows(&[vec![2.0]])).unwrap();
    let g = Graph::new();
    let c = g.constant(Tensor::from_rows(&[vec![3.0]]));
    let w = g.param(&store, "w").unwrap();
    let loss = c.mul(w).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(w).unwrap().data(), &[3.0]);
}

#[test]
fn repeated_forward_is_bitwise_identical() {
    let store = composite_store(9);
    let a = composite_loss(&Graph::new(), &store).unwrap().value().data()[0];
    let b = composite_loss(&Graph::new(), &store).unwrap().value().data()[0];
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn f32_forward_tracks_f64() {
    let store = composite_store(2);
    let mut s32 = ParameterStore::<f32>::new();
    for (name, p) in store.iter() {
        s32.insert(name, p.value.cast()).unwrap();
    }
    let g = Graph::new();
    let x = g.param(&s32, "x").unwrap();
    let y = x.matmul(g.param(&s32, "w").unwrap()).unwrap().tanh().sum();
    let g64 = Graph::new();
    let y64 = g64
        .param(&store, "x")
        .unwrap()
        .matmul(g64.param(&store, "w").unwrap())
        .unwrap()
        .tanh()
        .sum();
    assert!((y.value().data()[0] as f64 - y64.value().data()[0]).abs() < 1e-4);
}

#[test]
fn peak_bytes_counts_activations() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[10, 10]));
    let _ = x.tanh();
    assert!(g.peak_bytes() >= 2 * 100 * 8);
}
