use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::gradcheck::{max_relative_error, numeric_gradient};
use crate::rng::seeded;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn wave(shape: &[usize], phase: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| ((i as f64) * 0.7 + phase).sin())
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

/// Analytic gradients of `build` (which must return a scalar) w.r.t. its
/// leaves, compared with central differences in 64-bit.
fn check_grad(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let numeric = numeric_gradient(
        |probe| {
            let mut g = Graph::new();
            let vars: Vec<Var> = probe.iter().map(|t| g.param(t.clone())).collect();
            let l = build(&mut g, &vars);
            g.value(l).item()
        },
        inputs,
        1e-5,
    );
    max_relative_error(&analytic, &numeric, 1e-6)
}

/// Weighted sum so gradients of a non-scalar output are nontrivial.
fn probe_sum(g: &mut Graph<f64>, y: Var) -> Var {
    let w = wave(g.shape(y), 0.3);
    let c = g.constant(w);
    let p = g.mul(y, c).unwrap();
    g.sum(p)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let b = wave(&[3, 3], 0.0);
    let i = g.constant(Tensor::identity(3));
    let bv = g.constant(b.clone());
    let y = g.matmul(i, bv).unwrap();
    assert_eq!(g.value(y), &b);

    let z = g.constant(Tensor::zeros(&[2, 4]));
    let b45 = g.constant(wave(&[4, 5], 1.0));
    let y = g.matmul(z, b45).unwrap();
    assert_eq!(g.value(y), &Tensor::zeros(&[2, 5]));

    let a = g.constant(t64(&[2, 2], &[1., 2., 3., 4.]));
    let b = g.constant(t64(&[2, 2], &[5., 6., 7., 8.]));
    let y = g.matmul(a, b).unwrap();
    // hand triple loop
    assert_eq!(g.value(y).data(), &[19., 22., 43., 50.]);

    let err = g.matmul(a, b45).unwrap_err();
    assert!(matches!(err, Error::Dimension { ref left, ref right, .. } if left == &[2, 2] && right == &[4, 5]));
}

#[test]
fn matmul_associative_within_tolerance() {
    let mut rng = seeded(5);
    for _ in 0..20 {
        let a = Tensor::<f32>::uniform(&[4, 6], 1.0, &mut rng);
        let b = Tensor::<f32>::uniform(&[6, 3], 1.0, &mut rng);
        let c = Tensor::<f32>::uniform(&[3, 5], 1.0, &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
        for (x, y) in left.data().iter().zip(right.data()) {
            assert!((x - y).abs() / scale < 1e-4);
        }
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::full(&[1, 4], 3.0));
    let y = g.softmax(c);
    close(g.value(y).data(), &[0.25; 4], 1e-12);

    let x = g.constant(t64(&[1, 2], &[0.0, 2f64.ln()]));
    let y = g.softmax(x);
    close(g.value(y).data(), &[1.0 / 3.0, 2.0 / 3.0], 1e-12);

    let base = wave(&[3, 5], 0.2);
    let x = g.constant(base.clone());
    let xs = g.constant(base.map(|v| v + 17.5));
    let (a, b) = (g.softmax(x), g.softmax(xs));
    close(g.value(a).data(), g.value(b).data(), 1e-6);
}

#[test]
fn softmax_rows_sum_to_one_on_wide_range() {
    let mut rng = seeded(11);
    for _ in 0..50 {
        let x = Tensor::<f32>::uniform(&[4, 9], 50.0, &mut rng);
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = g.softmax(v);
        for r in 0..4 {
            let s: f32 = g.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(g.value(y).row(r).iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::<f64>::new();
    let gain = g.constant(Tensor::full(&[4], 1.0));
    let bias = g.constant(Tensor::zeros(&[4]));
    let c = g.constant(Tensor::full(&[1, 4], 2.5));
    let y = g.layer_norm(c, gain, bias, 1e-6).unwrap();
    close(g.value(y).data(), &[0.0; 4], 1e-12);

    let mut rng = seeded(3);
    for _ in 0..20 {
        let x = g.constant(Tensor::uniform(&[3, 4], 5.0, &mut rng));
        let y = g.layer_norm(x, gain, bias, 1e-9).unwrap();
        for r in 0..3 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    // two-pass oracle
    let v = [0.5, -1.25, 3.0, 2.0];
    let mean = v.iter().sum::<f64>() / 4.0;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
    let gains = [1.5, 0.5, -1.0, 2.0];
    let biases = [0.1, 0.2, 0.3, 0.4];
    let expect: Vec<f64> = (0..4)
        .map(|i| gains[i] * (v[i] - mean) / (var + 1e-6).sqrt() + biases[i])
        .collect();
    let x = g.constant(t64(&[1, 4], &v));
    let gv = g.constant(t64(&[4], &gains));
    let bv = g.constant(t64(&[4], &biases));
    let y = g.layer_norm(x, gv, bv, 1e-6).unwrap();
    close(g.value(y).data(), &expect, 1e-6);
}

#[test]
fn backward_examples() {
    let x = wave(&[2, 3], 0.4);
    let mut g = Graph::<f64>::new();
    let xv = g.param(x.clone());
    let sq = g.mul(xv, xv).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    close(grads.get(xv).unwrap().data(), x.map(|v| 2.0 * v).data(), 1e-12);

    let mut g = Graph::<f64>::new();
    let w = g.param(wave(&[3, 2], 0.0));
    let c = g.constant(wave(&[2, 3], 1.0));
    let y = g.matmul(c, w).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert!(grads.contains(w));
    assert!(!grads.contains(c));
    assert_eq!(grads.len(), 1);

    let err = g.backward(y).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn composite_matmul_softmax_cross_entropy_gradient() {
    let x = wave(&[3, 4], 0.1);
    let w = wave(&[4, 5], 0.9).map(|v| 0.5 * v);
    let targets = [1u32, 4, 0];
    let err = check_grad(&[x, w], |g, v| {
        let logits = g.matmul(v[0], v[1]).unwrap();
        let logp = g.log_softmax(logits);
        g.smoothed_nll(logp, &targets, 0.0).unwrap()
    });
    assert!(err < 1e-4, "relative error {err}");

    // explicit softmax → log route
    let x = wave(&[2, 3], 0.5);
    let w = wave(&[3, 4], 0.2);
    let err = check_grad(&[x, w], |g, v| {
        let logits = g.matmul(v[0], v[1]).unwrap();
        let p = g.softmax(logits);
        probe_sum(g, p)
    });
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn reused_value_accumulates_both_paths() {
    let x = wave(&[2, 2], 0.3);
    let err = check_grad(&[x], |g, v| {
        let a = g.tanh(v[0]);
        let b = g.matmul(v[0], a).unwrap();
        let c = g.add(b, v[0]).unwrap();
        probe_sum(g, c)
    });
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn gradient_check_every_primitive_random_shapes() {
    let mut rng = seeded(2024);
    for trial in 0..12u64 {
        let m = 1 + (trial as usize * 3) % 8;
        let n = 1 + (trial as usize * 5 + 2) % 8;
        let k = 1 + (trial as usize * 7 + 1) % 8;
        let a = Tensor::<f64>::uniform(&[m, k], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[k, n], 1.0, &mut rng);
        let c = Tensor::<f64>::uniform(&[m, n], 1.0, &mut rng);
        let bt = Tensor::<f64>::uniform(&[n, k], 1.0, &mut rng);
        let row = Tensor::<f64>::uniform(&[n], 1.0, &mut rng);
        let tol = 1e-4;

        let checks: Vec<(&str, f64)> = vec![
            (
                "matmul",
                check_grad(&[a.clone(), b.clone()], |g, v| {
                    let y = g.matmul(v[0], v[1]).unwrap();
                    probe_sum(g, y)
                }),
            ),
            (
                "matmul_bt",
                check_grad(&[a.clone(), bt.clone()], |g, v| {
                    let y = g.matmul_bt(v[0], v[1]).unwrap();
                    probe_sum(g, y)
                }),
            ),
            (
                "add_sub_mul",
                check_grad(&[c.clone(), c.map(|v| v * 0.5 + 0.1)], |g, v| {
                    let s = g.add(v[0], v[1]).unwrap();
                    let d = g.sub(v[0], v[1]).unwrap();
                    let y = g.mul(s, d).unwrap();
                    probe_sum(g, y)
                }),
            ),
            (
                "add_row_scale",
                check_grad(&[c.clone(), row.clone()], |g, v| {
                    let y = g.add_row(v[0], v[1]).unwrap();
                    let y = g.scale(y, 1.7);
                    probe_sum(g, y)
                }),
            ),
            (
                "tanh_sigmoid",
                check_grad(core::slice::from_ref(&c), |g, v| {
                    let t = g.tanh(v[0]);
                    let s = g.sigmoid(t);
                    probe_sum(g, s)
                }),
            ),
            (
                "relu",
                check_grad(&[c.map(|v| if v.abs() < 0.05 { 0.3 } else { v })], |g, v| {
                    let y = g.relu(v[0]);
                    probe_sum(g, y)
                }),
            ),
            (
                "softmax",
                check_grad(core::slice::from_ref(&c), |g, v| {
                    let y = g.softmax(v[0]);
                    probe_sum(g, y)
                }),
            ),
            (
                "log_softmax",
                check_grad(core::slice::from_ref(&c), |g, v| {
                    let y = g.log_softmax(v[0]);
                    probe_sum(g, y)
                }),
            ),
            (
                "layer_norm",
                check_grad(&[c.map(|v| 2.0 * v), row.clone(), row.map(|v| -v)], |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                    probe_sum(g, y)
                }),
            ),
            (
                "gather",
                check_grad(core::slice::from_ref(&b), |g, v| {
                    let ids: Vec<u32> = (0..m).map(|i| (i % k) as u32).collect();
                    let y = g.gather(v[0], &ids).unwrap();
                    probe_sum(g, y)
                }),
            ),
            (
                "concat_slice",
                check_grad(&[a.clone(), c.clone()], |g, v| {
                    let y = g.concat_cols(&[v[0], v[1]]).unwrap();
                    let y = g.slice_cols(y, 1.min(k), k + n).unwrap();
                    let y = g.transpose(y).unwrap();
                    let z = g.concat_rows(&[y, y]).unwrap();
                    let rows = g.value(z).rows();
                    let z = g.slice_rows(z, 1, rows).unwrap();
                    probe_sum(g, z)
                }),
            ),
            (
                "unfold",
                check_grad(core::slice::from_ref(&a), |g, v| {
                    let y = g.unfold(v[0], 3, 2, 1).unwrap();
                    probe_sum(g, y)
                }),
            ),
            (
                "smoothed_nll",
                check_grad(core::slice::from_ref(&c), |g, v| {
                    let lp = g.log_softmax(v[0]);
                    let t: Vec<u32> = (0..m).map(|i| (i % n) as u32).collect();
                    g.smoothed_nll(lp, &t, 0.1).unwrap()
                }),
            ),
            ("lstm_cell", {
                let hidden = 1 + trial as usize % 3;
                let x = Tensor::<f64>::uniform(&[1, k], 1.0, &mut rng);
                let h = Tensor::<f64>::uniform(&[1, hidden], 1.0, &mut rng);
                let cc = Tensor::<f64>::uniform(&[1, hidden], 1.0, &mut rng);
                let wx = Tensor::<f64>::uniform(&[k, 4 * hidden], 1.0, &mut rng);
                let wh = Tensor::<f64>::uniform(&[hidden, 4 * hidden], 1.0, &mut rng);
                let bb = Tensor::<f64>::uniform(&[4 * hidden], 1.0, &mut rng);
                check_grad(&[x, h, cc, wx, wh, bb], |g, v| {
                    let w = LstmWeights {
                        w_x: v[3],
                        w_h: v[4],
                        b: v[5],
                    };
                    let (h, c) = lstm_cell(g, v[0], v[1], v[2], &w).unwrap();
                    let both = g.concat_cols(&[h, c]).unwrap();
                    probe_sum(g, both)
                })
            }),
            ("conv1d_glu", {
                let s = 1 + trial as usize % 4;
                let x = Tensor::<f64>::uniform(&[m, s], 1.0, &mut rng);
                let w = Tensor::<f64>::uniform(&[2 * s, 3 * s], 1.0, &mut rng);
                let bb = Tensor::<f64>::uniform(&[2 * s], 1.0, &mut rng);
                check_grad(&[x, w, bb], |g, v| {
                    let y = conv1d(g, v[0], v[1], v[2], 3, Padding::Causal).unwrap();
                    let y = glu(g, y).unwrap();
                    probe_sum(g, y)
                })
            }),
            ("attention", {
                let dk = 1 + trial as usize % 4;
                let q = Tensor::<f64>::uniform(&[m, 2 * dk], 1.0, &mut rng);
                let kk = Tensor::<f64>::uniform(&[n, 2 * dk], 1.0, &mut rng);
                let ws: Vec<Tensor<f64>> = (0..4)
                    .map(|_| Tensor::<f64>::uniform(&[2 * dk, 2 * dk], 1.0, &mut rng))
                    .collect();
                check_grad(
                    &[q, kk, ws[0].clone(), ws[1].clone(), ws[2].clone(), ws[3].clone()],
                    |g, v| {
                        let w = MultiHeadWeights {
                            w_q: v[2],
                            w_k: v[3],
                            w_v: v[4],
                            w_o: v[5],
                        };
                        let y = multi_head_attention(g, v[0], v[1], v[1], &w, 2, None).unwrap();
                        probe_sum(g, y)
                    },
                )
            }),
        ];
        for (name, err) in checks {
            assert!(err < tol, "{name} trial {trial}: relative error {err}");
        }
    }
}

#[test]
fn lstm_cell_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t64(&[1, 3], &[0.3, -0.2, 0.9]));
    let zeros_h = g.constant(Tensor::zeros(&[1, 2]));
    let w = LstmWeights {
        w_x: g.constant(Tensor::zeros(&[3, 8])),
        w_h: g.constant(Tensor::zeros(&[2, 8])),
        b: g.constant(Tensor::zeros(&[8])),
    };
    let (h, _) = lstm_cell(&mut g, x, zeros_h, zeros_h, &w).unwrap();
    close(g.value(h).data(), &[0.0, 0.0], 0.0);

    // forget gate saturated open: c ≈ c_prev + i ⊙ candidate
    let wx = wave(&[3, 8], 0.0).map(|v| 0.3 * v);
    let wh = wave(&[2, 8], 1.0).map(|v| 0.3 * v);
    let mut b = vec![0.1; 8];
    b[2] = 50.0;
    b[3] = 50.0;
    let hp = t64(&[1, 2], &[0.2, -0.4]);
    let cp = t64(&[1, 2], &[0.7, -1.1]);
    let wv = LstmWeights {
        w_x: g.constant(wx.clone()),
        w_h: g.constant(wh.clone()),
        b: g.constant(t64(&[8], &b)),
    };
    let hv = g.constant(hp.clone());
    let cv = g.constant(cp.clone());
    let (h, c) = lstm_cell(&mut g, x, hv, cv, &wv).unwrap();

    // hand evaluation of the gate equations
    let xs = [0.3, -0.2, 0.9];
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let pre = |col: usize| -> f64 {
        let mut z = b[col];
        for j in 0..3 {
            z += xs[j] * wx.at(j, col);
        }
        for j in 0..2 {
            z += hp.data()[j] * wh.at(j, col);
        }
        z
    };
    for u in 0..2 {
        let i = sig(pre(u));
        let f = sig(pre(2 + u));
        let cand = pre(4 + u).tanh();
        let o = sig(pre(6 + u));
        let c_new = f * cp.data()[u] + i * cand;
        assert!((g.value(c).data()[u] - c_new).abs() < 1e-6);
        assert!((g.value(h).data()[u] - o * c_new.tanh()).abs() < 1e-6);
        assert!((g.value(c).data()[u] - (cp.data()[u] + i * cand)).abs() < 1e-6);
    }

    let bad = g.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(
        lstm_cell(&mut g, x, bad, bad, &wv),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn conv1d_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(wave(&[4, 2], 0.0));
    let zk = g.constant(Tensor::zeros(&[4, 6]));
    let zb = g.constant(Tensor::zeros(&[4]));
    let y = conv1d(&mut g, x, zk, zb, 3, Padding::Symmetric).unwrap();
    assert_eq!(g.value(y), &Tensor::zeros(&[4, 4]));

    // k = 1 is a per-position linear map
    let w1 = wave(&[4, 2], 0.5);
    let b1 = wave(&[4], 2.0);
    let (wv, bv) = (g.constant(w1.clone()), g.constant(b1.clone()));
    let y = conv1d(&mut g, x, wv, bv, 1, Padding::Symmetric).unwrap();
    let xt = g.value(x).clone();
    for t in 0..4 {
        for o in 0..4 {
            let e: f64 = b1.data()[o] + (0..2).map(|c| xt.at(t, c) * w1.at(o, c)).sum::<f64>();
            assert!((g.value(y).at(t, o) - e).abs() < 1e-12);
        }
    }

    // k = 3 vs explicit sliding windows
    let w3 = wave(&[4, 6], 1.3);
    let b3 = wave(&[4], 0.7);
    let (wv, bv) = (g.constant(w3.clone()), g.constant(b3.clone()));
    for (pad, offset) in [(Padding::Symmetric, 1isize), (Padding::Causal, 2)] {
        let y = conv1d(&mut g, x, wv, bv, 3, pad).unwrap();
        assert_eq!(g.shape(y), &[4, 4]);
        for t in 0..4isize {
            for o in 0..4 {
                let mut e = b3.data()[o];
                for j in 0..3isize {
                    let src = t + j - offset;
                    if !(0..4).contains(&src) {
                        continue;
                    }
                    for c in 0..2 {
                        e += xt.at(src as usize, c) * w3.at(o, j as usize * 2 + c);
                    }
                }
                assert!((g.value(y).at(t as usize, o) - e).abs() < 1e-6);
            }
        }
    }

    let w4 = g.constant(Tensor::zeros(&[4, 8]));
    assert!(matches!(
        conv1d(&mut g, x, w4, zb, 4, Padding::Symmetric),
        Err(Error::Contract(_))
    ));
    assert!(conv1d(&mut g, x, w4, zb, 4, Padding::Causal).is_ok());
}

#[test]
fn glu_examples() {
    let mut g = Graph::<f64>::new();
    let y = g.constant(t64(&[1, 4], &[1.0, -2.0, 0.0, 0.0]));
    let v = glu(&mut g, y).unwrap();
    close(g.value(v).data(), &[0.5, -1.0], 1e-12);

    let y = g.constant(t64(&[1, 4], &[1.0, -2.0, 50.0, 50.0]));
    let v = glu(&mut g, y).unwrap();
    close(g.value(v).data(), &[1.0, -2.0], 1e-6);

    let y = g.constant(t64(&[1, 4], &[1.0, 2.0, 3f64.ln(), 0.0]));
    let v = glu(&mut g, y).unwrap();
    close(g.value(v).data(), &[0.75, 1.0], 1e-12);

    let odd = g.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(glu(&mut g, odd), Err(Error::Contract(_))));
}

#[test]
fn positional_encoding_examples() {
    let b = SinusoidBases::default();
    let pe0 = positional_encoding(0, 8, b);
    for (j, v) in pe0.iter().enumerate() {
        assert_eq!(*v, if j % 2 == 0 { 0.0 } else { 1.0 });
    }
    let pe1 = positional_encoding(1, 8, b);
    assert!((pe1[0] - 0.841471).abs() < 1e-6);
    for pos in [0usize, 1, 17, 999, 123_457, 1_000_000] {
        assert!(positional_encoding(pos, 16, b).iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn scaled_dot_attention_examples() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(wave(&[3, 2], 0.0));
    let k1 = g.constant(wave(&[1, 2], 1.0));
    let v1 = g.constant(t64(&[1, 3], &[4.0, -1.0, 2.0]));
    let y = scaled_dot_attention(&mut g, q, k1, v1, None).unwrap();
    for r in 0..3 {
        close(g.value(y).row(r), &[4.0, -1.0, 2.0], 1e-12);
    }

    let k2 = g.constant(t64(&[2, 2], &[0.3, 0.4, 0.3, 0.4]));
    let v2 = g.constant(t64(&[2, 2], &[1.0, 2.0, 3.0, -6.0]));
    let y = scaled_dot_attention(&mut g, q, k2, v2, None).unwrap();
    for r in 0..3 {
        close(g.value(y).row(r), &[2.0, -2.0], 1e-12);
    }

    // 2 queries × 3 keys brute force
    let qd = wave(&[2, 4], 0.1);
    let kd = wave(&[3, 4], 0.8);
    let vd = wave(&[3, 2], 1.9);
    let (qv, kv, vv) = (g.constant(qd.clone()), g.constant(kd.clone()), g.constant(vd.clone()));
    let y = scaled_dot_attention(&mut g, qv, kv, vv, None).unwrap();
    for i in 0..2 {
        let scores: Vec<f64> = (0..3)
            .map(|j| (0..4).map(|c| qd.at(i, c) * kd.at(j, c)).sum::<f64>() / 2.0)
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for c in 0..2 {
            let e: f64 = (0..3).map(|j| scores[j].exp() / z * vd.at(j, c)).sum();
            assert!((g.value(y).at(i, c) - e).abs() < 1e-6);
        }
    }

    let bad = g.constant(Tensor::zeros(&[3, 3]));
    assert!(matches!(
        scaled_dot_attention(&mut g, q, bad, bad, None),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn multi_head_attention_examples() {
    let mut g = Graph::<f64>::new();
    let qd = wave(&[2, 4], 0.0);
    let kd = wave(&[3, 4], 0.6);
    let q = g.constant(qd.clone());
    let k = g.constant(kd.clone());
    let eye = g.constant(Tensor::identity(4));
    let w = MultiHeadWeights {
        w_q: eye,
        w_k: eye,
        w_v: eye,
        w_o: eye,
    };
    let y = multi_head_attention(&mut g, q, k, k, &w, 1, None).unwrap();
    let r = scaled_dot_attention(&mut g, q, k, k, None).unwrap();
    assert_eq!(g.value(y), g.value(r));
    assert_eq!(g.shape(y), &[2, 4]);

    // h=2, d_model=4 brute force
    let wq = wave(&[4, 4], 0.1);
    let wk = wave(&[4, 4], 0.2);
    let wvv = wave(&[4, 4], 0.3);
    let wo = wave(&[4, 4], 0.4);
    let w = MultiHeadWeights {
        w_q: g.constant(wq.clone()),
        w_k: g.constant(wk.clone()),
        w_v: g.constant(wvv.clone()),
        w_o: g.constant(wo.clone()),
    };
    let y = multi_head_attention(&mut g, q, k, k, &w, 2, None).unwrap();
    let proj = |x: &Tensor<f64>, w: &Tensor<f64>, r: usize, col: usize| -> f64 {
        (0..4).map(|c| x.at(r, c) * w.at(c, col)).sum()
    };
    let mut concat = [[0.0f64; 4]; 2];
    for h in 0..2 {
        for i in 0..2 {
            let scores: Vec<f64> = (0..3)
                .map(|j| {
                    (0..2)
                        .map(|d| proj(&qd, &wq, i, h * 2 + d) * proj(&kd, &wk, j, h * 2 + d))
                        .sum::<f64>()
                        / 2f64.sqrt()
                })
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for d in 0..2 {
                concat[i][h * 2 + d] = (0..3)
                    .map(|j| scores[j].exp() / z * proj(&kd, &wvv, j, h * 2 + d))
                    .sum();
            }
        }
    }
    for i in 0..2 {
        for c in 0..4 {
            let e: f64 = (0..4).map(|d| concat[i][d] * wo.at(d, c)).sum();
            assert!((g.value(y).at(i, c) - e).abs() < 1e-6);
        }
    }

    assert!(matches!(
        multi_head_attention(&mut g, q, k, k, &w, 3, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn ffn_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(wave(&[3, 2], 0.0));
    let z23 = g.constant(Tensor::zeros(&[2, 3]));
    let z3 = g.constant(Tensor::zeros(&[3]));
    let z32 = g.constant(Tensor::zeros(&[3, 2]));
    let z2 = g.constant(Tensor::zeros(&[2]));
    let y = ffn(&mut g, x, z23, z3, z32, z2).unwrap();
    assert_eq!(g.value(y), &Tensor::zeros(&[3, 2]));

    let pos = g.constant(t64(&[1, 2], &[1.0, 2.0]));
    let w1 = g.constant(Tensor::full(&[2, 3], 1.0));
    let b1 = g.constant(Tensor::full(&[3], -10.0));
    let w2 = g.constant(wave(&[3, 2], 0.5));
    let b2 = g.constant(t64(&[2], &[0.25, -0.75]));
    let y = ffn(&mut g, pos, w1, b1, w2, b2).unwrap();
    close(g.value(y).data(), &[0.25, -0.75], 0.0);

    // 1 position, d_model=2, d_ff=3 by hand
    let xd = [0.5, -1.5];
    let w1d = wave(&[2, 3], 0.9);
    let b1d = [0.1, -0.2, 0.3];
    let w2d = wave(&[3, 2], 0.4);
    let b2d = [0.05, 0.07];
    let xv = g.constant(t64(&[1, 2], &xd));
    let (w1v, b1v) = (g.constant(w1d.clone()), g.constant(t64(&[3], &b1d)));
    let (w2v, b2v) = (g.constant(w2d.clone()), g.constant(t64(&[2], &b2d)));
    let y = ffn(&mut g, xv, w1v, b1v, w2v, b2v).unwrap();
    let hidden: Vec<f64> = (0..3)
        .map(|j| (xd[0] * w1d.at(0, j) + xd[1] * w1d.at(1, j) + b1d[j]).max(0.0))
        .collect();
    for c in 0..2 {
        let e = b2d[c] + (0..3).map(|j| hidden[j] * w2d.at(j, c)).sum::<f64>();
        assert!((g.value(y).data()[c] - e).abs() < 1e-6);
    }
}

#[test]
fn dropout_is_inverted_and_identity_at_inference() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[50, 40], 1.0));
    assert_eq!(dropout(&mut g, x, 0.3, None).unwrap(), x);
    let mut rng = seeded(1);
    let y = dropout(&mut g, x, 0.3, Some(&mut rng)).unwrap();
    let vals = g.value(y).data();
    assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-6));
    let mean = vals.iter().sum::<f32>() / vals.len() as f32;
    assert!((mean - 1.0).abs() < 0.1);
}

#[test]
fn causal_mask_shape() {
    let m = causal_mask::<f32>(3);
    assert_eq!(m.data(), &[0.0, -1e9, -1e9, 0.0, 0.0, -1e9, 0.0, 0.0, 0.0]);
}
