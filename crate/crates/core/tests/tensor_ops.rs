use crossfusion::tensor::{finite_diff_check, GradCheckOptions, Graph, Mode, ParamStore, Tensor, Var};
use crossfusion::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Projects `y` onto fixed pseudo-random weights so no output coordinate has
/// a structurally zero gradient.
fn weighted_sum(g: &mut Graph<'_>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = rand_tensor(&mut rng, &shape);
    let w = g.input(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

// ---------- oracles (independent loops) ----------

fn oracle_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn oracle_conv2d(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    cin: usize,
    cout: usize,
    groups: usize,
    h: usize,
    wd: usize,
    k: usize,
) -> Vec<f64> {
    let cig = cin / groups;
    let cog = cout / groups;
    let p = (k / 2) as i64;
    let mut out = vec![0.0; cout * h * wd];
    for o in 0..cout {
        for y in 0..h as i64 {
            for xx in 0..wd as i64 {
                let mut acc = 0.0;
                for cl in 0..cig {
                    let ci = (o / cog) * cig + cl;
                    for dy in 0..k as i64 {
                        for dx in 0..k as i64 {
                            let (iy, ix) = (y + dy - p, xx + dx - p);
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                continue;
                            }
                            acc += w[((o * cig + cl) * k + dy as usize) * k + dx as usize]
                                * x[(ci * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(o * h + y as usize) * wd + xx as usize] = acc + b[o];
            }
        }
    }
    out
}

fn oracle_conv3d(x: &[f64], w: &[f64], bias: f64, d: usize, h: usize, wd: usize, k: usize) -> Vec<f64> {
    let p = (k / 2) as i64;
    let mut out = vec![0.0; d * h * wd];
    for z in 0..d as i64 {
        for y in 0..h as i64 {
            for xx in 0..wd as i64 {
                let mut acc = 0.0;
                for c in 0..3usize {
                    for a in 0..k as i64 {
                        for b in 0..k as i64 {
                            for e in 0..k as i64 {
                                let (iz, iy, ix) = (z + a - p, y + b - p, xx + e - p);
                                if iz < 0 || iy < 0 || ix < 0 || iz >= d as i64 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                let wi = ((c * k + a as usize) * k + b as usize) * k + e as usize;
                                let xi = ((c * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                acc += w[wi] * x[xi];
                            }
                        }
                    }
                }
                out[((z as usize) * h + y as usize) * wd + xx as usize] = acc + bias;
            }
        }
    }
    out
}

// ---------- matmul ----------

#[test]
fn matmul_examples() {
    let mut g = Graph::new(Mode::Eval);
    let i2 = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let a = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.input(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let id = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(id).data(), &[1.0, 2.0, 3.0, 4.0]);
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);

    let x = g.input(Tensor::zeros([1, 3]));
    let y = g.input(Tensor::zeros([4, 2]));
    let err = g.matmul(x, y).unwrap_err();
    match err {
        Error::Dimension { detail, .. } => {
            assert!(detail.contains("[1, 3]") && detail.contains("[4, 2]"), "{detail}");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn batched_matmul_matches_per_batch_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[3, 4, 5]);
    let b = rand_tensor(&mut rng, &[5, 2]);
    let mut g = Graph::new(Mode::Eval);
    let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    assert_eq!(g.shape(c), &[3, 4, 2]);
    for i in 0..3 {
        let want = oracle_matmul(&a.data()[i * 20..(i + 1) * 20], b.data(), 4, 5, 2);
        assert_eq!(&g.value(c).data()[i * 8..(i + 1) * 8], want.as_slice());
    }
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let a = store.add("a", rand_tensor(&mut rng, &[2, 3, 4]));
    let b = store.add("b", rand_tensor(&mut rng, &[4, 5]));
    let rep = finite_diff_check(
        &mut store,
        |g| {
            let (a, b) = (g.param(a)?, g.param(b)?);
            let c = g.matmul(a, b)?;
            Ok(weighted_sum(g, c, 1))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

// ---------- softmax ----------

#[test]
fn softmax_examples() {
    let mut g = Graph::new(Mode::Eval);
    let cases: [(&[f64], &[f64]); 3] = [
        (&[0.0, 0.0], &[0.5, 0.5]),
        (&[std::f64::consts::LN_2, 0.0], &[2.0 / 3.0, 1.0 / 3.0]),
        (&[1000.0, 1000.0], &[0.5, 0.5]),
    ];
    for (x, want) in cases {
        let v = g.input(t(&[2], x));
        let s = g.softmax(v).unwrap();
        for (a, b) in g.value(s).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{x:?}: {a} vs {b}");
        }
    }
}

// ---------- layer norm ----------

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new(Mode::Eval);
    let ones3 = g.input(Tensor::full([3], 1.0));
    let zeros3 = g.input(Tensor::zeros([3]));
    let x = g.input(t(&[3], &[1.0, 1.0, 1.0]));
    let y = g.layer_norm(x, ones3, zeros3, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

    let x = g.input(t(&[2], &[0.0, 2.0]));
    let (one, zero) = (g.input(Tensor::full([2], 1.0)), g.input(Tensor::zeros([2])));
    let y = g.layer_norm(x, one, zero, 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[-1.0, 1.0]);

    let (two, three) = (g.input(Tensor::full([2], 2.0)), g.input(Tensor::full([2], 3.0)));
    let y = g.layer_norm(x, two, three, 1e-12).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-9 && (d[1] - 5.0).abs() < 1e-9, "{d:?}");

    let bad = g.input(Tensor::zeros([3]));
    assert!(matches!(g.layer_norm(x, bad, zero, 1e-5), Err(Error::Dimension { .. })));
}

// ---------- elementwise ----------

#[test]
fn activation_examples() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.input(t(&[3], &[0.0, 3f64.ln(), -2.0]));
    let s = g.sigmoid(x);
    let s = g.value(s).data().to_vec();
    assert_eq!(s[0], 0.5);
    assert!((s[1] - 0.75).abs() < 1e-15);
    let ge = g.gelu(x);
    assert_eq!(g.value(ge).data()[0], 0.0);
    // tanh-approximation reference value for x = -2
    let want = 0.5 * -2.0 * (1.0 + (0.7978845608028654f64 * (-2.0 + 0.044715 * -8.0)).tanh());
    assert_eq!(g.value(ge).data()[2], want);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&mut rng, &[3, 4]));
    let gamma = store.add("gamma", rand_tensor(&mut rng, &[4]));
    let beta = store.add("beta", rand_tensor(&mut rng, &[4]));
    let rep = finite_diff_check(
        &mut store,
        |g| {
            let x = g.param(x)?;
            let (ga, be) = (g.param(gamma)?, g.param(beta)?);
            let ln = g.layer_norm(x, ga, be, 1e-5)?;
            let ge = g.gelu(ln);
            let sm = g.softmax(ge)?;
            let sg = g.sigmoid(x);
            let prod = g.mul(sm, sg)?;
            let row = g.slice_rows(x, 0, 1)?;
            let ar = g.add_row(prod, row)?;
            let tr = g.transpose(ar)?;
            let pm = g.permute(tr, &[1, 0])?;
            let r = g.reshape(pm, &[2, 6])?;
            let cat = g.concat_rows(&[r, r])?;
            let pos = g.sigmoid(cat);
            let l = g.log(pos);
            let cp = g.cumprod(pos)?;
            let both = g.add(l, cp)?;
            Ok(weighted_sum(g, both, 2))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-4, "{rep:?}");
}

// ---------- convolutions ----------

#[test]
fn conv2d_examples() {
    let mut g = Graph::new(Mode::Eval);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = g.input(rand_tensor(&mut rng, &[1, 3, 3]));
    let zw = g.input(Tensor::zeros([1, 1, 3, 3]));
    let zb = g.input(Tensor::zeros([1]));
    let y = g.conv2d(x, zw, zb, 1).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));

    let mut delta = Tensor::zeros([1, 1, 3, 3]);
    delta.data_mut()[4] = 1.0;
    let dw = g.input(delta);
    let y = g.conv2d(x, dw, zb, 1).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let x = g.input(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let ones = g.input(Tensor::full([1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, ones, zb, 1).unwrap();
    assert_eq!(g.value(y).data(), &[10.0, 10.0, 10.0, 10.0]);

    let x3 = g.input(Tensor::zeros([3, 2, 2]));
    let w = g.input(Tensor::zeros([2, 1, 3, 3]));
    let b = g.input(Tensor::zeros([2]));
    assert!(matches!(g.conv2d(x3, w, b, 2), Err(Error::Config(_))));
}

#[test]
fn conv3d_examples_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[3, 2, 4, 4]);
    let mut g = Graph::new(Mode::Eval);
    let vx = g.input(x.clone());
    let zw = g.input(Tensor::zeros([1, 3, 3, 3, 3]));
    let zb = g.input(Tensor::zeros([1]));
    let y = g.conv3d(vx, zw, zb).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 4, 4]);
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));

    let pw = g.input(Tensor::full([1, 3, 1, 1, 1], 1.0));
    let y = g.conv3d(vx, pw, zb).unwrap();
    let n = 2 * 4 * 4;
    for i in 0..n {
        let want = x.data()[i] + x.data()[n + i] + x.data()[2 * n + i];
        assert_eq!(g.value(y).data()[i], want);
    }

    let w = rand_tensor(&mut rng, &[1, 3, 3, 3, 3]);
    let vw = g.input(w.clone());
    let b = g.input(t(&[1], &[0.25]));
    let y = g.conv3d(vx, vw, b).unwrap();
    let want = oracle_conv3d(x.data(), w.data(), 0.25, 2, 4, 4, 3);
    assert_eq!(g.value(y).data(), want.as_slice());
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&mut rng, &[4, 3, 5]));
    let dw = store.add("dw", rand_tensor(&mut rng, &[4, 1, 3, 3]));
    let db = store.add("db", rand_tensor(&mut rng, &[4]));
    let gw = store.add("gw", rand_tensor(&mut rng, &[2, 2, 5, 5]));
    let gb = store.add("gb", rand_tensor(&mut rng, &[2]));
    let x3 = store.add("x3", rand_tensor(&mut rng, &[3, 2, 3, 3]));
    let w3 = store.add("w3", rand_tensor(&mut rng, &[1, 3, 3, 3, 3]));
    let b3 = store.add("b3", rand_tensor(&mut rng, &[1]));
    let rep = finite_diff_check(
        &mut store,
        |g| {
            let xv = g.param(x)?;
            let (w, b) = (g.param(dw)?, g.param(db)?);
            let depthwise = g.conv2d(xv, w, b, 4)?;
            let (w, b) = (g.param(gw)?, g.param(gb)?);
            let grouped = g.conv2d(depthwise, w, b, 2)?;
            let l1 = weighted_sum(g, grouped, 3);
            let (xv, w, b) = (g.param(x3)?, g.param(w3)?, g.param(b3)?);
            let fused = g.conv3d(xv, w, b)?;
            let l2 = weighted_sum(g, fused, 4);
            g.add(l1, l2)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-4, "{rep:?}");
}

// ---------- backward ----------

#[test]
fn backward_examples() {
    let mut g = Graph::new(Mode::Eval);
    let x = g.leaf(Tensor::full([2, 3], 0.7), true);
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 6]);

    let mut g = Graph::new(Mode::Eval);
    let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    assert_eq!(g.backward(s).unwrap().get(x).unwrap(), &[2.0, 4.0]);
    assert!(matches!(g.backward(sq), Err(Error::Contract(_))));
}

#[test]
fn parameter_grads_accumulate_across_backward_calls() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[2], &[1.0, 2.0]));
    for _ in 0..2 {
        let grads = {
            let mut g = Graph::with_params(&store, Mode::Eval);
            let v = g.param(p).unwrap();
            let sq = g.mul(v, v).unwrap();
            let s = g.sum(sq);
            g.backward(s).unwrap()
        };
        store.accumulate(&grads).unwrap();
    }
    assert_eq!(store.get(p).grad().unwrap(), &[4.0, 8.0]);
    store.zero_grad();
    assert_eq!(store.get(p).grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn sum_of_squares_gradcheck_is_tight() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[4], &[0.5, -1.5, 2.0, 3.0]));
    let rep = finite_diff_check(
        &mut store,
        |g| {
            let v = g.param(p)?;
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-8, "{rep:?}");
    assert_eq!(rep.coords_checked, 4);
}

#[test]
fn corrupted_backward_rule_is_detected() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[3], &[0.1, -0.4, 0.9]));
    let rep = finite_diff_check(
        &mut store,
        |g| {
            g.corrupt_backward(crossfusion::tensor::OpKind::Gelu);
            let v = g.param(p)?;
            let y = g.gelu(v);
            Ok(g.sum(y))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(rep.max_rel_error > 0.1, "{rep:?}");
}

#[test]
fn dropout_is_identity_in_eval_and_seeded_in_train() {
    let x = Tensor::full([64], 1.0);
    let mut g = Graph::new(Mode::Eval).with_dropout_seed(1);
    let v = g.input(x.clone());
    assert_eq!(g.dropout(v, 0.5).unwrap(), v);

    let run = || {
        let mut g = Graph::new(Mode::Train).with_dropout_seed(42);
        let v = g.input(x.clone());
        let d = g.dropout(v, 0.5).unwrap();
        g.value(d).data().to_vec()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.iter().all(|v| *v == 0.0 || *v == 2.0));
    assert!(a.contains(&0.0) && a.contains(&2.0));
}

// ---------- properties ----------

fn small_shape() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=8, 1usize..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one((r, c) in small_shape(), seed in any::<u64>(), scale in 0.1f64..500.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[r, c]);
        let mut g = Graph::new(Mode::Eval);
        let v = g.input(x);
        let v = g.scale(v, scale);
        let s = g.softmax(v).unwrap();
        for row in g.value(s).data().chunks(c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardizes((r, c) in (1usize..=8, 2usize..=8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[r, c]);
        let mut g = Graph::new(Mode::Eval);
        let v = g.input(x);
        let (one, zero) = (g.input(Tensor::full([c], 1.0)), g.input(Tensor::zeros([c])));
        let y = g.layer_norm(v, one, zero, 1e-12).unwrap();
        for row in g.value(y).data().chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn grouped_conv2d_equals_loop_oracle(
        groups in 1usize..=3, cin_per in 1usize..=2, cout_per in 1usize..=2,
        h in 1usize..=6, w in 1usize..=6, k in prop::sample::select(vec![1usize, 3, 5, 7]),
        seed in any::<u64>(),
    ) {
        let (cin, cout) = (groups * cin_per, groups * cout_per);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[cin, h, w]);
        let wt = rand_tensor(&mut rng, &[cout, cin_per, k, k]);
        let b = rand_tensor(&mut rng, &[cout]);
        let want = oracle_conv2d(x.data(), wt.data(), b.data(), cin, cout, groups, h, w, k);
        let mut g = Graph::new(Mode::Eval);
        let (vx, vw, vb) = (g.input(x), g.input(wt), g.input(b));
        let y = g.conv2d(vx, vw, vb, groups).unwrap();
        prop_assert_eq!(g.value(y).data(), want.as_slice());
    }

    #[test]
    fn differentiable_ops_pass_gradcheck((r, c) in (1usize..=5, 2usize..=6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = store.add("x", rand_tensor(&mut rng, &[r, c]));
        let w = store.add("w", rand_tensor(&mut rng, &[3, c]));
        let b = store.add("b", rand_tensor(&mut rng, &[3]));
        let gm = store.add("gamma", rand_tensor(&mut rng, &[3]));
        let bt = store.add("beta", rand_tensor(&mut rng, &[3]));
        let rep = finite_diff_check(&mut store, |g| {
            let xv = g.param(x)?;
            let (wv, bv) = (g.param(w)?, g.param(b)?);
            let l = g.linear(xv, wv, Some(bv))?;
            let (gv, be) = (g.param(gm)?, g.param(bt)?);
            let n = g.layer_norm(l, gv, be, 1e-5)?;
            let a = g.gelu(n);
            let s = g.softmax(a)?;
            Ok(weighted_sum(g, s, seed))
        }, &GradCheckOptions::default()).unwrap();
        prop_assert!(rep.max_rel_error < 1e-4, "{:?}", rep);
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rand_tensor(&mut rng, &[3, 4]);
        let grad_of = |ca: f64, cb: f64| {
            let mut g = Graph::new(Mode::Eval);
            let x = g.leaf(x0.clone(), true);
            let s = g.softmax(x).unwrap();
            let l1 = weighted_sum(&mut g, s, 1);
            let ge = g.gelu(x);
            let l2 = weighted_sum(&mut g, ge, 2);
            let l1 = g.scale(l1, ca);
            let l2 = g.scale(l2, cb);
            let tot = g.add(l1, l2).unwrap();
            g.backward(tot).unwrap().get(x).unwrap().to_vec()
        };
        let combined = grad_of(a, b);
        let (g1, g2) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0));
        for i in 0..combined.len() {
            prop_assert!((combined[i] - (a * g1[i] + b * g2[i])).abs() < 1e-9);
        }
    }
}
