use mstgcn::gradcheck::check_gradients;
use mstgcn::tensor::{Mode, ParamGroup, ParamStore, Tape, Tensor, Var};
use mstgcn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn c(t: Tensor<f64>) -> Var<f64> {
    Var::constant(t)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

// ---- graph_contract ------------------------------------------------------

#[test]
fn graph_contract_of_zeros_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::inference();
    let out = tape
        .graph_contract(&c(Tensor::zeros(&[2, 3, 4, 5])), &c(random(&[5, 5], &mut rng)))
        .unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn graph_contract_with_identity_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 3, 4, 5], &mut rng);
    let out = Tape::inference()
        .graph_contract(&c(x.clone()), &c(Tensor::eye(5)))
        .unwrap();
    assert_eq!(out.value(), &x);
}

#[test]
fn graph_contract_swaps_two_joints() {
    let x = Tensor::from_fn(&[2, 2, 3, 2], |i| if i[3] == 0 { 1.0 } else { 2.0 });
    let a = t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]);
    let out = Tape::inference().graph_contract(&c(x), &c(a)).unwrap();
    for pair in out.data().chunks(2) {
        assert_eq!(pair, &[2.0, 1.0]);
    }
}

#[test]
fn graph_contract_rejects_mismatched_adjacency() {
    let err = Tape::<f64>::inference()
        .graph_contract(&c(Tensor::zeros(&[1, 1, 1, 4])), &c(Tensor::zeros(&[3, 3])))
        .unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension { .. }));
    assert!(msg.contains("[1, 1, 1, 4]") && msg.contains("[3, 3]"), "{msg}");
}

// ---- pointwise_conv ------------------------------------------------------

#[test]
fn pointwise_identity_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 4, 5], &mut rng);
    let out = Tape::inference()
        .pointwise_conv(&c(x.clone()), &c(Tensor::eye(3)), Some(&c(Tensor::zeros(&[3]))))
        .unwrap();
    assert_eq!(out.value(), &x);
}

#[test]
fn pointwise_sums_channels() {
    let out = Tape::inference()
        .pointwise_conv(&c(Tensor::ones(&[1, 3, 2, 2])), &c(Tensor::ones(&[1, 3])), None)
        .unwrap();
    assert_eq!(out.shape(), &[1, 1, 2, 2]);
    assert!(out.data().iter().all(|&v| v == 3.0));
}

#[test]
fn pointwise_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 2, 3, 4], &mut rng);
    let w = random(&[2, 2], &mut rng);
    let b = random(&[2], &mut rng);
    let out = Tape::inference()
        .pointwise_conv(&c(x.clone()), &c(w.clone()), Some(&c(b.clone())))
        .unwrap();
    let expected = Tensor::from_fn(&[2, 2, 3, 4], |i| {
        let (n, o, tt, v) = (i[0], i[1], i[2], i[3]);
        b.at(&[o]) + (0..2).map(|k| w.at(&[o, k]) * x.at(&[n, k, tt, v])).sum::<f64>()
    });
    assert!(out.value().max_abs_diff(&expected) < 1e-14);
}

#[test]
fn pointwise_rejects_channel_mismatch() {
    let err = Tape::<f64>::inference()
        .pointwise_conv(&c(Tensor::zeros(&[1, 3, 2, 2])), &c(Tensor::zeros(&[2, 4])), None)
        .unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

// ---- temporal_conv -------------------------------------------------------

#[test]
fn temporal_unit_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 1, 7, 3], &mut rng);
    let out = Tape::inference()
        .temporal_conv(&c(x.clone()), &c(Tensor::ones(&[1, 1, 1])), None, 1)
        .unwrap();
    assert_eq!(out.value(), &x);
}

#[test]
fn temporal_impulse_support() {
    let mut x = Tensor::<f64>::zeros(&[1, 1, 16, 2]);
    x.set(&[0, 0, 5, 0], 1.0);
    x.set(&[0, 0, 5, 1], 1.0);
    let w = Tensor::from_fn(&[1, 1, 9], |i| 0.5 + i[2] as f64);
    let out = Tape::inference().temporal_conv(&c(x), &c(w), None, 1).unwrap();
    for tt in 0..16 {
        for v in 0..2 {
            let nonzero = out.value().at(&[0, 0, tt, v]) != 0.0;
            assert_eq!(nonzero, (1..=9).contains(&tt), "t={tt}");
        }
    }
}

#[test]
fn temporal_stride_two_halves_length() {
    let out = Tape::<f64>::inference()
        .temporal_conv(&c(Tensor::ones(&[1, 2, 8, 3])), &c(Tensor::ones(&[4, 2, 9])), None, 2)
        .unwrap();
    assert_eq!(out.shape(), &[1, 4, 4, 3]);
    let odd = Tape::<f64>::inference()
        .temporal_conv(&c(Tensor::ones(&[1, 2, 7, 3])), &c(Tensor::ones(&[4, 2, 3])), None, 2)
        .unwrap();
    assert_eq!(odd.shape()[2], 4);
}

#[test]
fn temporal_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[2, 3, 9, 2], &mut rng);
    let w = random(&[2, 3, 5], &mut rng);
    for stride in [1, 2] {
        let out = Tape::inference()
            .temporal_conv(&c(x.clone()), &c(w.clone()), None, stride)
            .unwrap();
        let t_out = (9 - 1) / stride + 1;
        let expected = Tensor::from_fn(&[2, 2, t_out, 2], |i| {
            let mut acc = 0.0;
            for ci in 0..3 {
                for k in 0..5 {
                    let src = (i[2] * stride + k) as isize - 2;
                    if (0..9).contains(&src) {
                        acc += w.at(&[i[1], ci, k]) * x.at(&[i[0], ci, src as usize, i[3]]);
                    }
                }
            }
            acc
        });
        assert!(out.value().max_abs_diff(&expected) < 1e-14);
    }
}

#[test]
fn temporal_even_kernel_is_config_error() {
    let err = Tape::<f64>::inference()
        .temporal_conv(&c(Tensor::ones(&[1, 1, 8, 1])), &c(Tensor::ones(&[1, 1, 4])), None, 1)
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

// ---- batch_norm ----------------------------------------------------------

fn bn(x: Tensor<f64>, scale: Tensor<f64>, shift: Tensor<f64>, mode: Mode) -> Tensor<f64> {
    let ch = x.shape()[1];
    let (v, _) = Tape::inference()
        .batch_norm(
            &c(x),
            1,
            &c(scale),
            &c(shift),
            &Tensor::zeros(&[ch]),
            &Tensor::ones(&[ch]),
            mode,
        )
        .unwrap();
    v.value().clone()
}

#[test]
fn batch_norm_standardizes_per_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_fn(&[8, 2, 10, 5], |i| rng.sample::<f64, _>(StandardNormal) * (1.0 + i[1] as f64) + 3.0);
    let y = bn(x, Tensor::ones(&[2]), Tensor::zeros(&[2]), Mode::Train);
    for ch in 0..2 {
        let vals: Vec<f64> = (0..8)
            .flat_map(|n| (0..50).map(move |k| (n, k)))
            .map(|(n, k)| y.data()[(n * 2 + ch) * 50 + k])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn batch_norm_zero_scale_gives_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = bn(random(&[3, 2, 4, 2], &mut rng), Tensor::zeros(&[2]), t(&[2], &[0.25, -1.5]), Mode::Train);
    for (i, &v) in y.data().iter().enumerate() {
        let ch = (i / 8) % 2;
        assert_eq!(v, [0.25, -1.5][ch]);
    }
}

#[test]
fn batch_norm_two_element_hand_case() {
    // one channel, values 1 and 3: mean 2, biased variance 1
    let x = t(&[2, 1, 1, 1], &[1.0, 3.0]);
    let tape = Tape::inference();
    let (y, upd) = tape
        .batch_norm(
            &c(x),
            1,
            &c(Tensor::ones(&[1])),
            &c(Tensor::zeros(&[1])),
            &Tensor::zeros(&[1]),
            &Tensor::ones(&[1]),
            Mode::Train,
        )
        .unwrap();
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y.data()[0] + s).abs() < 1e-15);
    assert!((y.data()[1] - s).abs() < 1e-15);
    let upd = upd.unwrap();
    // running mean 0.9·0 + 0.1·2; running var 0.9·1 + 0.1·2 (unbiased variance of {1,3})
    assert!((upd.mean.data()[0] - 0.2).abs() < 1e-15);
    assert!((upd.var.data()[0] - 1.1).abs() < 1e-15);
}

#[test]
fn batch_norm_eval_with_initial_moments() {
    let x = t(&[1, 1, 1, 2], &[2.0, -4.0]);
    let y = bn(x, Tensor::ones(&[1]), Tensor::zeros(&[1]), Mode::Eval);
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y.data()[0] - 2.0 * s).abs() < 1e-15);
    assert!((y.data()[1] + 4.0 * s).abs() < 1e-15);
}

// ---- softmax / cross entropy --------------------------------------------

#[test]
fn softmax_uniform() {
    let out = Tape::inference().softmax(&c(Tensor::zeros(&[1, 3]))).unwrap();
    for &p in out.data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_closed_form() {
    let tape = Tape::inference();
    let loss = tape
        .cross_entropy(&c(t(&[1, 3], &[1.0, 2.0, 3.0])), &[2])
        .unwrap();
    let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
    assert!((loss.data()[0] - expected).abs() < 1e-15);
}

#[test]
fn cross_entropy_vanishes_with_margin() {
    let tape = Tape::inference();
    let mut last = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 100.0] {
        let loss = tape
            .cross_entropy(&c(t(&[1, 3], &[0.0, margin, 0.0])), &[1])
            .unwrap()
            .data()[0];
        assert!(loss < last);
        last = loss;
    }
    assert!(last < 1e-40);
}

#[test]
fn cross_entropy_label_out_of_range() {
    let err = Tape::<f64>::inference()
        .cross_entropy(&c(Tensor::zeros(&[2, 3])), &[0, 3])
        .unwrap_err();
    assert!(matches!(err, Error::Index(_)));
}

// ---- backward ------------------------------------------------------------

#[test]
fn backward_linear_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[4, 3], &mut rng);
    let mut store = ParamStore::<f64>::new();
    let w = store
        .register("w", random(&[4, 3], &mut rng), ParamGroup::Weight)
        .unwrap();
    let tape = Tape::new();
    let wv = tape.param(&store, w);
    let prod = tape.mul(&wv, &c(x.clone())).unwrap();
    let loss = tape.sum(&prod);
    tape.backward(&loss, &mut store).unwrap();
    assert_eq!(store.grad(w).unwrap(), &x);
}

#[test]
fn backward_unreachable_param_gets_zero() {
    let mut store = ParamStore::<f64>::new();
    let p = store.register("p", Tensor::ones(&[3]), ParamGroup::Weight).unwrap();
    let q = store.register("q", Tensor::ones(&[3]), ParamGroup::Weight).unwrap();
    let tape = Tape::new();
    let _unused = tape.param(&store, p);
    let qv = tape.param(&store, q);
    let loss = tape.sum(&qv);
    tape.backward(&loss, &mut store).unwrap();
    assert!(store.grad(p).unwrap().data().iter().all(|&g| g == 0.0));
    assert!(store.grad(q).unwrap().data().iter().all(|&g| g == 1.0));
}

#[test]
fn backward_needs_scalar_loss() {
    let mut store = ParamStore::<f64>::new();
    let p = store.register("p", Tensor::ones(&[3]), ParamGroup::Weight).unwrap();
    let tape = Tape::new();
    let pv = tape.param(&store, p);
    let err = tape.backward(&pv, &mut store).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn backward_accumulates_without_zeroing() {
    let mut store = ParamStore::<f64>::new();
    let p = store.register("p", t(&[2], &[1.0, 2.0]), ParamGroup::Weight).unwrap();
    for _ in 0..3 {
        let tape = Tape::new();
        let pv = tape.param(&store, p);
        let sq = tape.mul(&pv, &pv).unwrap();
        let loss = tape.sum(&sq);
        tape.backward(&loss, &mut store).unwrap();
    }
    assert_eq!(store.grad(p).unwrap().data(), &[6.0, 12.0]);
}

#[test]
fn backward_of_sum_equals_sum_of_backwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let w = store.register("w", random(&[3, 2], &mut rng), ParamGroup::Weight).unwrap();
    let a = store.register("a", random(&[4, 4], &mut rng), ParamGroup::Mask).unwrap();
    let x = random(&[2, 2, 3, 4], &mut rng);
    let r1 = random(&[2, 3, 3, 4], &mut rng);
    let r2 = random(&[2, 2, 3, 4], &mut rng);

    let part1 = |tape: &Tape<f64>, s: &ParamStore<f64>| {
        let y = tape.pointwise_conv(&c(x.clone()), &tape.param(s, w), None).unwrap();
        let y = tape.relu(&y);
        tape.sum(&tape.mul(&y, &c(r1.clone())).unwrap())
    };
    let part2 = |tape: &Tape<f64>, s: &ParamStore<f64>| {
        let y = tape.graph_contract(&c(x.clone()), &tape.param(s, a)).unwrap();
        tape.sum(&tape.mul(&y, &c(r2.clone())).unwrap())
    };

    let mut joint = store.clone();
    let tape = Tape::new();
    let l1 = part1(&tape, &joint);
    let l2 = part2(&tape, &joint);
    let total = tape.add(&l1, &l2).unwrap();
    tape.backward(&total, &mut joint).unwrap();

    let mut separate = store.clone();
    let tape = Tape::new();
    let l1 = part1(&tape, &separate);
    tape.backward(&l1, &mut separate).unwrap();
    let tape = Tape::new();
    let l2 = part2(&tape, &separate);
    tape.backward(&l2, &mut separate).unwrap();

    for id in [w, a] {
        let d = joint.grad(id).unwrap().max_abs_diff(separate.grad(id).unwrap());
        assert!(d < 1e-12, "{d}");
    }
}

// ---- finite-difference Jacobian checks per op ----------------------------

/// Registers every input as a parameter and checks `sum(op(inputs) ⊙ r)` for a
/// fixed random `r`, which exercises the full vector-Jacobian product.
fn fd_check<O>(inputs: Vec<Tensor<f64>>, seed: u64, op: O)
where
    O: Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64>,
{
    let mut store = ParamStore::<f64>::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.register(format!("in{i}"), t, ParamGroup::Weight).unwrap())
        .collect();
    let probe_shape = {
        let tape = Tape::inference();
        let vars: Vec<_> = ids.iter().map(|&id| tape.param(&store, id)).collect();
        op(&tape, &vars).shape().to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(&probe_shape, &mut rng);
    let report = check_gradients(&store, 1e-5, |tape, s| {
        let vars: Vec<_> = ids.iter().map(|&id| tape.param(s, id)).collect();
        let y = op(tape, &vars);
        Ok(tape.sum(&tape.mul(&y, &c(r.clone()))?))
    })
    .unwrap();
    assert!(
        report.max_rel_error() <= 1e-4,
        "worst {:?}",
        report.worst()
    );
}

#[test]
fn fd_elementwise_and_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 3, 4], &mut rng);
    fd_check(vec![a.clone(), b.clone()], 1, |t, v| t.add(&v[0], &v[1]).unwrap());
    fd_check(vec![a.clone(), b.clone()], 2, |t, v| t.mul(&v[0], &v[1]).unwrap());
    fd_check(vec![a.clone()], 3, |t, v| t.scale(&v[0], -2.5));
    fd_check(vec![a.clone()], 4, |t, v| t.relu(&v[0]));
    fd_check(vec![a.clone()], 5, |t, v| t.reshape(&v[0], &[4, 6]).unwrap());
    fd_check(vec![a.clone()], 6, |t, v| t.permute(&v[0], &[2, 0, 1]).unwrap());
    fd_check(vec![a.clone(), b.clone()], 7, |t, v| t.concat(&[v[0].clone(), v[1].clone()], 1).unwrap());
    fd_check(vec![a.clone()], 8, |t, v| t.narrow(&v[0], 2, 1, 2).unwrap());
    fd_check(vec![a.clone()], 9, |t, v| t.subsample(&v[0], 2, 3).unwrap());
    fd_check(vec![a.clone()], 10, |t, v| t.mean_axis(&v[0], 1).unwrap());
    fd_check(vec![a], 11, |t, v| t.sum(&v[0]));
}

#[test]
fn fd_graph_and_convolution_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[2, 3, 5, 4], &mut rng);
    fd_check(vec![x.clone(), random(&[4, 4], &mut rng)], 20, |t, v| {
        t.graph_contract(&v[0], &v[1]).unwrap()
    });
    fd_check(
        vec![x.clone(), random(&[2, 3], &mut rng), random(&[2], &mut rng)],
        21,
        |t, v| t.pointwise_conv(&v[0], &v[1], Some(&v[2])).unwrap(),
    );
    for stride in [1, 2] {
        fd_check(
            vec![x.clone(), random(&[2, 3, 3], &mut rng), random(&[2], &mut rng)],
            22 + stride as u64,
            move |t, v| t.temporal_conv(&v[0], &v[1], Some(&v[2]), stride).unwrap(),
        );
    }
    fd_check(vec![x], 25, |t, v| t.global_avg_pool(&v[0]).unwrap());
}

#[test]
fn fd_batch_norm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&[3, 2, 4, 3], &mut rng);
    let scale = Tensor::from_fn(&[2], |_| rng.random_range(0.5..1.5));
    let shift = random(&[2], &mut rng);
    let rm = random(&[2], &mut rng);
    let rv = Tensor::from_fn(&[2], |_| rng.random_range(0.5..2.0));
    for mode in [Mode::Train, Mode::Eval] {
        let (rm, rv) = (rm.clone(), rv.clone());
        fd_check(
            vec![x.clone(), scale.clone(), shift.clone()],
            30,
            move |t, v| t.batch_norm(&v[0], 1, &v[1], &v[2], &rm, &rv, mode).unwrap().0,
        );
    }
}

#[test]
fn fd_classifier_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&[3, 4], &mut rng);
    fd_check(
        vec![x.clone(), random(&[5, 4], &mut rng), random(&[5], &mut rng)],
        40,
        |t, v| t.linear(&v[0], &v[1], &v[2]).unwrap(),
    );
    fd_check(vec![x.clone()], 41, |t, v| t.softmax(&v[0]).unwrap());
    fd_check(vec![x], 42, |t, v| t.cross_entropy(&v[0], &[1, 3, 0]).unwrap());
}

// ---- properties ----------------------------------------------------------

fn tensor_strategy(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graph_contract_is_linear(
        x in tensor_strategy(vec![2, 2, 3, 4]),
        y in tensor_strategy(vec![2, 2, 3, 4]),
        a in tensor_strategy(vec![4, 4]),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let tape = Tape::inference();
        let ac = c(a);
        let combo = tape.add(&tape.scale(&c(x.clone()), alpha), &tape.scale(&c(y.clone()), beta)).unwrap();
        let lhs = tape.graph_contract(&combo, &ac).unwrap();
        let fx = tape.graph_contract(&c(x), &ac).unwrap();
        let fy = tape.graph_contract(&c(y), &ac).unwrap();
        let rhs = tape.add(&tape.scale(&fx, alpha), &tape.scale(&fy, beta)).unwrap();
        prop_assert!(lhs.value().max_abs_diff(rhs.value()) <= 1e-12);
    }

    #[test]
    fn pointwise_conv_is_linear(
        x in tensor_strategy(vec![2, 3, 2, 3]),
        y in tensor_strategy(vec![2, 3, 2, 3]),
        w in tensor_strategy(vec![4, 3]),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let tape = Tape::inference();
        let wc = c(w);
        let combo = tape.add(&tape.scale(&c(x.clone()), alpha), &tape.scale(&c(y.clone()), beta)).unwrap();
        let lhs = tape.pointwise_conv(&combo, &wc, None).unwrap();
        let fx = tape.pointwise_conv(&c(x), &wc, None).unwrap();
        let fy = tape.pointwise_conv(&c(y), &wc, None).unwrap();
        let rhs = tape.add(&tape.scale(&fx, alpha), &tape.scale(&fy, beta)).unwrap();
        prop_assert!(lhs.value().max_abs_diff(rhs.value()) <= 1e-12);
    }

    #[test]
    fn softmax_rows_are_simplex_points(x in tensor_strategy(vec![4, 6])) {
        let p = Tape::inference().softmax(&c(x.map(|v| v * 50.0))).unwrap();
        for row in p.data().chunks(6) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}
