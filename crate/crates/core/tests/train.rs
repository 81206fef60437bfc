use mstgcn::data::{generate_synthetic, Dataset, Pipeline, StreamKind, SyntheticSpec};
use mstgcn::network::{MstGcn, NetworkConfig};
use mstgcn::tensor::{ParamGroup, ParamStore, Tape, Tensor};
use mstgcn::train::{
    evaluate, fuse_scores, lr_at_epoch, sgd_nesterov_step, topk_accuracy, train_epoch, OptimizerState, TrainConfig,
    TrainState,
};
use mstgcn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Store holding the single scalar parameter `p`.
fn scalar_store(p: f64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    store.register("p", Tensor::scalar(p), ParamGroup::Weight).unwrap();
    store
}

/// Gradient of `a·p²/2` written into the store through the tape.
fn quadratic_grad(store: &mut ParamStore<f64>, a: f64) {
    let id = store.find("p").unwrap();
    let tape = Tape::new();
    let p = tape.param(store, id);
    let loss = tape.scale(&tape.mul(&p, &p).unwrap(), 0.5 * a);
    store.zero_grad();
    tape.backward(&loss, store).unwrap();
}

fn sgd(momentum: f64, weight_decay: f64) -> TrainConfig {
    TrainConfig {
        momentum,
        weight_decay,
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_hits_each_decay_boundary() {
    let cfg = TrainConfig::default();
    let lrs: Vec<f64> = (0..cfg.epochs).map(|e| lr_at_epoch(&cfg, e).unwrap()).collect();
    assert_eq!(lrs[0], 0.1);
    assert_eq!(lrs[49], 0.1);
    assert_eq!(lrs[50], 0.01);
    assert_eq!(lrs[70], 0.001);
    assert_eq!(lrs[90], 0.0001);
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    let distinct: std::collections::BTreeSet<u64> = lrs.iter().map(|v| v.to_bits()).collect();
    assert_eq!(distinct.len(), 4);
}

#[test]
fn nesterov_two_steps_match_hand_recurrence() {
    let (a, mu, wd, lr, p0) = (3.0, 0.9, 0.01, 0.05, 1.5);
    let cfg = sgd(mu, wd);
    let mut store = scalar_store(p0);
    let mut state = OptimizerState::new(&store);
    for _ in 0..2 {
        quadratic_grad(&mut store, a);
        sgd_nesterov_step(&mut store, &mut state, lr, &cfg).unwrap();
    }
    // Unrolled: g'_k = a·p_k + wd·p_k, v_{k+1} = μ v_k + g'_k, p_{k+1} = p_k − lr (g'_k + μ v_{k+1}).
    let g0 = (a + wd) * p0;
    let v1 = g0;
    let p1 = p0 - lr * (g0 + mu * v1);
    let g1 = (a + wd) * p1;
    let v2 = mu * v1 + g1;
    let p2 = p1 - lr * (g1 + mu * v2);
    let id = store.find("p").unwrap();
    assert!((store.value(id).data()[0] - p2).abs() < 1e-15);
    assert!((state.velocity[0].data()[0] - v2).abs() < 1e-15);
    assert_eq!(state.step, 2);
}

#[test]
fn zero_momentum_is_plain_sgd_and_zero_gradient_is_a_fixed_point() {
    let mut store = scalar_store(2.0);
    let mut state = OptimizerState::new(&store);
    quadratic_grad(&mut store, 1.0);
    sgd_nesterov_step(&mut store, &mut state, 0.25, &sgd(0.0, 0.0)).unwrap();
    assert_eq!(store.value(store.find("p").unwrap()).data()[0], 2.0 - 0.25 * 2.0);

    let mut store = scalar_store(0.0);
    let mut state = OptimizerState::new(&store);
    quadratic_grad(&mut store, 1.0);
    sgd_nesterov_step(&mut store, &mut state, 0.25, &sgd(0.9, 0.0)).unwrap();
    assert_eq!(store.value(store.find("p").unwrap()).data()[0], 0.0);
}

#[test]
fn missing_gradient_names_the_parameter() {
    let mut store = scalar_store(1.0);
    let mut state = OptimizerState::new(&store);
    match sgd_nesterov_step(&mut store, &mut state, 0.1, &TrainConfig::default()) {
        Err(Error::Contract(msg)) => assert!(msg.contains("\"p\""), "{msg}"),
        other => panic!("expected contract error, got {other:?}"),
    }
}

fn tiny_config(seed: u64) -> NetworkConfig {
    let mut cfg = NetworkConfig::from_preset("mstgcn-4c-2s".parse().unwrap(), "chain:5".parse().unwrap(), 3, 3);
    cfg.seed = seed;
    cfg
}

fn tiny_data(seed: u64, per_class: usize) -> Dataset {
    generate_synthetic(&SyntheticSpec::new(3, per_class, "chain:5".parse().unwrap(), 16, seed)).unwrap()
}

fn fast_train() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 4,
        decay_epochs: vec![],
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
    let mut net = MstGcn::<f64>::build(&tiny_config(1)).unwrap();
    let before = net.params.flatten();
    let data = tiny_data(2, 3);
    let cfg = TrainConfig {
        lr0: 0.0,
        ..fast_train()
    };
    let mut state = OptimizerState::new(&net.params);
    train_epoch(&mut net, &data, &Pipeline::default(), &cfg, &mut state, 0).unwrap();
    let after = net.params.flatten();
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn one_epoch_lowers_the_loss_on_separable_data() {
    let data = tiny_data(3, 8);
    let mut net = MstGcn::<f32>::build(&tiny_config(4)).unwrap();
    let pipeline = Pipeline::default();
    let before = evaluate(&net, &data, &pipeline, 8).unwrap().metrics.loss;
    let mut state = OptimizerState::new(&net.params);
    let running = train_epoch(&mut net, &data, &pipeline, &fast_train(), &mut state, 0).unwrap().loss;
    let after = evaluate(&net, &data, &pipeline, 8).unwrap().metrics.loss;
    assert!(after < before, "eval loss {before} -> {after}");
    assert!(running.is_finite());
}

#[test]
fn training_is_reproducible_to_the_checkpoint_byte() {
    let data = tiny_data(5, 4);
    let run = || {
        let net = MstGcn::<f32>::build(&tiny_config(9)).unwrap();
        let mut state = TrainState::new(net, fast_train(), Pipeline::default()).unwrap();
        state.fit(&data, None, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        state.net.save_checkpoint(&path).unwrap();
        (std::fs::read(&path).unwrap(), state.history)
    };
    let (a, history_a) = run();
    let (b, history_b) = run();
    assert_eq!(a, b);
    assert_eq!(history_a, history_b);
    assert_eq!(history_a.len(), 4);
}

#[test]
fn evaluation_is_deterministic() {
    let data = tiny_data(6, 3);
    let net = MstGcn::<f64>::build(&tiny_config(2)).unwrap();
    let a = evaluate(&net, &data, &Pipeline::default(), 4).unwrap();
    let b = evaluate(&net, &data, &Pipeline::default(), 4).unwrap();
    assert_eq!(a, b);
    // Batch size only regroups the eval-mode forward; loss sums may round differently.
    let c = evaluate(&net, &data, &Pipeline::default(), 7).unwrap();
    assert_eq!((a.metrics.top1, &a.metrics.confusion), (c.metrics.top1, &c.metrics.confusion));
    assert!((a.metrics.loss - c.metrics.loss).abs() < 1e-12);
    assert!(a.scores.max_abs_diff(&c.scores) < 1e-12);
    for row in a.scores.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn out_of_range_label_is_a_data_error_with_index() {
    let mut data = tiny_data(6, 2);
    data.samples[4].label = 3;
    let mut net = MstGcn::<f64>::build(&tiny_config(2)).unwrap();
    assert!(matches!(evaluate(&net, &data, &Pipeline::default(), 4), Err(Error::Data { index: 4, .. })));
    let mut state = OptimizerState::new(&net.params);
    let err = train_epoch(&mut net, &data, &Pipeline::default(), &fast_train(), &mut state, 0);
    assert!(matches!(err, Err(Error::Data { index: 4, .. })));
}

/// Sort-based oracle: stable descending sort by score keeps lower indices
/// first among ties.
fn topk_oracle(scores: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            order[..k].contains(&label)
        })
        .count();
    hits as f64 / labels.len() as f64
}

#[test]
fn topk_matches_sort_oracle_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let classes = rng.random_range(2..8);
        // Coarse values make ties common.
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..classes).map(|_| rng.random_range(0..4) as f64 / 4.0).collect())
            .collect();
        let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..classes)).collect();
        let scores = Tensor::new(&[20, classes], rows.concat()).unwrap();
        for k in 1..=classes {
            assert_eq!(topk_accuracy(&scores, &labels, k).unwrap(), topk_oracle(&rows, &labels, k), "case {case} k {k}");
        }
        assert_eq!(topk_accuracy(&scores, &labels, classes).unwrap(), 1.0);
    }
}

#[test]
fn uniform_random_logits_score_at_chance() {
    let (n, k) = (2000, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let scores = Tensor::from_fn(&[n, k], |_| rng.random::<f64>());
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let top1 = topk_accuracy(&scores, &labels, 1).unwrap();
    let p = 1.0 / k as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((top1 - p).abs() <= 3.0 * sigma, "top1 {top1}");
}

#[test]
fn fusion_preserves_the_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let softmax = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0f64).exp()).collect();
        let rows: Vec<f64> = raw
            .chunks(5)
            .flat_map(|r| {
                let z: f64 = r.iter().sum();
                r.iter().map(move |v| v / z)
            })
            .collect();
        Tensor::new(&[6, 5], rows).unwrap()
    };
    let mats: Vec<Tensor<f64>> = (0..4).map(|_| softmax(&mut rng)).collect();
    let fused = fuse_scores(&mats).unwrap();
    for row in fused.data().chunks(5) {
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn four_stream_fusion_is_no_worse_than_the_weakest_stream() {
    let train = tiny_data(20, 6);
    let eval = tiny_data(21, 4);
    let mut per_stream = Vec::new();
    for stream in StreamKind::ALL {
        let pipeline = Pipeline {
            stream,
            ..Pipeline::default()
        };
        let net = MstGcn::<f32>::build(&tiny_config(30)).unwrap();
        let mut state = TrainState::new(net, fast_train(), pipeline.clone()).unwrap();
        state.fit(&train, None, |_| {}).unwrap();
        per_stream.push(evaluate(&state.net, &eval, &pipeline, 8).unwrap());
    }
    let labels = &per_stream[0].labels;
    let fused = fuse_scores(&per_stream.iter().map(|e| e.scores.clone()).collect::<Vec<_>>()).unwrap();
    let fused_top1 = topk_accuracy(&fused, labels, 1).unwrap();
    let weakest = per_stream.iter().map(|e| e.metrics.top1).fold(f64::INFINITY, f64::min);
    assert!(fused_top1 >= weakest, "fused {fused_top1} < weakest {weakest}");
}
