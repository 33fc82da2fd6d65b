use super::*;
use crate::dataset::{Context, ItemSet, PrepStats, Vocabulary};
use ndarray::array;
use rand::Rng;

fn chacha(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn uniform_noise(n: usize) -> NoiseDistribution {
    NoiseDistribution::from_probabilities(vec![1.0 / n as f64; n]).unwrap()
}

/// K=1 model over two items producing S = [w3_0, w3_1] for intra context {0}.
fn scalar_params(w3_0: f64, w3_1: f64) -> ModelParams {
    ModelParams {
        variant: Variant::Ate,
        k: 1,
        n_items: 2,
        window: 1,
        w1: array![[1.0, 1.0]],
        w_a: array![0.0],
        w_beta: array![[0.0]],
        w2: Array2::zeros((2, 1)),
        w3: array![[w3_0], [w3_1]],
        w_fc: None,
    }
}

fn scalar_instance(target: u32) -> TrainingInstance {
    TrainingInstance {
        context: Context {
            intra: ItemSet::new([1 - target]),
            inter: Vec::new(),
        },
        target,
    }
}

#[test]
fn nce_loss_vanishes_in_the_separated_limit() {
    // Target score +30, noise score -30: both classifier terms saturate.
    let params = scalar_params(-30.0, 30.0);
    let loss = nce_loss(&params, &scalar_instance(1), &[0], &uniform_noise(2)).unwrap();
    assert!(loss >= 0.0);
    assert!(loss < 1e-12, "loss {loss}");
}

#[test]
fn nce_loss_matches_two_log_two_at_zero_margin() {
    // Scores ln(0.5) make delta = S - ln(k * p) = 0 for k=1, p=0.5.
    let half = 0.5f64.ln();
    let params = scalar_params(half, half);
    let loss = nce_loss(&params, &scalar_instance(1), &[0], &uniform_noise(2)).unwrap();
    assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((loss - 1.386294).abs() < 1e-6);
}

#[test]
fn nce_loss_rejects_empty_noise() {
    let params = scalar_params(0.0, 0.0);
    assert!(matches!(
        nce_loss(&params, &scalar_instance(1), &[], &uniform_noise(2)).unwrap_err(),
        Error::Config(_)
    ));
}

#[test]
fn config_rejects_zero_nce_k_and_zero_epochs() {
    let config = TrainConfig {
        nce_k: 0,
        ..TrainConfig::default()
    };
    assert!(config.validate().is_err());
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(config.validate().is_err());
    TrainConfig::default().validate().unwrap();
}

#[test]
fn increasing_the_target_score_decreases_the_loss() {
    let mut rng = chacha(21);
    for _ in 0..20 {
        let params = ModelParams::init(Variant::Hate, 3, 8, 2, &mut rng).unwrap();
        let instance = TrainingInstance {
            context: Context {
                intra: ItemSet::new([0, 2]),
                inter: vec![ItemSet::new([3]), ItemSet::new([4, 5])],
            },
            target: 1,
        };
        let noise = uniform_noise(8);
        let samples = [6u32, 7u32];
        let base = nce_loss(&params, &instance, &samples, &noise).unwrap();
        let mut boosted = params.clone();
        let e_ia = crate::model::forward(&params, &instance.context, ScoreRequest::Subset(&[1]))
            .unwrap()
            .e_ia;
        boosted
            .w3
            .row_mut(1)
            .scaled_add(0.5, &e_ia);
        let after = nce_loss(&boosted, &instance, &samples, &noise).unwrap();
        assert!(after < base, "after {after} vs base {base}");
    }
}

fn central_difference(
    params: &ModelParams,
    instance: &TrainingInstance,
    samples: &[u32],
    noise: &NoiseDistribution,
    poke: impl Fn(&mut ModelParams, f64),
) -> f64 {
    let h = 1e-6;
    let mut plus = params.clone();
    poke(&mut plus, h);
    let mut minus = params.clone();
    poke(&mut minus, -h);
    let lp = nce_loss(&plus, instance, samples, noise).unwrap();
    let lm = nce_loss(&minus, instance, samples, noise).unwrap();
    (lp - lm) / (2.0 * h)
}

fn assert_close(analytic: f64, numeric: f64) {
    if (analytic - numeric).abs() <= 1e-8 {
        return;
    }
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
    assert!(rel <= 1e-4, "analytic {analytic} vs numeric {numeric} (rel {rel})");
}

#[test]
fn backward_spot_checks_against_finite_differences() {
    let mut rng = chacha(33);
    let params = ModelParams::init(Variant::Hate, 2, 6, 2, &mut rng).unwrap();
    let instance = TrainingInstance {
        context: Context {
            intra: ItemSet::new([0, 1]),
            inter: vec![ItemSet::new([2]), ItemSet::new([1, 3])],
        },
        target: 0,
    };
    let noise = uniform_noise(6);
    let samples = [2u32, 5u32];
    let trace = forward_sampled(&params, &instance, &samples).unwrap();
    let grads = backward(&params, &trace, &instance, &samples, &noise).unwrap();

    let fd = |poke: &dyn Fn(&mut ModelParams, f64)| {
        central_difference(&params, &instance, &samples, &noise, poke)
    };

    assert_close(grads.w_a[0], fd(&|p, h| p.w_a[0] += h));
    assert_close(grads.w_a[1], fd(&|p, h| p.w_a[1] += h));
    assert_close(grads.w1_cols[&1][0], fd(&|p, h| p.w1[[0, 1]] += h));
    assert_close(grads.w1_cols[&3][1], fd(&|p, h| p.w1[[1, 3]] += h));
    assert_close(
        grads.w_beta.as_ref().unwrap()[[0, 1]],
        fd(&|p, h| p.w_beta[[0, 1]] += h),
    );
    assert_close(grads.w2_rows[&0][1], fd(&|p, h| p.w2[[0, 1]] += h));
    assert_close(grads.w3_rows[&5][0], fd(&|p, h| p.w3[[5, 0]] += h));
}

#[test]
fn backward_hte_routes_through_the_linear_map() {
    let mut rng = chacha(34);
    let params = ModelParams::init(Variant::Hte, 2, 6, 2, &mut rng).unwrap();
    let instance = TrainingInstance {
        context: Context {
            intra: ItemSet::new([0, 4]),
            inter: vec![ItemSet::new([2, 3]), ItemSet::new([1])],
        },
        target: 5,
    };
    let noise = uniform_noise(6);
    let samples = [0u32];
    let trace = forward_sampled(&params, &instance, &samples).unwrap();
    let grads = backward(&params, &trace, &instance, &samples, &noise).unwrap();
    assert!(grads.w_beta.is_none());
    let fc = grads.w_fc.as_ref().unwrap();
    let fd = |poke: &dyn Fn(&mut ModelParams, f64)| {
        central_difference(&params, &instance, &samples, &noise, poke)
    };
    assert_close(fc[[0, 1]], fd(&|p, h| p.w_fc.as_mut().unwrap()[[0, 1]] += h));
    assert_close(fc[[1, 3]], fd(&|p, h| p.w_fc.as_mut().unwrap()[[1, 3]] += h));
    assert_close(grads.w1_cols[&2][0], fd(&|p, h| p.w1[[0, 2]] += h));
}

#[test]
fn backward_touches_only_sampled_output_rows() {
    let mut rng = chacha(35);
    let params = ModelParams::init(Variant::Hate, 3, 10, 2, &mut rng).unwrap();
    let instance = TrainingInstance {
        context: Context {
            intra: ItemSet::new([1, 2]),
            inter: vec![ItemSet::new([3]), ItemSet::new([4])],
        },
        target: 0,
    };
    let noise = uniform_noise(10);
    let samples = [5u32, 6u32];
    let trace = forward_sampled(&params, &instance, &samples).unwrap();
    let grads = backward(&params, &trace, &instance, &samples, &noise).unwrap();
    let sampled: Vec<u32> = vec![0, 5, 6];
    assert_eq!(grads.w2_rows.keys().copied().collect::<Vec<_>>(), sampled);
    assert_eq!(grads.w3_rows.keys().copied().collect::<Vec<_>>(), sampled);
    // Embedding columns only for context items.
    assert_eq!(grads.w1_cols.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
}

#[test]
fn backward_ate_detaches_inter_parameters() {
    let mut rng = chacha(36);
    let params = ModelParams::init(Variant::Ate, 3, 10, 2, &mut rng).unwrap();
    let instance = TrainingInstance {
        context: Context {
            intra: ItemSet::new([1, 2]),
            inter: Vec::new(),
        },
        target: 0,
    };
    let noise = uniform_noise(10);
    let samples = [5u32];
    let trace = forward_sampled(&params, &instance, &samples).unwrap();
    let grads = backward(&params, &trace, &instance, &samples, &noise).unwrap();
    assert!(grads.w2_rows.is_empty());
    assert!(grads.w_beta.is_none());
    assert!(grads.w_fc.is_none());
    assert!(!grads.w3_rows.is_empty());
}

#[test]
fn adagrad_first_step_moves_by_the_learning_rate() {
    // g=3, lr=0.5, eps=0: update magnitude lr * g / sqrt(g^2) = 0.5.
    let mut params = scalar_params(1.0, 1.0);
    let mut state = OptimizerState::new(&params);
    let mut grads = Gradients::new(1);
    grads.w3_rows.insert(0, array![3.0]);
    adagrad_step(&mut params, &mut state, &grads, 0.5, 0.0).unwrap();
    assert!((params.w3[[0, 0]] - 0.5).abs() < 1e-15);
    assert_eq!(state.w3[[0, 0]], 9.0);
}

#[test]
fn adagrad_zero_gradient_is_a_no_op() {
    let mut params = scalar_params(1.0, 2.0);
    let mut state = OptimizerState::new(&params);
    let before = params.clone();
    let mut grads = Gradients::new(1);
    grads.w3_rows.insert(0, array![0.0]);
    adagrad_step(&mut params, &mut state, &grads, 0.5, 0.0).unwrap();
    assert_eq!(params, before);
    assert_eq!(state.w3[[0, 0]], 0.0);
}

#[test]
fn adagrad_two_unit_steps_follow_the_recurrence() {
    // Two steps of g=1 at lr=1, eps=0 move by 1 + 1/sqrt(2) in total.
    let mut params = scalar_params(0.0, 0.0);
    let mut state = OptimizerState::new(&params);
    let mut grads = Gradients::new(1);
    grads.w3_rows.insert(0, array![1.0]);
    adagrad_step(&mut params, &mut state, &grads, 1.0, 0.0).unwrap();
    adagrad_step(&mut params, &mut state, &grads, 1.0, 0.0).unwrap();
    let expected = -(1.0 + 1.0 / 2.0f64.sqrt());
    assert!((params.w3[[0, 0]] - expected).abs() < 1e-15);
}

#[test]
fn adagrad_rejects_non_finite_gradients() {
    let mut params = scalar_params(0.0, 0.0);
    let mut state = OptimizerState::new(&params);
    let before = params.clone();
    let mut grads = Gradients::new(1);
    grads.w3_rows.insert(0, array![f64::NAN]);
    assert!(matches!(
        adagrad_step(&mut params, &mut state, &grads, 0.5, 1e-8).unwrap_err(),
        Error::NonFinite { .. }
    ));
    assert_eq!(params, before);
}

fn random_gradients(params: &ModelParams, rng: &mut ChaCha20Rng) -> Gradients {
    let k = params.k;
    let mut grads = Gradients::new(k);
    for _ in 0..3 {
        let col = rng.gen_range(0..params.n_items as u32);
        grads
            .w1_cols
            .entry(col)
            .or_insert_with(|| Array1::zeros(k))
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-1.0..1.0));
        let row = rng.gen_range(0..params.n_items as u32);
        grads
            .w3_rows
            .entry(row)
            .or_insert_with(|| Array1::zeros(k))
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-1.0..1.0));
    }
    grads.w_a.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    grads.w_beta = Some(Array2::from_shape_fn((k, k), |_| rng.gen_range(-1.0..1.0)));
    grads
}

#[test]
fn adagrad_accumulators_never_decrease() {
    let mut rng = chacha(40);
    let mut params = ModelParams::init(Variant::Hate, 3, 6, 2, &mut rng).unwrap();
    let mut state = OptimizerState::new(&params);
    let mut previous = state.clone();
    for _ in 0..10 {
        let grads = random_gradients(&params, &mut rng);
        adagrad_step(&mut params, &mut state, &grads, 0.5, 1e-8).unwrap();
        assert!(state
            .w1
            .iter()
            .zip(previous.w1.iter())
            .all(|(now, before)| now >= before));
        assert!(state
            .w_a
            .iter()
            .zip(previous.w_a.iter())
            .all(|(now, before)| now >= before));
        assert!(params.w1.iter().all(|v| v.is_finite()));
        previous = state.clone();
    }
}

/// Dense oracle: applies the update formula to every entry of zero-padded
/// full-size gradient matrices.
fn dense_adagrad(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    grads: &Gradients,
    lr: f64,
    eps: f64,
) {
    let mut w1_dense = Array2::zeros(params.w1.dim());
    for (&col, g) in &grads.w1_cols {
        w1_dense.column_mut(col as usize).assign(g);
    }
    let mut w2_dense = Array2::zeros(params.w2.dim());
    for (&row, g) in &grads.w2_rows {
        w2_dense.row_mut(row as usize).assign(g);
    }
    let mut w3_dense = Array2::zeros(params.w3.dim());
    for (&row, g) in &grads.w3_rows {
        w3_dense.row_mut(row as usize).assign(g);
    }
    let beta_dense = grads
        .w_beta
        .clone()
        .unwrap_or_else(|| Array2::zeros(params.w_beta.dim()));

    let apply2 = |theta: &mut Array2<f64>, acc: &mut Array2<f64>, g: &Array2<f64>| {
        for ((t, a), &gv) in theta.iter_mut().zip(acc.iter_mut()).zip(g.iter()) {
            *a += gv * gv;
            *t -= lr * gv / (a.sqrt() + eps);
        }
    };
    apply2(&mut params.w1, &mut state.w1, &w1_dense);
    for ((t, a), &gv) in params
        .w_a
        .iter_mut()
        .zip(state.w_a.iter_mut())
        .zip(grads.w_a.iter())
    {
        *a += gv * gv;
        *t -= lr * gv / (a.sqrt() + eps);
    }
    apply2(&mut params.w_beta, &mut state.w_beta, &beta_dense);
    apply2(&mut params.w2, &mut state.w2, &w2_dense);
    apply2(&mut params.w3, &mut state.w3, &w3_dense);
}

#[test]
fn sparse_step_matches_dense_zero_padded_step() {
    let mut rng = chacha(41);
    let base = ModelParams::init(Variant::Hate, 3, 6, 2, &mut rng).unwrap();
    let mut sparse_params = base.clone();
    let mut sparse_state = OptimizerState::new(&base);
    let mut dense_params = base.clone();
    let mut dense_state = OptimizerState::new(&base);
    for _ in 0..5 {
        let grads = random_gradients(&base, &mut rng);
        adagrad_step(&mut sparse_params, &mut sparse_state, &grads, 0.5, 1e-8).unwrap();
        dense_adagrad(&mut dense_params, &mut dense_state, &grads, 0.5, 1e-8);
    }
    for (a, b) in sparse_params.w1.iter().zip(dense_params.w1.iter()) {
        assert!((a - b).abs() <= 1e-15);
    }
    for (a, b) in sparse_params.w3.iter().zip(dense_params.w3.iter()) {
        assert!((a - b).abs() <= 1e-15);
    }
    for (a, b) in sparse_state.w1.iter().zip(dense_state.w1.iter()) {
        assert!((a - b).abs() <= 1e-15);
    }
}

#[test]
fn full_softmax_loss_trivial_cases() {
    let one_item = ModelParams {
        variant: Variant::Ate,
        k: 1,
        n_items: 1,
        window: 1,
        w1: array![[1.0]],
        w_a: array![0.0],
        w_beta: array![[0.0]],
        w2: array![[0.0]],
        w3: array![[0.0]],
        w_fc: None,
    };
    let instance = TrainingInstance {
        context: Context {
            intra: ItemSet::new([0]),
            inter: Vec::new(),
        },
        target: 0,
    };
    assert_eq!(full_softmax_loss(&one_item, &instance).unwrap(), 0.0);

    let four = ModelParams {
        variant: Variant::Ate,
        k: 1,
        n_items: 4,
        window: 1,
        w1: array![[1.0, 1.0, 1.0, 1.0]],
        w_a: array![0.0],
        w_beta: array![[0.0]],
        w2: Array2::zeros((4, 1)),
        w3: Array2::zeros((4, 1)),
        w_fc: None,
    };
    let loss = full_softmax_loss(&four, &instance).unwrap();
    assert!((loss - 4.0f64.ln()).abs() < 1e-12);
}

#[test]
fn full_softmax_loss_matches_scalar_evaluation() {
    // Scores [0, ln 3], target item 1: -ln(0.75).
    let params = scalar_params(0.0, 3.0f64.ln());
    let loss = full_softmax_loss(&params, &scalar_instance(1)).unwrap();
    assert!((loss + 0.75f64.ln()).abs() < 1e-12);
    assert!((loss - 0.28768).abs() < 1e-5);
}

#[test]
fn full_softmax_loss_agrees_with_predict_distribution() {
    let mut rng = chacha(50);
    for _ in 0..100 {
        let params = ModelParams::init(Variant::Hate, 3, 9, 2, &mut rng).unwrap();
        let instance = TrainingInstance {
            context: Context {
                intra: ItemSet::new([rng.gen_range(0..4), 4]),
                inter: vec![ItemSet::new([5]), ItemSet::new([6, 7])],
            },
            target: rng.gen_range(0..9),
        };
        let direct = full_softmax_loss(&params, &instance).unwrap();
        let p = crate::model::predict_distribution(&params, &instance.context).unwrap();
        let via_distribution = -p[instance.target as usize].ln();
        assert!((direct - via_distribution).abs() <= 1e-12);
    }
}

fn tiny_dataset(seed: u64) -> SplitDataset {
    let mut rng = chacha(seed);
    let vocab = Vocabulary::from_ids((0..10).map(|i| format!("item{i}")));
    let make_instance = |rng: &mut ChaCha20Rng| {
        let target = rng.gen_range(0..10u32);
        let intra = ItemSet::new((0..2).map(|_| rng.gen_range(0..10u32)).chain([
            (target + 1) % 10,
        ]));
        let intra = ItemSet::new(intra.iter().filter(|&i| i != target));
        let inter = vec![
            ItemSet::new([rng.gen_range(0..10u32)]),
            ItemSet::new([rng.gen_range(0..10u32), rng.gen_range(0..10u32)]),
        ];
        TrainingInstance {
            context: Context { intra, inter },
            target,
        }
    };
    let train: Vec<TrainingInstance> = (0..40).map(|_| make_instance(&mut rng)).collect();
    let test: Vec<TrainingInstance> = (0..10).map(|_| make_instance(&mut rng)).collect();
    SplitDataset {
        train,
        test,
        vocab,
        window: 2,
        seed,
        stats: PrepStats::default(),
    }
}

#[test]
fn train_is_deterministic_and_checkpoints_roundtrip() {
    let dataset = tiny_dataset(7);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 8,
        dim: 4,
        nce_k: 3,
        ..TrainConfig::default()
    };
    let (ckpt_a, log_a) = train(&dataset, &config).unwrap();
    let (ckpt_b, log_b) = train(&dataset, &config).unwrap();
    assert_eq!(ckpt_a, ckpt_b);
    assert_eq!(
        log_a.iter().map(|l| l.mean_loss).collect::<Vec<_>>(),
        log_b.iter().map(|l| l.mean_loss).collect::<Vec<_>>()
    );

    let dir = tempfile::tempdir().unwrap();
    let path_a = dir.path().join("a.hate");
    let path_b = dir.path().join("b.hate");
    save_checkpoint(&ckpt_a, &path_a).unwrap();
    save_checkpoint(&ckpt_b, &path_b).unwrap();
    let bytes_a = std::fs::read(&path_a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&path_b).unwrap());

    let loaded = load_checkpoint(&path_a).unwrap();
    assert_eq!(loaded, ckpt_a);
    let path_c = dir.path().join("c.hate");
    save_checkpoint(&loaded, &path_c).unwrap();
    assert_eq!(bytes_a, std::fs::read(&path_c).unwrap());
}

#[test]
fn train_rejects_bad_config_and_empty_split() {
    let dataset = tiny_dataset(8);
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(train(&dataset, &config).is_err());

    let mut empty = dataset.clone();
    empty.train.clear();
    assert!(train(&empty, &TrainConfig::default()).is_err());
}

#[test]
fn train_all_variants_produce_finite_parameters() {
    let dataset = tiny_dataset(9);
    for variant in [Variant::Hate, Variant::Ate, Variant::Hte] {
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            dim: 4,
            nce_k: 3,
            variant,
            ..TrainConfig::default()
        };
        let (ckpt, log) = train(&dataset, &config).unwrap();
        ckpt.params.validate().unwrap();
        assert_eq!(log.len(), 2);
        assert!(log.iter().all(|l| l.mean_loss.is_finite()));
    }
}

#[test]
fn checkpoint_rejects_bad_magic_version_and_truncation() {
    let dataset = tiny_dataset(10);
    let config = TrainConfig {
        epochs: 1,
        batch_size: 8,
        dim: 3,
        nce_k: 2,
        ..TrainConfig::default()
    };
    let (ckpt, _) = train(&dataset, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.hate");
    save_checkpoint(&ckpt, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let bad_magic = dir.path().join("bad.hate");
    std::fs::write(&bad_magic, b"XXXX rest").unwrap();
    assert!(matches!(
        load_checkpoint(&bad_magic).unwrap_err(),
        Error::BadMagic { .. }
    ));

    let version0 = dir.path().join("v0.hate");
    let mut v0_bytes = bytes.clone();
    v0_bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
    std::fs::write(&version0, &v0_bytes).unwrap();
    match load_checkpoint(&version0).unwrap_err() {
        Error::UnsupportedVersion { found, supported, .. } => {
            assert_eq!(found, 0);
            assert_eq!(supported, "1");
        }
        other => panic!("expected version error, got {other:?}"),
    }

    let truncated = dir.path().join("trunc.hate");
    std::fs::write(&truncated, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(
        load_checkpoint(&truncated).unwrap_err(),
        Error::Corrupt { .. }
    ));
}
