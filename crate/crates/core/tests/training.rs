mod common;

use common::{central_differences, dot, flatten, jsb, random_vec, rel_err, rng};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor_rnn::data::{to_batches, Sequence};
use tensor_rnn::metrics::evaluate;
use tensor_rnn::model::{Dropout, DropoutPlacement, GruModel, ModelSpec};
use tensor_rnn::train::{
    clip_global_norm, fit, grid_search, search, train_batch, AdamState, CellStatus, DatasetTrainer, TrainConfig,
};
use tensor_rnn::{Kind, NOTES};

fn small_spec(kind: Kind) -> ModelSpec {
    let ranks = match kind {
        Kind::Dense => vec![],
        Kind::Cp => vec![3],
        Kind::Tucker => vec![2, 2, 2],
        Kind::Tt => vec![1, 2, 2, 1],
    };
    ModelSpec {
        kind,
        input_size: 8,
        hidden_size: 12,
        m_dims: vec![2, 3, 2],
        n_dims: vec![2, 2, 2],
        ranks,
        leaky_slope: 0.01,
    }
}

fn random_binary(r: &mut impl Rng, len: usize, density: f64) -> Vec<Vec<f64>> {
    (0..len)
        .map(|_| {
            (0..NOTES)
                .map(|_| f64::from(u8::from(r.random_bool(density))))
                .collect()
        })
        .collect()
}

fn perturb_biases(model: &mut GruModel, seed: u64) {
    let mut r = rng(seed);
    for s in model.params_mut() {
        for v in s.iter_mut() {
            *v += r.random_range(-0.05..0.05);
        }
    }
}

fn bptt_check(kind: Kind, placement: Option<DropoutPlacement>) {
    let spec = small_spec(kind);
    let mut model = GruModel::init(&spec, 17).unwrap();
    perturb_biases(&mut model, 18);
    let mut r = rng(19);
    let inputs = random_binary(&mut r, 10, 0.1);
    let targets = random_binary(&mut r, 10, 0.1);
    let dropout = || placement.map(|p| Dropout::new(0.3, p, ChaCha8Rng::seed_from_u64(5)).unwrap());

    let mut grad = model.zeros_like();
    model
        .loss_and_grad(&inputs, &targets, dropout().as_mut(), 1.0, &mut grad)
        .unwrap();
    let analytic = flatten(grad.params());

    let loss = |m: &GruModel| {
        let mut scratch = m.zeros_like();
        m.loss_and_grad(&inputs, &targets, dropout().as_mut(), 1.0, &mut scratch)
            .unwrap()
    };
    let numeric = central_differences(
        &model,
        1e-5,
        |m| m.params().iter().map(|s| s.len()).collect(),
        |m, s, i, h| m.params_mut()[s][i] += h,
        loss,
    );
    assert_eq!(analytic.len(), numeric.len());
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "{kind} {placement:?}: worst relative error {worst}");
}

#[test]
fn ten_step_backprop_matches_finite_differences() {
    for kind in [Kind::Dense, Kind::Cp, Kind::Tucker, Kind::Tt] {
        bptt_check(kind, None);
    }
}

#[test]
fn backprop_with_dropout_matches_finite_differences() {
    bptt_check(Kind::Tt, Some(DropoutPlacement::CellInput));
    bptt_check(Kind::Cp, Some(DropoutPlacement::HiddenOutput));
}

#[test]
fn gradient_scale_multiplies_gradients() {
    let spec = small_spec(Kind::Tucker);
    let model = GruModel::init(&spec, 2).unwrap();
    let mut r = rng(3);
    let (x, y) = (random_binary(&mut r, 6, 0.2), random_binary(&mut r, 6, 0.2));
    let mut g1 = model.zeros_like();
    let mut g2 = model.zeros_like();
    let l1 = model.loss_and_grad(&x, &y, None, 1.0, &mut g1).unwrap();
    let l2 = model.loss_and_grad(&x, &y, None, 0.25, &mut g2).unwrap();
    assert_eq!(l1, l2);
    for (a, b) in flatten(g1.params()).iter().zip(flatten(g2.params())) {
        assert!((0.25 * a - b).abs() <= 1e-15 * a.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn clipping_caps_the_norm_and_keeps_direction(seed in 0u64..10_000, scale in 0.01f64..100.0, threshold in 0.1f64..10.0) {
        let mut r = rng(seed);
        let sizes = [r.random_range(1..20), r.random_range(1..20), r.random_range(1..20)];
        let original: Vec<Vec<f64>> = sizes.iter().map(|&n| random_vec(&mut r, n).into_iter().map(|v| v * scale).collect()).collect();
        let mut clipped = original.clone();
        let mut views: Vec<&mut [f64]> = clipped.iter_mut().map(Vec::as_mut_slice).collect();
        let norm = clip_global_norm(&mut views, threshold).unwrap();

        let a = flatten(original.iter().map(Vec::as_slice).collect());
        let b = flatten(clipped.iter().map(Vec::as_slice).collect());
        let before = dot(&a, &a).sqrt();
        let after = dot(&b, &b).sqrt();
        prop_assert!((norm - before).abs() <= 1e-12 * before.max(1.0));
        prop_assert!(after <= threshold + 1e-9);
        prop_assert!((after - before.min(threshold)).abs() <= 1e-12 * before.max(1.0));
        if before > threshold {
            let cosine = dot(&a, &b) / (before * after);
            prop_assert!((cosine - 1.0).abs() <= 1e-12);
        } else {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn adam_first_step_ignores_gradient_scale(seed in 0u64..10_000, factor in 0.5f64..1000.0) {
        let mut r = rng(seed);
        let n = r.random_range(1..50);
        let start = random_vec(&mut r, n);
        let g: Vec<f64> = random_vec(&mut r, n).into_iter().map(|v| v + v.signum()).collect();
        let scaled: Vec<f64> = g.iter().map(|v| v * factor).collect();
        let mut p1 = start.clone();
        let mut p2 = start.clone();
        AdamState::new(1e-3, [n]).update(&mut [&mut p1], &[&g]).unwrap();
        AdamState::new(1e-3, [n]).update(&mut [&mut p2], &[&scaled]).unwrap();
        for k in 0..n {
            let (d1, d2) = (p1[k] - start[k], p2[k] - start[k]);
            prop_assert!((d1 - d2).abs() <= 1e-6 * d1.abs());
        }
    }
}

fn subset(split: &[Sequence], n: usize, max_len: usize) -> Vec<Sequence> {
    split
        .iter()
        .take(n)
        .map(|s| s.iter().take(max_len).cloned().collect())
        .collect()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rates: vec![5e-3],
        dropouts: vec![0.2],
        max_epochs: epochs,
        batch_size: 4,
        seed: 42,
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_is_bit_reproducible() {
    let data = jsb();
    let train = subset(&data.train, 12, 30);
    let valid = subset(&data.valid, 4, 30);
    for kind in [Kind::Cp, Kind::Tt] {
        let run = || fit(&small_spec(kind), &train, &valid, &quick_cfg(1), 5e-3, 0.2).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
        assert_eq!(a.train_nll.to_bits(), b.train_nll.to_bits());
    }
}

#[test]
fn grid_of_one_cell_equals_a_single_fit() {
    let mut data = jsb();
    data.train = subset(&data.train, 8, 25);
    data.valid = subset(&data.valid, 4, 25);
    let spec = small_spec(Kind::Tucker);
    let cfg = quick_cfg(2);
    let single = fit(&spec, &data.train, &data.valid, &cfg, 5e-3, 0.2).unwrap();
    let mut trainer = DatasetTrainer {
        spec: &spec,
        data: &data,
        cfg: &cfg,
    };
    let grid = grid_search(&cfg, &mut trainer).unwrap();
    assert_eq!(grid.cells.len(), 1);
    assert_eq!(grid.model, single.model);
    match &grid.cells[0].status {
        CellStatus::Ok {
            valid_nll, train_nll, ..
        } => {
            assert_eq!(*valid_nll, single.valid_nll);
            assert_eq!(*train_nll, single.train_nll);
        }
        other => panic!("cell failed: {other:?}"),
    }
}

#[test]
fn two_cell_grid_on_a_jsb_subset() {
    let mut data = jsb();
    data.truncate_train(50);
    let spec = small_spec(Kind::Cp);
    let cfg = TrainConfig {
        learning_rates: vec![1e-2, 1e-3],
        dropouts: vec![0.2],
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let (model, report) = search(&spec, &data, &cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    let valid: Vec<f64> = report.rows.iter().map(|r| r.valid_nll.unwrap()).collect();
    let winner = report.winner();
    assert!(valid.iter().all(|&v| winner.valid_nll.unwrap() <= v));
    assert!(winner.test_nll.is_some() && winner.test_acc.is_some());
    assert_eq!(report.rows.iter().filter(|r| r.test_nll.is_some()).count(), 1);
    assert_eq!(report.param_count, model.audit().cell_total);
    assert_eq!(winner.test_nll.unwrap(), evaluate(&model, &data.test).unwrap().nll);
    assert!(report.failures.iter().all(Option::is_none));
}

#[test]
fn dense_gru_overfits_ten_sequences() {
    let data = jsb();
    let train: Vec<Sequence> = data.train[..10].to_vec();
    let spec = ModelSpec {
        kind: Kind::Dense,
        input_size: 64,
        hidden_size: 32,
        m_dims: vec![32],
        n_dims: vec![64],
        ranks: vec![],
        leaky_slope: 0.01,
    };
    let mut model = GruModel::init(&spec, 1).unwrap();
    let initial = evaluate(&model, &train).unwrap().nll;
    let sizes: Vec<usize> = model.params().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(1e-2, sizes);
    let mut best = initial;
    for epoch in 0..500 {
        for batch in to_batches(&train, 1, epoch).unwrap() {
            train_batch(&mut model, &mut adam, &batch, None, 5.0).unwrap();
        }
        best = best.min(evaluate(&model, &train).unwrap().nll);
        if best < 0.05 * initial {
            eprintln!(
                "overfit reached {best:.3} (initial {initial:.3}) after {} epochs",
                epoch + 1
            );
            return;
        }
    }
    panic!("training NLL only fell to {best} from {initial}");
}
